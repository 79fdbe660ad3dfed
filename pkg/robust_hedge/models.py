"""Parametric drift models for dY = a(s, Y; alpha) ds + eps dw.

drift/drift_grad take the path prefix up to the current node (last axis is
time) and return the value at that node. The *_along variants take a whole
path and return one value per node; subclasses with Markov drift override
them with a single vectorized call.
"""

import numbers
from collections import OrderedDict

import numpy as np

from robust_hedge.errors import ConfigError


def as_alpha(alpha, m):
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if alpha.shape != (m,):
        raise ConfigError(
            "Parameter must have {} components, got shape {}".format(m, alpha.shape)
        )
    if not np.all(np.isfinite(alpha)):
        raise ConfigError("Parameter must be finite, got {}".format(alpha))
    return alpha


def _shape(s, y):
    return np.broadcast_shapes(np.shape(s), np.shape(y))


class ParamDriftModel:
    def __init__(self, name, m, epsilon, t_end, params=None):
        if isinstance(m, bool) or not isinstance(m, numbers.Integral) or m < 1:
            raise ConfigError("Parameter dimension m must be an integer >= 1")
        if not epsilon > 0:
            raise ConfigError("Noise level epsilon must be positive, got {}".format(epsilon))
        if not t_end > 0:
            raise ConfigError("Horizon t_end must be positive, got {}".format(t_end))
        self.name = name
        self.m = int(m)
        self.epsilon = float(epsilon)
        self.t_end = float(t_end)
        self.params = OrderedDict(params or {})

    def drift(self, s, xs, alpha):
        raise NotImplementedError

    def drift_grad(self, s, xs, alpha):
        raise NotImplementedError

    def drift_along(self, s, xs, alpha):
        xs = np.asarray(xs, dtype=float)
        return np.stack(
            [self.drift(s[j], xs[..., : j + 1], alpha) for j in range(len(s))], axis=-1
        )

    def drift_grad_along(self, s, xs, alpha):
        xs = np.asarray(xs, dtype=float)
        return np.stack(
            [self.drift_grad(s[j], xs[..., : j + 1], alpha) for j in range(len(s))],
            axis=-2,
        )

    def with_epsilon(self, epsilon):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.params = OrderedDict(self.params)
        if not epsilon > 0:
            raise ConfigError("Noise level epsilon must be positive, got {}".format(epsilon))
        clone.epsilon = float(epsilon)
        return clone

    def probe(self, alpha, points=(-1.0, 0.0, 1.0)):
        """Check drift and gradient are finite on a few probe prefixes"""
        alpha = as_alpha(alpha, self.m)
        s = np.linspace(0.0, self.t_end, 5)
        for y in points:
            xs = np.full(len(s), y)
            a = self.drift_along(s, xs, alpha)
            g = self.drift_grad_along(s, xs, alpha)
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(g))):
                raise ConfigError(
                    "Model '{}' is not finite at y={} for alpha={}".format(
                        self.name, y, alpha
                    )
                )
            if g.shape[-1] != self.m:
                raise ConfigError(
                    "Model '{}' gradient has {} components, expected {}".format(
                        self.name, g.shape[-1], self.m
                    )
                )
        return True

    def to_dict(self):
        return OrderedDict(
            [
                ("name", self.name),
                ("epsilon", self.epsilon),
                ("t_end", self.t_end),
                ("params", self.params),
            ]
        )

    def __repr__(self):
        return "{}({!r}, m={}, epsilon={})".format(
            type(self).__name__, self.name, self.m, self.epsilon
        )


class MarkovDriftModel(ParamDriftModel):
    """Drift that depends on the path only through its current value

    a(s, y, alpha) and a_dot(s, y, alpha) must broadcast over s and y;
    a_dot appends a trailing axis of length m.
    """

    def __init__(self, name, m, a, a_dot, epsilon, t_end, params=None):
        super().__init__(name, m, epsilon, t_end, params)
        self._a = a
        self._a_dot = a_dot

    def drift(self, s, xs, alpha):
        return self._a(s, np.asarray(xs, dtype=float)[..., -1], alpha)

    def drift_grad(self, s, xs, alpha):
        return self._a_dot(s, np.asarray(xs, dtype=float)[..., -1], alpha)

    def drift_along(self, s, xs, alpha):
        return self._a(np.asarray(s, dtype=float), np.asarray(xs, dtype=float), alpha)

    def drift_grad_along(self, s, xs, alpha):
        return self._a_dot(np.asarray(s, dtype=float), np.asarray(xs, dtype=float), alpha)


class RunningMeanModel(ParamDriftModel):
    """a = alpha_1 - alpha_2 * (mean of the path values observed so far)"""

    def __init__(self, epsilon, t_end, params=None):
        super().__init__("running-mean", 2, epsilon, t_end, params)

    def drift(self, s, xs, alpha):
        return alpha[0] - alpha[1] * np.mean(xs, axis=-1)

    def drift_grad(self, s, xs, alpha):
        mean = np.mean(xs, axis=-1)
        return np.stack([np.ones_like(mean), -mean], axis=-1)

    @staticmethod
    def _running_mean(xs):
        xs = np.asarray(xs, dtype=float)
        counts = np.arange(1, xs.shape[-1] + 1)
        return np.cumsum(xs, axis=-1) / counts

    def drift_along(self, s, xs, alpha):
        return alpha[0] - alpha[1] * self._running_mean(xs)

    def drift_grad_along(self, s, xs, alpha):
        mean = self._running_mean(xs)
        return np.stack([np.ones_like(mean), -mean], axis=-1)


def constant_model(epsilon, t_end=1.0):
    return MarkovDriftModel(
        "constant",
        1,
        lambda s, y, alpha: np.full(_shape(s, y), alpha[0]),
        lambda s, y, alpha: np.ones(_shape(s, y) + (1,)),
        epsilon,
        t_end,
    )


def ou_model(epsilon, t_end=1.0):
    def a_dot(s, y, alpha):
        y = np.broadcast_to(y, _shape(s, y))
        return np.stack([np.ones_like(y), -y], axis=-1)

    return MarkovDriftModel(
        "ou",
        2,
        lambda s, y, alpha: alpha[0] - alpha[1] * np.broadcast_to(y, _shape(s, y)),
        a_dot,
        epsilon,
        t_end,
    )


def ou_speed_model(epsilon, t_end=1.0, level=1.0):
    level = float(level)

    def a_dot(s, y, alpha):
        return -np.broadcast_to(y, _shape(s, y))[..., None]

    return MarkovDriftModel(
        "ou-speed",
        1,
        lambda s, y, alpha: level - alpha[0] * np.broadcast_to(y, _shape(s, y)),
        a_dot,
        epsilon,
        t_end,
        params={"level": level},
    )


def time_trend_model(epsilon, t_end=1.0):
    def a_dot(s, y, alpha):
        return np.broadcast_to(1.0 + np.asarray(s, dtype=float), _shape(s, y))[..., None]

    return MarkovDriftModel(
        "time-trend",
        1,
        lambda s, y, alpha: alpha[0]
        * np.broadcast_to(1.0 + np.asarray(s, dtype=float), _shape(s, y)),
        a_dot,
        epsilon,
        t_end,
    )


def running_mean_model(epsilon, t_end=1.0):
    return RunningMeanModel(epsilon, t_end)


MODELS = OrderedDict(
    [
        ("constant", constant_model),
        ("ou", ou_model),
        ("ou-speed", ou_speed_model),
        ("time-trend", time_trend_model),
        ("running-mean", running_mean_model),
    ]
)


def model_from_json(data):
    """Build a registered model from {"name", "epsilon", "t_end", "params"}"""
    if not isinstance(data, dict):
        raise ConfigError("Model spec must be a JSON object")
    missing = [key for key in ("name", "epsilon") if key not in data]
    if missing:
        raise ConfigError("Model spec is missing: {}".format(", ".join(missing)))
    name = data["name"]
    if name not in MODELS:
        raise ConfigError(
            "Unknown model '{}' (available: {})".format(name, ", ".join(MODELS))
        )
    params = data.get("params") or {}
    try:
        return MODELS[name](float(data["epsilon"]), float(data.get("t_end", 1.0)), **params)
    except TypeError as e:
        raise ConfigError("Bad parameters for model '{}': {}".format(name, e))
