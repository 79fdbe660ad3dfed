"""Latent volatility from realized quadratic variation.

The yield process R has bracket F(t) = int_0^t sigma^2 ds. Its realized
version is differentiated over a window of grid steps and mapped through
f^{-1} to recover the volatility factor y with sigma^2 = f(y).
"""

import math
from collections import OrderedDict

import numpy as np

from robust_hedge import log
from robust_hedge.errors import ConfigError, ReconstructionError
from robust_hedge.grid import SamplePath


class VolMap:
    """One-to-one positive map f with sigma^2 = f(y)"""

    NAMES = ("exp", "square")

    def __init__(self, name="exp", scale=1.0):
        if name not in self.NAMES:
            raise ConfigError(
                "Unknown volatility map '{}' (use {})".format(name, ", ".join(self.NAMES))
            )
        if not scale > 0:
            raise ConfigError("Volatility map scale must be positive, got {}".format(scale))
        self.name = name
        self.scale = float(scale)

    def f(self, y):
        y = np.asarray(y, dtype=float)
        if self.name == "exp":
            return self.scale * np.exp(y)
        return self.scale * y ** 2

    def f_inverse(self, v):
        v = np.asarray(v, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.name == "exp":
                return np.log(v / self.scale)
            return np.sqrt(v / self.scale)

    def sigma(self, y):
        return np.sqrt(self.f(y))

    def probe_range(self):
        # square is one-to-one on y > 0 only
        return (-3.0, 3.0) if self.name == "exp" else (0.05, 3.0)

    def check(self, points=41):
        lo, hi = self.probe_range()
        y = np.linspace(lo, hi, points)
        v = self.f(y)
        if not np.all(v > 0) or not np.all(np.diff(v) > 0):
            raise ConfigError("Volatility map '{}' is not positive and increasing".format(self.name))
        return True

    def to_dict(self):
        return OrderedDict([("name", self.name), ("scale", self.scale)])

    def __repr__(self):
        return "VolMap({!r}, scale={})".format(self.name, self.scale)


def vol_map_from_json(data):
    data = data or {}
    return VolMap(data.get("name", "exp"), data.get("scale", 1.0))


def default_window(n_steps):
    return max(1, int(math.ceil(math.sqrt(n_steps))))


class QVEstimate:
    def __init__(self, grid, cumulative, window):
        cumulative = np.array(cumulative, dtype=float)
        if cumulative.shape != grid.nodes.shape:
            raise ConfigError("Cumulative QV must have one value per node")
        if cumulative[0] != 0.0 or np.any(np.diff(cumulative) < 0.0):
            raise ConfigError("Cumulative QV must start at 0 and never decrease")
        if window < 1:
            raise ConfigError("Window must be >= 1, got {}".format(window))
        cumulative.setflags(write=False)
        self.grid = grid
        self.cumulative = cumulative
        self.window = int(window)

    def as_path(self):
        return SamplePath(self.grid, self.cumulative)


def realized_qv(R, window=None):
    """Running sum of squared increments of a one-dimensional path"""
    if R.d != 1:
        raise ConfigError("Realized QV needs a one-dimensional path, got d={}".format(R.d))
    inc = np.diff(R.x) ** 2
    cumulative = np.concatenate([[0.0], np.cumsum(inc)])
    if window is None:
        window = default_window(R.grid.n_steps)
    return QVEstimate(R.grid, cumulative, window)


def _window_bounds(n, window):
    j = np.arange(n + 1)
    half = window // 2
    lo = np.clip(j - half, 0, max(n - window, 0))
    hi = np.minimum(lo + window, n)
    return lo, hi


def vol_path_from_qv(qv, f_inverse, floor=None, window=None):
    """Windowed difference quotient of the cumulative QV mapped through f^{-1}

    Windows are centered and shift to one side near the ends. Nonpositive
    quotients are clamped to floor when one is given, otherwise rejected.
    """
    inverse = getattr(f_inverse, "f_inverse", f_inverse)
    window = qv.window if window is None else int(window)
    if window < 1:
        raise ConfigError("Window must be >= 1, got {}".format(window))
    s = qv.grid.nodes
    F = qv.cumulative
    lo, hi = _window_bounds(qv.grid.n_steps, window)
    slope = (F[hi] - F[lo]) / (s[hi] - s[lo])
    bad = np.flatnonzero(slope <= 0.0)
    if bad.size:
        if floor is None:
            j = int(bad[0])
            raise ReconstructionError(
                "Nonpositive local variance {} at node {} (s={})".format(slope[j], j, s[j]),
                node=j,
            )
        log.warning(
            "Clamped {} nonpositive local variances to floor {}".format(bad.size, floor)
        )
        slope = np.maximum(slope, floor)
    y = np.asarray(inverse(slope), dtype=float)
    if not np.all(np.isfinite(y)):
        j = int(np.flatnonzero(~np.isfinite(y))[0])
        raise ReconstructionError("f inverse is not finite at node {} (s={})".format(j, s[j]), node=j)
    log.debug("Reconstructed volatility path with window {}".format(window))
    return SamplePath(qv.grid, y)


def yield_path(prices):
    """R with dR = dX / X from a positive price path"""
    x = prices.x
    if np.any(x <= 0.0):
        raise ConfigError("Prices must be positive")
    inc = np.diff(x) / x[:-1]
    return SamplePath(prices.grid, np.concatenate([[0.0], np.cumsum(inc)]))


def reconstruct_from_prices(prices, vol_map, window=None, floor=None):
    R = yield_path(prices)
    qv = realized_qv(R, window)
    return R, qv, vol_path_from_qv(qv, vol_map, floor=floor)
