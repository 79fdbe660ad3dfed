"""Small-noise diffusions, their contaminated alternatives and the limit ODE."""

from collections import OrderedDict

import numpy as np

from robust_hedge import log
from robust_hedge.errors import ConfigError, ContaminationError, DivergenceError, NumericError
from robust_hedge.grid import SamplePath, trapezoid
from robust_hedge.models import as_alpha
from robust_hedge.seeds import as_seed, NOISE

OVERFLOW = 1e150


def _state_shape(s, state):
    if isinstance(state, tuple):
        return np.broadcast_shapes(np.shape(s), *(np.shape(x) for x in state))
    return np.broadcast_shapes(np.shape(s), np.shape(state))


class ContaminationSpec:
    """A bounded alternative h with declared bound r

    fn(s, y, alpha) receives the current value of the observed process, or
    the whole path prefix when path=True. When used as a volatility
    perturbation of the market the state argument is the pair (x, y) of
    price and volatility factor and alpha is None.
    """

    def __init__(self, fn, bound, name="custom", path=False, params=None):
        if not bound >= 0:
            raise ConfigError("Contamination bound must be >= 0, got {}".format(bound))
        self.fn = fn
        self.bound = float(bound)
        self.name = name
        self.path = path
        self.params = OrderedDict(params or {})

    def at(self, s, xs, alpha):
        xs = np.asarray(xs, dtype=float)
        if self.path:
            return np.asarray(self.fn(s, xs, alpha), dtype=float)
        y = xs[..., -1]
        return np.broadcast_to(np.asarray(self.fn(s, y, alpha), dtype=float), y.shape)

    def along(self, s, xs, alpha):
        xs = np.asarray(xs, dtype=float)
        if self.path:
            return np.stack(
                [self.at(s[j], xs[..., : j + 1], alpha) for j in range(len(s))], axis=-1
            )
        shape = _state_shape(s, xs)
        return np.broadcast_to(np.asarray(self.fn(s, xs, alpha), dtype=float), shape)

    def state(self, t, x, y):
        """Value for the market state (x, y) at time t"""
        shape = _state_shape(t, (x, y))
        return np.broadcast_to(np.asarray(self.fn(t, (x, y), None), dtype=float), shape)

    def check(self, values, where=""):
        values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise ContaminationError("Contamination '{}' is not finite{}".format(self.name, where))
        worst = float(np.max(np.abs(values))) if values.size else 0.0
        if worst > self.bound * (1.0 + 1e-12):
            raise ContaminationError(
                "Contamination '{}' reached {} above its bound {}{}".format(
                    self.name, worst, self.bound, where
                )
            )
        return values

    def l1_norm(self, s, xs, alpha, grid):
        return float(trapezoid(np.abs(self.along(s, xs, alpha)), grid))

    def to_dict(self):
        return OrderedDict(
            [("kind", self.name), ("bound", self.bound)] + list(self.params.items())
        )

    def __repr__(self):
        return "ContaminationSpec({!r}, bound={})".format(self.name, self.bound)


def _state_value(state):
    return state[1] if isinstance(state, tuple) else state


def zero_contamination():
    return ContaminationSpec(
        lambda s, state, alpha: np.zeros(_state_shape(s, state)), 0.0, "zero"
    )


def constant_contamination(eta):
    eta = float(eta)
    return ContaminationSpec(
        lambda s, state, alpha: np.full(_state_shape(s, state), eta),
        abs(eta),
        "constant",
        params={"eta": eta},
    )


def sign_contamination(eta, center=0.0):
    """eta times the sign of (state - center), +eta at the center"""
    eta = float(eta)

    def fn(s, state, alpha):
        y = np.broadcast_to(_state_value(state), _state_shape(s, state))
        return np.where(y >= center, eta, -eta)

    return ContaminationSpec(fn, abs(eta), "sign", params={"eta": eta, "center": center})


def plateau_contamination(level, start, stop):
    level = float(level)

    def fn(s, state, alpha):
        s = np.broadcast_to(np.asarray(s, dtype=float), _state_shape(s, state))
        return np.where((s >= start) & (s <= stop), level, 0.0)

    return ContaminationSpec(
        fn, abs(level), "plateau", params={"level": level, "start": start, "stop": stop}
    )


def spike_contamination(height, at):
    """height at the single time `at`, zero elsewhere"""
    height = float(height)

    def fn(s, state, alpha):
        s = np.broadcast_to(np.asarray(s, dtype=float), _state_shape(s, state))
        return np.where(np.isclose(s, at, rtol=0.0, atol=1e-12), height, 0.0)

    return ContaminationSpec(fn, abs(height), "spike", params={"height": height, "at": at})


def contamination_from_json(data):
    if data is None:
        return zero_contamination()
    kind = data.get("kind", "zero")
    try:
        if kind == "zero":
            return zero_contamination()
        if kind == "constant":
            return constant_contamination(data["eta"])
        if kind == "sign":
            return sign_contamination(data["eta"], data.get("center", 0.0))
        if kind == "plateau":
            return plateau_contamination(data["level"], data["start"], data["stop"])
        if kind == "spike":
            return spike_contamination(data["height"], data["at"])
    except KeyError as e:
        raise ConfigError("Contamination '{}' needs field {}".format(kind, e))
    raise ConfigError("Unknown contamination kind '{}'".format(kind))


def solve_limit_ode(model, alpha, grid, y0=0.0):
    """Classical RK4 for dY/ds = a(s, Y; alpha), Y_0 = y0"""
    alpha = as_alpha(alpha, model.m)
    s = grid.nodes
    dt = grid.steps
    # last slot holds RK4 trial points appended to the prefix
    buf = np.zeros(len(s) + 1)
    buf[0] = y0

    def f(t, j, trial=None):
        if trial is None:
            return float(model.drift(t, buf[: j + 1], alpha))
        buf[j + 1] = trial
        return float(model.drift(t, buf[: j + 2], alpha))

    for j in range(grid.n_steps):
        y = buf[j]
        h = dt[j]
        k1 = f(s[j], j)
        k2 = f(s[j] + h / 2, j, y + h / 2 * k1)
        k3 = f(s[j] + h / 2, j, y + h / 2 * k2)
        k4 = f(s[j + 1], j, y + h * k3)
        y_next = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.isfinite(y_next) or abs(y_next) > OVERFLOW:
            raise DivergenceError(
                "Limit ODE of '{}' blew up at s={}".format(model.name, s[j + 1]),
                time=float(s[j + 1]),
            )
        buf[j + 1] = y_next
    return SamplePath(grid, buf[: len(s)])


def _euler_batch(model, alpha, grid, seed, replicates, h=None, epsilon=None, y0=0.0):
    alpha = as_alpha(alpha, model.m)
    eps = model.epsilon if epsilon is None else float(epsilon)
    if eps < 0:
        raise ConfigError("Noise level must be >= 0, got {}".format(eps))
    seed = as_seed(seed)
    replicates = list(replicates)
    s = grid.nodes
    dt = grid.steps
    dw = seed.increments_batch(dt, replicates, NOISE)
    Y = np.zeros((len(replicates), len(s)))
    Y[:, 0] = y0
    for j in range(grid.n_steps):
        prefix = Y[:, : j + 1]
        a = np.asarray(model.drift(s[j], prefix, alpha), dtype=float)
        if h is not None:
            hv = h.check(h.at(s[j], prefix, alpha), " at s={}".format(s[j]))
            a = a + eps * hv
        Y[:, j + 1] = Y[:, j] + a * dt[j] + eps * dw[:, j]
        if not np.all(np.isfinite(Y[:, j + 1])) or np.any(np.abs(Y[:, j + 1]) > OVERFLOW):
            raise DivergenceError(
                "Euler path of '{}' overflowed at s={}".format(model.name, s[j + 1]),
                time=float(s[j + 1]),
            )
    return Y


def simulate_small_noise_batch(model, alpha, grid, seed, replicates, epsilon=None):
    """Rows are replicates; row k equals simulate_small_noise(..., replicate=k)"""
    return _euler_batch(model, alpha, grid, seed, replicates, epsilon=epsilon)


def simulate_small_noise(model, alpha, grid, seed, replicate=0, epsilon=None):
    Y = _euler_batch(model, alpha, grid, seed, [replicate], epsilon=epsilon)
    return SamplePath(grid, Y[0])


def simulate_contaminated_batch(model, alpha, h, grid, seed, replicates, epsilon=None):
    return _euler_batch(model, alpha, grid, seed, replicates, h=h, epsilon=epsilon)


def simulate_contaminated(model, alpha, h, grid, seed, replicate=0, epsilon=None):
    """Euler path of dY = (a + eps h) ds + eps dw"""
    Y = _euler_batch(model, alpha, grid, seed, [replicate], h=h, epsilon=epsilon)
    return SamplePath(grid, Y[0])


def wiener_path(grid, seed, replicate=0, component=NOISE):
    dw = as_seed(seed).increments(grid.steps, replicate, component)
    return SamplePath(grid, np.concatenate([[0.0], np.cumsum(dw)]))


def contamination_log_density(model, alpha, h, path, epsilon=None):
    """Running log-likelihood ratio of the contaminated versus nominal scheme

    Sum of h (dY - a ds) / eps - h^2 ds / 2, which is the discrete form of
    log E(eps N) and equals the log ratio of the Euler transition densities.
    """
    alpha = as_alpha(alpha, model.m)
    eps = model.epsilon if epsilon is None else float(epsilon)
    if not eps > 0:
        raise ConfigError("Log density needs a positive noise level")
    y = path.x
    s = path.s
    a = model.drift_along(s, y, alpha)[:-1]
    hv = h.check(h.along(s, y, alpha))[:-1]
    dy = np.diff(y)
    dt = path.grid.steps
    inc = hv * (dy - a * dt) / eps - 0.5 * hv ** 2 * dt
    return SamplePath(path.grid, np.concatenate([[0.0], np.cumsum(inc)]))


def bracket(M, N):
    """Discrete covariation: running sum of dM dN"""
    if M.grid != N.grid:
        raise ConfigError("Bracket needs both paths on the same grid")
    inc = np.diff(M.x) * np.diff(N.x)
    return SamplePath(M.grid, np.concatenate([[0.0], np.cumsum(inc)]))


def dolean_exp(M, qv):
    """exp(M - qv/2) for a continuous martingale M with bracket qv"""
    if M.grid != qv.grid:
        raise ConfigError("Martingale and bracket must share a grid")
    m = M.x
    q = qv.x
    if abs(m[0]) > 1e-12:
        raise ConfigError("Martingale must start at 0, got {}".format(m[0]))
    tol = 1e-12 * max(1.0, float(np.max(np.abs(q))))
    if abs(q[0]) > tol:
        raise ConfigError("Bracket must start at 0, got {}".format(q[0]))
    dq = np.diff(q)
    if np.any(dq < -tol):
        j = int(np.argmax(dq < -tol))
        raise ConfigError("Bracket decreases at s={}".format(qv.s[j + 1]))
    out = np.exp(m - 0.5 * q)
    if np.any(out <= 0.0):
        raise NumericError("Exponential underflowed to zero")
    log.debug("Dolean exponential ends at {}".format(out[-1]))
    return SamplePath(M.grid, out)
