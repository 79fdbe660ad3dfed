"""Pricing equation of the stochastic volatility market.

    v_t + a*(t, y) v_y + (eps^2 v_yy + x^2 f(y) v_xx) / 2 = 0,   v(T) = h

solved backward with Crank-Nicolson on a (t, x, y) lattice. The drift term is
upwinded. There is no x-diffusion on the x edges (v_xx = 0) and no
y-diffusion on the y edges, where v_y is one-sided. The first two steps are
split into implicit half steps to damp the payoff kink.
"""

import math
from collections import OrderedDict

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu

from robust_hedge import log
from robust_hedge.errors import ConfigError, LatticeError
from robust_hedge.hedging import StrategyRule

RANNACHER_STEPS = 2


class Lattice:
    def __init__(self, t_end, nt, x_min, x_max, nx, y_min, y_max, ny):
        if not t_end > 0:
            raise ConfigError("Lattice horizon must be positive, got {}".format(t_end))
        if nt < 1 or nx < 3 or ny < 2:
            raise ConfigError("Lattice needs nt >= 1, nx >= 3 and ny >= 2")
        if not (0 <= x_min < x_max) or not y_min < y_max:
            raise ConfigError("Lattice ranges must be increasing with x_min >= 0")
        self.t_end = float(t_end)
        self.nt = int(nt)
        self.t = np.linspace(0.0, t_end, self.nt + 1)
        self.x = np.linspace(x_min, x_max, int(nx))
        self.y = np.linspace(y_min, y_max, int(ny))

    @property
    def dt(self):
        return self.t_end / self.nt

    @property
    def dx(self):
        return self.x[1] - self.x[0]

    @property
    def dy(self):
        return self.y[1] - self.y[0]

    @property
    def shape(self):
        return (len(self.x), len(self.y))

    def with_steps(self, nt):
        return Lattice(
            self.t_end, nt, self.x[0], self.x[-1], len(self.x), self.y[0], self.y[-1], len(self.y)
        )

    def to_dict(self):
        return OrderedDict(
            [
                ("t_end", self.t_end),
                ("nt", self.nt),
                ("x", [self.x[0], self.x[-1], len(self.x)]),
                ("y", [self.y[0], self.y[-1], len(self.y)]),
            ]
        )


def lattice_from_json(data, t_end=None):
    if not isinstance(data, dict):
        raise ConfigError("Lattice must be a JSON object")
    try:
        x = data["x"]
        y = data["y"]
        return Lattice(
            float(data.get("t_end", t_end)),
            int(data["nt"]),
            float(x[0]),
            float(x[1]),
            int(x[2]),
            float(y[0]),
            float(y[1]),
            int(y[2]),
        )
    except (KeyError, IndexError, TypeError) as e:
        raise ConfigError("Lattice needs nt, x = [min, max, n] and y = [min, max, n] ({})".format(e))


def _second_difference(n, h):
    """Central v'' with zero rows at both ends"""
    main = np.full(n, -2.0)
    lower = np.ones(n - 1)
    upper = np.ones(n - 1)
    main[[0, -1]] = 0.0
    upper[0] = 0.0
    lower[-1] = 0.0
    return sparse.diags([lower, main, upper], [-1, 0, 1], format="csr") / h ** 2


def _y_operator(a, eps, y):
    """a v_y upwinded plus eps^2 v_yy / 2, one-sided without diffusion at the edges"""
    n = len(y)
    h = y[1] - y[0]
    rows, cols, vals = [], [], []

    def add(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    for i in range(n):
        if i == 0 or (0 < i < n - 1 and a[i] > 0):
            forward = True
        else:
            forward = False
        if i == n - 1:
            forward = False
        if forward:
            add(i, i + 1, a[i] / h)
            add(i, i, -a[i] / h)
        else:
            add(i, i, a[i] / h)
            add(i, i - 1, -a[i] / h)
        if 0 < i < n - 1:
            c = 0.5 * eps ** 2 / h ** 2
            add(i, i - 1, c)
            add(i, i, -2 * c)
            add(i, i + 1, c)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _coefficients(spec, lattice, t):
    y = lattice.y
    a = np.asarray(spec.vol_drift_at(t, y), dtype=float)
    f = np.asarray(spec.variance(t, y), dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(f))):
        raise ConfigError("PDE coefficients are not finite at t={}".format(t))
    return a, f


def _operator(spec, lattice, a, f):
    x = lattice.x
    nx = len(x)
    Dxx = sparse.diags(0.5 * x ** 2) @ _second_difference(nx, lattice.dx)
    Lx = sparse.kron(Dxx, sparse.diags(f))
    Ly = sparse.kron(sparse.identity(nx), _y_operator(a, spec.vol_noise, lattice.y))
    return (Lx + Ly).tocsc()


def _rate(spec, lattice, a, f):
    x_max = lattice.x[-1]
    return (
        x_max ** 2 * float(np.max(f)) / lattice.dx ** 2
        + spec.vol_noise ** 2 / lattice.dy ** 2
        + float(np.max(np.abs(a))) / lattice.dy
    )


def check_lattice(spec, lattice):
    """Nonnegative explicit half of each Crank-Nicolson step"""
    worst = 0.0
    for t in lattice.t[:-1]:
        a, f = _coefficients(spec, lattice, t + 0.5 * lattice.dt)
        worst = max(worst, _rate(spec, lattice, a, f))
    if 1.0 - 0.5 * lattice.dt * worst < 0.0:
        suggested = int(math.ceil(lattice.t_end * worst / 2.0 * (1.0 + 1e-9)))
        raise LatticeError(
            "Time step {} too coarse for the lattice; use nt >= {}".format(lattice.dt, suggested),
            suggested_steps=suggested,
        )
    return worst


class PDESolution:
    def __init__(self, lattice, values, spec=None, payoff=None):
        self.lattice = lattice
        self.values = values
        self.spec = spec
        self.payoff = payoff
        axes = (lattice.t, lattice.x, lattice.y)
        self.dv_dx = np.gradient(values, lattice.x, axis=1)
        self.dv_dy = np.gradient(values, lattice.y, axis=2)
        self._v = RegularGridInterpolator(axes, values)
        self._vx = RegularGridInterpolator(axes, self.dv_dx)
        self._vy = RegularGridInterpolator(axes, self.dv_dy)

    def _points(self, t, x, y):
        lat = self.lattice
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), np.broadcast_shapes(x.shape, y.shape))
        outside = (x < lat.x[0]) | (x > lat.x[-1]) | (y < lat.y[0]) | (y > lat.y[-1])
        if np.any(outside):
            log.warning("{} states outside the lattice were clamped".format(int(np.sum(outside))))
        x = np.clip(x, lat.x[0], lat.x[-1])
        y = np.clip(y, lat.y[0], lat.y[-1])
        t = np.clip(t, 0.0, lat.t_end)
        return np.stack(np.broadcast_arrays(t, x, y), axis=-1)

    def value(self, t, x, y):
        return self._v(self._points(t, x, y))

    def delta(self, t, x, y):
        return self._vx(self._points(t, x, y))

    def vega_y(self, t, x, y):
        return self._vy(self._points(t, x, y))

    def slice(self, t):
        j = int(np.argmin(np.abs(self.lattice.t - t)))
        return self.values[j]

    def surface_columns(self, j=0):
        """Columns x, y, v, dv/dx, dv/dy of the slice at time index j"""
        X, Y = np.meshgrid(self.lattice.x, self.lattice.y, indexing="ij")
        return [
            X.ravel(),
            Y.ravel(),
            self.values[j].ravel(),
            self.dv_dx[j].ravel(),
            self.dv_dy[j].ravel(),
        ]


def sv_pde_price(spec, payoff, lattice):
    if spec.d != 1:
        raise ConfigError("The pricing equation is solved for one asset")
    check_lattice(spec, lattice)
    nx, ny = lattice.shape
    X, Y = np.meshgrid(lattice.x, lattice.y, indexing="ij")
    v = np.asarray(payoff(X[..., None], Y), dtype=float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ConfigError("Payoff is not finite on the lattice")
    values = np.zeros((lattice.nt + 1, nx, ny))
    values[-1] = v.reshape(nx, ny)
    eye = sparse.identity(nx * ny, format="csc")
    cache = {}

    def factor(key, L, theta, dt):
        if cache.get("key") is not None and cache["key"][0] == key[0] and np.array_equal(cache["key"][1], key[1]):
            return cache["lu"], cache["rhs"]
        lu = splu((eye - theta * dt * L).tocsc())
        rhs = (eye + (1 - theta) * dt * L).tocsc()
        cache.update(key=key, lu=lu, rhs=rhs)
        return lu, rhs

    dt = lattice.dt
    last = None
    for step in range(lattice.nt):
        j = lattice.nt - step
        t_mid = lattice.t[j] - 0.5 * dt
        a, f = _coefficients(spec, lattice, t_mid)
        coeffs = np.concatenate([a, f])
        if last is None or not np.array_equal(coeffs, last[0]):
            last = (coeffs, _operator(spec, lattice, a, f))
        L = last[1]
        if step < RANNACHER_STEPS:
            lu, _ = factor(("implicit", coeffs), L, 1.0, 0.5 * dt)
            v = lu.solve(lu.solve(v))
        else:
            lu, rhs = factor(("cn", coeffs), L, 0.5, dt)
            v = lu.solve(rhs @ v)
        values[j - 1] = v.reshape(nx, ny)
    log.debug("Solved pricing equation on {} lattice, v(0) range [{}, {}]".format(
        (lattice.nt, nx, ny), float(values[0].min()), float(values[0].max())
    ))
    return PDESolution(lattice, values, spec, payoff)


class PDEDeltaStrategy(StrategyRule):
    """theta = X dv/dx, the price-risk part of the hedge only"""

    name = "pde-delta"

    def __init__(self, solution):
        self.solution = solution

    def along(self, market):
        s = market.grid.nodes
        out = np.zeros((market.n_paths, market.grid.n_steps, 1))
        for j in range(market.grid.n_steps):
            x = market.X[:, j, 0]
            out[:, j, 0] = x * self.solution.delta(s[j], x, market.Y[:, j])
        return out


def pde_delta_strategy(solution):
    return PDEDeltaStrategy(solution)


def pde_gkw(solution, market):
    """xi = dv/dx along the paths and L_T = eps sum dv/dy dw^sigma"""
    s = market.grid.nodes
    n = market.grid.n_steps
    xi = np.zeros((market.n_paths, n))
    dw = np.diff(market.w_sigma, axis=1)
    L = np.zeros(market.n_paths)
    eps = solution.spec.vol_noise if solution.spec is not None else 0.0
    for j in range(n):
        x = market.X[:, j, 0]
        y = market.Y[:, j]
        xi[:, j] = solution.delta(s[j], x, y)
        L += eps * solution.vega_y(s[j], x, y) * dw[:, j]
    return xi, L


def default_lattice(spec, t_end, nt=None, nx=201, ny=21, width=4.0):
    """x on [0, width x0], y within 4 standard deviations of its noise"""
    x_max = width * float(spec.x0[0])
    spread = max(4.0 * spec.vol_noise * math.sqrt(t_end), 0.1)
    lat = Lattice(t_end, nt or 1, 0.0, x_max, nx, spec.y0 - spread, spec.y0 + spread, ny)
    if nt is None:
        try:
            check_lattice(spec, lat)
        except LatticeError as e:
            lat = lat.with_steps(e.suggested_steps)
    return lat
