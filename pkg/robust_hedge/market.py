"""Stochastic volatility market.

    dX = X dR,   dR = sigma dM0,   dM0 = k dt + dw^R,
    dY = a*(t, Y) dt + eps dw^sigma,   sigma^2 = f(Y)

with the bracket of the driving martingale fixed to t. The reference
volatility sigma0 defaults to f(Y)^{1/2}; a misspecified market uses
sigma0 + delta h. Prices are stepped in log coordinates so they stay
positive. Arrays carry paths on axis 0, time on axis 1 and assets on
axis 2.
"""

from collections import OrderedDict

import numpy as np

from robust_hedge import log
from robust_hedge.errors import ConfigError, EllipticityError, DivergenceError
from robust_hedge.grid import SamplePath
from robust_hedge.seeds import as_seed, PRICE_NOISE, VOL_NOISE
from robust_hedge.volatility import VolMap, vol_map_from_json

K_KINDS = ("zero", "deterministic", "vol", "price")


def _field(value, name):
    """Turn a constant or a callable of (t, y) into a callable"""
    if callable(value):
        return value
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise ConfigError("{} must be finite".format(name))
    return lambda t, y: value


class SVMarketSpec:
    def __init__(
        self,
        x0=1.0,
        sigma0=None,
        k=0.0,
        vol_drift=0.0,
        vol_noise=0.0,
        vol_map=None,
        y0=0.0,
        d=1,
        k_kind=None,
        k_price=None,
    ):
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        if x0.shape == (1,) and d > 1:
            x0 = np.full(d, x0[0])
        if x0.shape != (d,) or not np.all(x0 > 0):
            raise ConfigError("x0 must hold {} positive prices, got {}".format(d, x0))
        if vol_noise < 0:
            raise ConfigError("vol_noise must be >= 0, got {}".format(vol_noise))
        self.d = int(d)
        self.x0 = x0
        self.vol_map = vol_map or VolMap()
        self.vol_map.check()
        self.sigma0 = sigma0
        self._sigma0 = None if sigma0 is None else _field(sigma0, "sigma0")
        self._k = _field(k, "k")
        self._vol_drift = _field(vol_drift, "vol_drift")
        self.vol_noise = float(vol_noise)
        self.y0 = float(y0)
        self.k_price = k_price
        if k_kind is None:
            if k_price is not None:
                k_kind = "price"
            elif callable(k):
                k_kind = "vol"
            elif np.all(np.asarray(k) == 0.0):
                k_kind = "zero"
            else:
                k_kind = "deterministic"
        if k_kind not in K_KINDS:
            raise ConfigError("k_kind must be one of {}".format(", ".join(K_KINDS)))
        self.k_kind = k_kind
        self.params = OrderedDict()

    @property
    def k_is_zero(self):
        return self.k_kind == "zero"

    def sigma0_at(self, t, y):
        """Reference volatility as a (paths, d, d) array"""
        y = np.asarray(y, dtype=float)
        if self._sigma0 is None:
            if self.d != 1:
                raise ConfigError("sigma0 is required when d > 1")
            sig = self.vol_map.sigma(y)
        else:
            sig = np.asarray(self._sigma0(t, y), dtype=float)
        if self.d == 1:
            return np.broadcast_to(sig, y.shape)[:, None, None]
        return np.broadcast_to(sig, y.shape + (self.d, self.d))

    def k_at(self, t, x, y):
        y = np.asarray(y, dtype=float)
        if self.k_price is not None:
            k = np.asarray(self.k_price(t, x, y), dtype=float)
        else:
            k = np.asarray(self._k(t, y), dtype=float)
        if self.d == 1:
            return np.broadcast_to(k, y.shape)[:, None]
        return np.broadcast_to(k, y.shape + (self.d,))

    def vol_drift_at(self, t, y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.asarray(self._vol_drift(t, y), dtype=float), y.shape)

    def variance(self, t, y):
        """sigma0^2 as a scalar field (one asset)"""
        return self.sigma0_at(t, np.atleast_1d(y))[:, 0, 0] ** 2

    def replace(self, **changes):
        """Copy with some constructor arguments changed"""
        fields = OrderedDict(
            [
                ("x0", self.x0),
                ("sigma0", self.sigma0),
                ("k", self._k),
                ("vol_drift", self._vol_drift),
                ("vol_noise", self.vol_noise),
                ("vol_map", self.vol_map),
                ("y0", self.y0),
                ("d", self.d),
                ("k_kind", self.k_kind),
                ("k_price", self.k_price),
            ]
        )
        unknown = set(changes) - set(fields)
        if unknown:
            raise ConfigError("Unknown market fields: {}".format(", ".join(sorted(unknown))))
        fields.update(changes)
        spec = SVMarketSpec(**fields)
        spec.params = OrderedDict(self.params)
        return spec

    def with_sigma0(self, sigma0):
        return self.replace(sigma0=sigma0)

    def to_dict(self):
        data = OrderedDict(
            [
                ("d", self.d),
                ("x0", self.x0),
                ("vol_noise", self.vol_noise),
                ("y0", self.y0),
                ("k_kind", self.k_kind),
                ("vol_map", self.vol_map.to_dict()),
            ]
        )
        data.update(self.params)
        return data


def _vol_drift_from_json(data):
    if data is None:
        return 0.0
    if isinstance(data, (int, float)):
        return float(data)
    kind = data.get("kind", "constant")
    if kind == "constant":
        return float(data.get("value", 0.0))
    if kind == "mean-reverting":
        speed = float(data["speed"])
        level = float(data.get("level", 0.0))
        return lambda t, y: speed * (level - y)
    raise ConfigError("Unknown vol_drift kind '{}'".format(kind))


def _k_from_json(data):
    if data is None:
        return 0.0, "zero"
    if isinstance(data, (int, float)):
        return float(data), ("zero" if data == 0 else "deterministic")
    kind = data.get("kind", "constant")
    if kind == "zero":
        return 0.0, "zero"
    if kind == "constant":
        value = float(data["value"])
        return value, ("zero" if value == 0 else "deterministic")
    if kind == "vol":
        # bounded function of the volatility factor
        scale = float(data["scale"])
        return (lambda t, y: scale * np.tanh(y)), "vol"
    raise ConfigError("Unknown k kind '{}'".format(kind))


def market_from_json(data):
    if not isinstance(data, dict):
        raise ConfigError("Market spec must be a JSON object")
    k, k_kind = _k_from_json(data.get("k"))
    sigma0 = data.get("sigma0")
    spec = SVMarketSpec(
        x0=data.get("x0", 1.0),
        sigma0=None if sigma0 is None else np.asarray(sigma0, dtype=float),
        k=k,
        vol_drift=_vol_drift_from_json(data.get("vol_drift")),
        vol_noise=float(data.get("vol_noise", 0.0)),
        vol_map=vol_map_from_json(data.get("vol_map")),
        y0=float(data.get("y0", 0.0)),
        d=int(data.get("d", 1)),
        k_kind=k_kind,
    )
    spec.params = OrderedDict(
        (key, data[key]) for key in ("k", "vol_drift", "sigma0") if key in data
    )
    return spec


class MarketPaths:
    """An ensemble of simulated market paths"""

    def __init__(self, grid, X, R, M0, W, Y, w_sigma, sigma, k, K):
        self.grid = grid
        self.X = X
        self.R = R
        self.M0 = M0
        self.W = W
        self.Y = Y
        self.w_sigma = w_sigma
        self.sigma = sigma
        self.k = k
        self.K = K

    @property
    def n_paths(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[2]

    @property
    def dM0(self):
        return np.diff(self.M0, axis=1)

    @property
    def dR(self):
        return np.diff(self.R, axis=1)

    def sample(self, i):
        """One path as a record of SamplePaths"""
        g = self.grid
        return OrderedDict(
            [
                ("X", SamplePath(g, self.X[i])),
                ("R", SamplePath(g, self.R[i])),
                ("Y", SamplePath(g, self.Y[i])),
                ("M0", SamplePath(g, self.M0[i])),
                ("w_sigma", SamplePath(g, self.w_sigma[i])),
            ]
        )

    def mvt(self):
        """Mean-variance tradeoff at the horizon: mean and max over paths"""
        return OrderedDict(
            [("mean", float(np.mean(self.K[:, -1]))), ("max", float(np.max(self.K[:, -1])))]
        )


def ellipticity_margin(sig):
    """|sigma| for one asset, smallest singular value otherwise"""
    if sig.shape[-1] == 1:
        return np.abs(sig[:, 0, 0])
    return np.linalg.svd(sig, compute_uv=False)[:, -1]


def perturbation_matrix(h, t, x, y, d):
    """h at the market state as a (paths, d, d) multiple of the identity

    The state passed to h is the price of the first asset and the factor.
    """
    x = np.asarray(x, dtype=float)
    x = x[:, 0] if x.ndim == 2 else x
    hv = h.check(h.state(t, x, y), " at t={}".format(t))
    return hv[:, None, None] * np.eye(d)


def simulate_sv_market(spec, grid, seed, h=None, delta=0.0, n_paths=1, first=0):
    """Coupled Euler paths; path i uses replicate index first + i"""
    seed = as_seed(seed)
    if delta < 0:
        raise ConfigError("delta must be >= 0, got {}".format(delta))
    P = int(n_paths)
    if P < 1:
        raise ConfigError("n_paths must be >= 1")
    n = grid.n_steps
    d = spec.d
    s = grid.nodes
    dt = grid.steps
    sqdt = np.sqrt(dt)
    reps = range(first, first + P)
    dW = np.stack(
        [seed.generator(r, PRICE_NOISE).standard_normal((n, d)) * sqdt[:, None] for r in reps]
    )
    dB = np.stack([seed.generator(r, VOL_NOISE).standard_normal(n) * sqdt for r in reps])

    logX = np.zeros((P, n + 1, d))
    logX[:, 0, :] = np.log(spec.x0)
    R = np.zeros((P, n + 1, d))
    M0 = np.zeros((P, n + 1, d))
    Y = np.zeros((P, n + 1))
    Y[:, 0] = spec.y0
    sigma = np.zeros((P, n, d, d))
    kk = np.zeros((P, n, d))
    K = np.zeros((P, n + 1))
    bump = delta * (h.bound if h is not None else 0.0)

    for j in range(n):
        t = s[j]
        y = Y[:, j]
        x = np.exp(logX[:, j, :])
        sig0 = spec.sigma0_at(t, y)
        margin = ellipticity_margin(sig0)
        if bump > 0 and np.any(bump >= margin):
            raise EllipticityError(
                "delta*r = {} reaches the ellipticity margin {} of sigma0 at t={}".format(
                    bump, float(np.min(margin)), t
                )
            )
        sig = sig0
        if h is not None and delta > 0:
            sig = sig0 + delta * perturbation_matrix(h, t, x, y, d)
        kj = spec.k_at(t, x[:, 0] if d == 1 else x, y)
        dM = kj * dt[j] + dW[:, j, :]
        dR = np.einsum("pab,pb->pa", sig, dM)
        var = np.einsum("pab,pab->pa", sig, sig)
        logX[:, j + 1, :] = logX[:, j, :] + dR - 0.5 * var * dt[j]
        R[:, j + 1, :] = R[:, j, :] + dR
        M0[:, j + 1, :] = M0[:, j, :] + dM
        Y[:, j + 1] = y + spec.vol_drift_at(t, y) * dt[j] + spec.vol_noise * dB[:, j]
        sigma[:, j] = sig
        kk[:, j] = kj
        K[:, j + 1] = K[:, j] + np.sum(kj ** 2, axis=1) * dt[j]
        if not (np.all(np.isfinite(logX[:, j + 1])) and np.all(np.isfinite(Y[:, j + 1]))):
            raise DivergenceError("Market simulation overflowed at t={}".format(s[j + 1]), time=s[j + 1])

    W = np.concatenate([np.zeros((P, 1, d)), np.cumsum(dW, axis=1)], axis=1)
    w_sigma = np.concatenate([np.zeros((P, 1)), np.cumsum(dB, axis=1)], axis=1)
    paths = MarketPaths(grid, np.exp(logX), R, M0, W, Y, w_sigma, sigma, kk, K)
    log.debug("Simulated {} market paths, mean MVT {}".format(P, paths.mvt()["mean"]))
    return paths


def diffusion_market_spec(x0, sigma0, k):
    """Constant-coefficient d-asset market (no volatility factor)"""
    sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    d = sigma0.shape[0]
    if sigma0.shape != (d, d):
        raise ConfigError("sigma0 must be a square matrix")
    k = np.broadcast_to(np.asarray(k, dtype=float), (d,)).copy()
    return SVMarketSpec(x0=x0, sigma0=sigma0 if d > 1 else sigma0[0, 0], k=k if d > 1 else k[0], d=d)


def simulate_diffusion_market(x0, sigma0, k, grid, seed, n_paths=1):
    return simulate_sv_market(diffusion_market_spec(x0, sigma0, k), grid, seed, n_paths=n_paths)
