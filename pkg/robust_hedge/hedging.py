"""Mean-variance hedging when the volatility is only known up to a band.

A hedger holding theta (dollar amounts) in the assets, with dX = X dR and
dR = sigma dM0, bears the quadratic loss

    J(sigma, theta) = E (H - x - sum_j theta_j' sigma_j dM0_j)^2.

The claim H and the strategy are evaluated on paths of the reference market.
Only the volatility inside the gains changes between alternatives sigma in
the band |sigma - sigma0| <= delta r.
"""

from collections import OrderedDict
from multiprocessing.dummy import Pool

import numpy as np
from scipy import stats

from robust_hedge import log
from robust_hedge.errors import (
    ConfigError,
    EllipticityError,
    NumericError,
    SingularMatrixError,
    UnsupportedCaseError,
)
from robust_hedge.grid import SamplePath
from robust_hedge.market import (
    ellipticity_margin,
    market_from_json,
    perturbation_matrix,
    simulate_sv_market,
)
from robust_hedge.sde import constant_contamination, plateau_contamination, sign_contamination


class Payoff:
    """Claim H as a function of the terminal prices (..., d) and factor (...)"""

    def __init__(self, fn, name, params=None):
        self.fn = fn
        self.name = name
        self.params = OrderedDict(params or {})

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.asarray(self.fn(x, y), dtype=float), y.shape)

    def to_dict(self):
        return OrderedDict([("kind", self.name)] + list(self.params.items()))


def call_payoff(strike, asset=0):
    return Payoff(
        lambda x, y: np.maximum(x[..., asset] - strike, 0.0),
        "call",
        {"strike": strike, "asset": asset},
    )


def put_payoff(strike, asset=0):
    return Payoff(
        lambda x, y: np.maximum(strike - x[..., asset], 0.0),
        "put",
        {"strike": strike, "asset": asset},
    )


def linear_payoff(weights=1.0):
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    return Payoff(lambda x, y: x @ np.broadcast_to(w, x.shape[-1:]), "linear", {"weights": w})


def constant_payoff(value):
    value = float(value)
    return Payoff(lambda x, y: np.full(y.shape, value), "constant", {"value": value})


def vol_payoff(scale=1.0):
    """scale * Y_T, a claim on the volatility factor alone"""
    scale = float(scale)
    return Payoff(lambda x, y: scale * y, "vol", {"scale": scale})


def payoff_from_json(data):
    if not isinstance(data, dict):
        raise ConfigError("Payoff must be a JSON object")
    kind = data.get("kind")
    try:
        if kind == "call":
            return call_payoff(float(data["strike"]), int(data.get("asset", 0)))
        if kind == "put":
            return put_payoff(float(data["strike"]), int(data.get("asset", 0)))
        if kind == "linear":
            return linear_payoff(data.get("weights", 1.0))
        if kind == "constant":
            return constant_payoff(data["value"])
        if kind == "vol":
            return vol_payoff(data.get("scale", 1.0))
    except KeyError as e:
        raise ConfigError("Payoff '{}' needs field {}".format(kind, e))
    raise ConfigError("Unknown payoff kind '{}'".format(kind))


class HedgeProblem:
    def __init__(self, spec, payoff, delta=0.0, r=0.0, capital=0.0):
        if delta < 0 or r < 0:
            raise ConfigError("delta and r must be >= 0, got {} and {}".format(delta, r))
        if capital != "auto":
            capital = float(capital)
        self.spec = spec
        self.payoff = payoff
        self.delta = float(delta)
        self.r = float(r)
        self.capital = capital

    @property
    def d(self):
        return self.spec.d

    @property
    def band_width(self):
        return self.delta * self.r

    def with_sigma0(self, sigma0, band_width=None):
        problem = HedgeProblem(
            self.spec.with_sigma0(sigma0), self.payoff, self.delta, self.r, self.capital
        )
        if band_width is not None:
            problem.delta = 1.0 if self.r == 0 else band_width / self.r
            problem.r = self.r if self.r > 0 else band_width
        return problem

    def to_dict(self):
        return OrderedDict(
            [
                ("market", self.spec.to_dict()),
                ("payoff", self.payoff.to_dict()),
                ("delta", self.delta),
                ("r", self.r),
                ("capital", self.capital),
            ]
        )


def hedge_problem_from_json(data):
    if not isinstance(data, dict):
        raise ConfigError("Hedge problem must be a JSON object")
    missing = [key for key in ("market", "payoff") if key not in data]
    if missing:
        raise ConfigError("Hedge problem is missing: {}".format(", ".join(missing)))
    return HedgeProblem(
        market_from_json(data["market"]),
        payoff_from_json(data["payoff"]),
        delta=float(data.get("delta", 0.0)),
        r=float(data.get("r", 0.0)),
        capital=data.get("capital", 0.0),
    )


def reference_market(problem, grid, seed, n_paths, first=0):
    return simulate_sv_market(problem.spec, grid, seed, n_paths=n_paths, first=first)


def reference_sigma(spec, market):
    """sigma0 along the nodes of a market ensemble, shape (P, n, d, d)"""
    s = market.grid.nodes
    return np.stack([spec.sigma0_at(s[j], market.Y[:, j]) for j in range(market.grid.n_steps)], axis=1)


def terminal_payoff(problem, market):
    H = problem.payoff(market.X[:, -1, :], market.Y[:, -1])
    if not np.all(np.isfinite(H)):
        raise NumericError("Payoff is not finite on {} paths".format(int(np.sum(~np.isfinite(H)))))
    return H


# Strategies


class StrategyRule:
    """Dollar amounts theta held in each asset over each grid step"""

    name = "strategy"

    def along(self, market):
        raise NotImplementedError

    def admissibility(self, market, theta=None):
        """E sum |theta|^2 ds on the market ensemble"""
        theta = self.along(market) if theta is None else theta
        value = float(np.mean(np.sum(theta ** 2, axis=2) @ market.grid.steps))
        if not np.isfinite(value):
            raise NumericError("Strategy '{}' is not admissible on the sample".format(self.name))
        return value

    def stats(self, market):
        theta = self.along(market)
        return OrderedDict(
            [
                ("name", self.name),
                ("admissibility", self.admissibility(market, theta)),
                ("theta0", np.mean(theta[:, 0, :], axis=0)),
                ("mean_abs", float(np.mean(np.abs(theta)))),
                ("max_abs", float(np.max(np.abs(theta)))),
            ]
        )


class FeedbackStrategy(StrategyRule):
    def __init__(self, fn, name="feedback"):
        self.fn = fn
        self.name = name

    def along(self, market):
        s = market.grid.nodes
        P, d = market.n_paths, market.d
        out = np.zeros((P, market.grid.n_steps, d))
        for j in range(market.grid.n_steps):
            value = np.asarray(self.fn(s[j], market.X[:, j, :], market.Y[:, j]), dtype=float)
            out[:, j, :] = value.reshape(P, -1) if value.ndim else value
        return out


def zero_strategy():
    return FeedbackStrategy(lambda t, x, y: 0.0, "zero")


def _phi_along(phi, spec, market):
    s = market.grid.nodes
    return np.stack(
        [
            np.broadcast_to(
                np.asarray(
                    phi(s[j], market.X[:, j, :], market.Y[:, j], spec.sigma0_at(s[j], market.Y[:, j])),
                    dtype=float,
                ),
                (market.n_paths,),
            )
            for j in range(market.grid.n_steps)
        ],
        axis=1,
    )


class RepresentationStrategy(StrategyRule):
    """phi / sigma0 with 0/0 := 0"""

    def __init__(self, spec, phi, name="zero-drift"):
        self.spec = spec
        self.phi = phi
        self.name = name
        self.solves = ("risk", "robust")

    def along(self, market):
        sig0 = reference_sigma(self.spec, market)[:, :, 0, 0]
        phi = _phi_along(self.phi, self.spec, market)
        safe = np.where(sig0 != 0.0, sig0, 1.0)
        return np.where(sig0 != 0.0, phi / safe, 0.0)[:, :, None]


def _require_zero_drift(problem, what):
    if problem.d != 1:
        raise UnsupportedCaseError("{} needs one asset, got d={}".format(what, problem.d))
    if not problem.spec.k_is_zero:
        raise UnsupportedCaseError(
            "{} needs zero market price of risk (k kind is '{}')".format(what, problem.spec.k_kind)
        )


def strategy_zero_drift(problem, phi):
    """theta* = phi / sigma0, optimal for both the plain and the robust problem"""
    _require_zero_drift(problem, "Zero-drift strategy")
    return RepresentationStrategy(problem.spec, phi)


def phi_linear(asset=0):
    """Integrand of H = X_T: sigma0 X"""
    return lambda t, x, y, sig0: sig0[:, 0, 0] * x[:, asset]


def black_scholes_call(x, strike, variance):
    """Call price with total variance sigma^2 (T - t), no rates"""
    x = np.asarray(x, dtype=float)
    variance = np.asarray(variance, dtype=float)
    intrinsic = np.maximum(x - strike, 0.0)
    vol = np.sqrt(np.maximum(variance, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(x / strike) + 0.5 * variance) / vol
        price = x * stats.norm.cdf(d1) - strike * stats.norm.cdf(d1 - vol)
    return np.where(vol > 0, price, intrinsic)


def phi_call(strike, t_end, asset=0):
    """sigma X N(d1) with the current sigma0 frozen up to t_end"""

    def phi(t, x, y, sig0):
        sig = sig0[:, 0, 0]
        xa = x[:, asset]
        tau = max(t_end - t, 0.0)
        if tau == 0.0:
            return sig * xa * (xa > strike)
        vol = np.abs(sig) * np.sqrt(tau)
        with np.errstate(divide="ignore", invalid="ignore"):
            d1 = np.where(
                vol > 0,
                (np.log(xa / strike) + 0.5 * vol ** 2) / vol,
                np.where(xa > strike, np.inf, -np.inf),
            )
        return sig * xa * stats.norm.cdf(d1)

    return phi


# Volatility functionals


class VolatilityFunctional:
    name = "sigma"

    def along(self, market, theta):
        raise NotImplementedError


class ReferenceVolatility(VolatilityFunctional):
    name = "reference"

    def __init__(self, spec):
        self.spec = spec

    def along(self, market, theta):
        return reference_sigma(self.spec, market)


class PerturbedVolatility(VolatilityFunctional):
    """sigma0 + delta h(t, X, Y)"""

    name = "perturbed"

    def __init__(self, spec, h, delta):
        self.spec = spec
        self.h = h
        self.delta = float(delta)

    def along(self, market, theta):
        return reference_sigma(self.spec, market) + self.delta * perturbation_along(self.h, market)


class ShiftedVolatility(VolatilityFunctional):
    """sigma0 + shift, a constant point of the band"""

    name = "shifted"

    def __init__(self, spec, shift):
        self.spec = spec
        self.shift = float(shift)

    def along(self, market, theta):
        return reference_sigma(self.spec, market) + self.shift * np.eye(self.spec.d)


class WorstCaseVolatility(VolatilityFunctional):
    """Band edge maximizing (phi - theta sigma)^2 at every node, zero where theta = 0"""

    name = "worst-case"

    def __init__(self, spec, phi, width):
        self.spec = spec
        self.phi = phi
        self.width = float(width)

    def along(self, market, theta):
        sig0 = reference_sigma(self.spec, market)[:, :, 0, 0]
        phi = _phi_along(self.phi, self.spec, market)
        th = theta[:, :, 0]
        # phi / theta >= sigma0 without dividing
        low = phi * np.sign(th) >= sig0 * np.abs(th)
        sig = np.where(low, sig0 - self.width, sig0 + self.width)
        return np.where(th != 0.0, sig, 0.0)[:, :, None, None]


def worst_case_sigma(problem, theta, phi):
    _require_zero_drift(problem, "Worst-case volatility")
    return WorstCaseVolatility(problem.spec, phi, problem.band_width)


def perturbation_along(h, market):
    s = market.grid.nodes
    return np.stack(
        [
            perturbation_matrix(h, s[j], market.X[:, j, :], market.Y[:, j], market.d)
            for j in range(market.grid.n_steps)
        ],
        axis=1,
    )


# Risk and its differential


class MCResult:
    def __init__(self, name, samples):
        samples = np.asarray(samples, dtype=float)
        self.name = name
        self.samples = samples
        self.value = float(np.mean(samples))
        n = len(samples)
        self.std_err = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else 0.0

    def to_dict(self):
        return OrderedDict([(self.name, self.value), ("std_err", self.std_err)])


def _check_band(problem, sig, sig0, theta):
    width = problem.band_width
    margin = ellipticity_margin(sig0.reshape((-1,) + sig0.shape[2:]))
    if width > 0 and np.any(width >= margin):
        raise EllipticityError(
            "Band width {} reaches the ellipticity margin {} of sigma0".format(width, float(np.min(margin)))
        )
    active = np.any(theta != 0.0, axis=2)
    gap = np.max(np.abs(sig - sig0), axis=(2, 3))
    outside = active & (gap > width * (1.0 + 1e-9) + 1e-14)
    if np.any(outside):
        raise ConfigError(
            "Volatility leaves the band of width {} (gap {})".format(width, float(np.max(gap[outside])))
        )


def gains(theta, sig, market):
    return np.einsum("pja,pjab,pjb->p", theta, sig, market.dM0)


def resolve_capital(problem, H, density=None):
    """Capital x; "auto" uses the price E(H ztilde_T) of the claim"""
    if problem.capital != "auto":
        return problem.capital
    if density is None:
        return float(np.mean(H))
    return float(np.mean(H * density.terminal) / np.mean(density.terminal))


def _market_for(problem, grid, n_paths, seed, market):
    if market is not None:
        return market
    if grid is None:
        raise ConfigError("Either a grid or a simulated market is required")
    return reference_market(problem, grid, seed, n_paths)


def _auto_capital_density(problem, market):
    if problem.capital == "auto" and not problem.spec.k_is_zero:
        return zeta_and_ztilde(problem, market)
    return None


def risk_J(problem, vol, theta, grid=None, n_paths=2000, seed=0, market=None):
    """Monte Carlo J(sigma, theta) with its standard error"""
    market = _market_for(problem, grid, n_paths, seed, market)
    th = theta.along(market)
    sig = vol.along(market, th)
    sig0 = reference_sigma(problem.spec, market)
    _check_band(problem, sig, sig0, th)
    H = terminal_payoff(problem, market)
    x = resolve_capital(problem, H, _auto_capital_density(problem, market))
    loss = H - x - gains(th, sig, market)
    result = MCResult("J", loss ** 2)
    result.loss = loss
    log.debug("J({}, {}) = {} +- {}".format(vol.name, theta.name, result.value, result.std_err))
    return result


def gateaux_DJ(problem, theta, h, grid=None, phi=None, n_paths=2000, seed=0, market=None, method="auto"):
    """Directional derivative of J at sigma0 in the direction h

    "analytic" uses 2 E sum (theta sigma0 - phi) theta h ds and needs zero
    drift and phi. "pathwise" differentiates the loss under common random
    numbers: -2 E (H - x - G(sigma0)) G(h).
    """
    market = _market_for(problem, grid, n_paths, seed, market)
    if method == "auto":
        method = "analytic" if (phi is not None and problem.d == 1 and problem.spec.k_is_zero) else "pathwise"
    th = theta.along(market)
    hmat = perturbation_along(h, market)
    if method == "analytic":
        _require_zero_drift(problem, "Analytic DJ")
        if phi is None:
            raise ConfigError("Analytic DJ needs the integrand phi")
        sig0 = reference_sigma(problem.spec, market)[:, :, 0, 0]
        ph = _phi_along(phi, problem.spec, market)
        t1 = th[:, :, 0]
        samples = 2.0 * ((t1 * sig0 - ph) * t1 * hmat[:, :, 0, 0]) @ market.grid.steps
    elif method == "pathwise":
        sig0 = reference_sigma(problem.spec, market)
        H = terminal_payoff(problem, market)
        x = resolve_capital(problem, H, _auto_capital_density(problem, market))
        loss = H - x - gains(th, sig0, market)
        samples = -2.0 * loss * gains(th, hmat, market)
    else:
        raise ConfigError("Unknown DJ method '{}'".format(method))
    result = MCResult("DJ", samples)
    result.method = method
    return result


def dj_test_grid(problem, t_end):
    """Bounded volatility perturbations with sup |h| = r"""
    r = problem.r if problem.r > 0 else 1.0
    y0 = problem.spec.y0
    return [
        constant_contamination(r),
        constant_contamination(-r),
        sign_contamination(r, y0),
        sign_contamination(-r, y0),
        plateau_contamination(r, 0.0, t_end / 2),
        plateau_contamination(r, t_end / 2, t_end),
        plateau_contamination(-r, 0.0, t_end / 2),
        plateau_contamination(-r, t_end / 2, t_end),
        plateau_contamination(r, t_end / 4, 3 * t_end / 4),
        plateau_contamination(-r, t_end / 4, 3 * t_end / 4),
    ]


# Variance-optimal density and GKW decomposition


class DensityPaths:
    """ztilde_t = E_t(-k' M0) / N and its integrand zeta = -k E_t / N"""

    def __init__(self, grid, ztilde, zeta, normalizer):
        self.grid = grid
        self.ztilde = ztilde
        self.zeta = zeta
        self.normalizer = normalizer
        self.market = None

    @property
    def z0(self):
        return self.ztilde[:, 0]

    @property
    def terminal(self):
        return self.ztilde[:, -1]

    def sample(self, i):
        return SamplePath(self.grid, self.ztilde[i]), self.zeta[i]

    def mean_terminal(self):
        return MCResult("mean", self.terminal)

    def U(self, market):
        """(ztilde_0 / ztilde_t, M0_t ztilde_0 / ztilde_t)"""
        ratio = self.z0[:, None] / self.ztilde
        return np.concatenate([ratio[:, :, None], market.M0 * ratio[:, :, None]], axis=2)


def zeta_and_ztilde(problem, market):
    """Density of the variance-optimal measure when it is the minimal one

    Holds when k is deterministic or a function of the volatility factor,
    whose noise is independent of the price noise. The normalizer
    E E_T(-k' M0) = E exp(-K_T) is exact under that hypothesis.
    """
    if problem.spec.k_kind == "price":
        raise UnsupportedCaseError(
            "Market price of risk depends on the asset price; the variance-optimal "
            "density is only available for deterministic or volatility-driven k"
        )
    n = market.grid.n_steps
    P = market.n_paths
    if problem.spec.k_is_zero:
        density = DensityPaths(market.grid, np.ones((P, n + 1)), np.zeros((P, n, market.d)), 1.0)
        density.market = market
        return density
    dt = market.grid.steps
    k = market.k
    inc = -np.einsum("pja,pja->pj", k, market.dM0) - 0.5 * np.sum(k ** 2, axis=2) * dt
    log_e = np.concatenate([np.zeros((P, 1)), np.cumsum(inc, axis=1)], axis=1)
    normalizer = float(np.mean(np.exp(-market.K[:, -1])))
    E = np.exp(log_e)
    if not np.all(np.isfinite(E)) or normalizer <= 0.0:
        raise NumericError("Density exponential overflowed")
    zeta = -k * E[:, :-1, None] / normalizer
    density = DensityPaths(market.grid, E / normalizer, zeta, normalizer)
    density.market = market
    return density


def default_basis(x, y):
    """1, x_i, y, x_i y with x scaled by the initial prices"""
    y = y[:, None]
    return np.concatenate([np.ones_like(y), x, y, x * y], axis=1)


class GKWData:
    def __init__(self, grid, psi, U, L_terminal, mean_term, coef_psi, x_scale, basis, diagnostics):
        self.grid = grid
        self.psi = psi
        self.U = U
        self.L_terminal = L_terminal
        self.mean_term = mean_term
        self.coef_psi = coef_psi
        self.x_scale = x_scale
        self.basis = basis
        self.diagnostics = diagnostics

    @property
    def psi0H(self):
        return self.psi[:, :, 0]

    @property
    def psi1H(self):
        return self.psi[:, :, 1:]

    def psi_at(self, j, x, y):
        """Coefficients at step j for states (x, y), shape (P, 1 + d)"""
        b = self.basis(x / self.x_scale, y)
        return b @ self.coef_psi[j].T

    def to_dict(self):
        return OrderedDict(
            [("mean_term", self.mean_term), ("n_steps", self.grid.n_steps)]
            + list(self.diagnostics.items())
        )


def _weighted_corr(a, b, w):
    a = a - np.average(a, weights=w)
    b = b - np.average(b, weights=w)
    den = np.sqrt(np.average(a ** 2, weights=w) * np.average(b ** 2, weights=w))
    return 0.0 if den == 0.0 else float(np.average(a * b, weights=w) / den)


def gkw_decompose(problem, market, density=None, basis=default_basis):
    """Project H ztilde_0 / ztilde_T onto increments of U under Q~

    Backward in time, the value at step j+1 is regressed on b_j and
    b_j * dU_j with weights ztilde_T^2 / ztilde_0, b_j being the basis at
    (X_j, Y_j). Components of dU without variance at a step get a zero
    coefficient.
    """
    density = zeta_and_ztilde(problem, market) if density is None else density
    n = market.grid.n_steps
    P = market.n_paths
    H = terminal_payoff(problem, market)
    z0, zT = density.z0, density.terminal
    G = H * z0 / zT
    w = zT ** 2 / z0
    w = w / np.mean(w)
    sw = np.sqrt(w)
    U = density.U(market)
    dU = np.diff(U, axis=1)
    na = U.shape[2]
    x_scale = problem.spec.x0
    nb = basis(market.X[:, 0, :] / x_scale, market.Y[:, 0]).shape[1]
    coef_psi = np.zeros((n, na, nb))
    psi = np.zeros((P, n, na))
    value = G
    degenerate = 0
    for j in reversed(range(n)):
        b = basis(market.X[:, j, :] / x_scale, market.Y[:, j])
        scale = 1.0 + np.max(np.abs(U[:, j, :]))
        live = [a for a in range(na) if np.std(dU[:, j, a]) > 1e-14 * scale]
        degenerate += na - len(live)
        A = np.concatenate([b] + [b * dU[:, j, a : a + 1] for a in live], axis=1)
        beta = np.linalg.lstsq(A * sw[:, None], value * sw, rcond=None)[0]
        for i, a in enumerate(live):
            coef_psi[j, a] = beta[(i + 1) * nb : (i + 2) * nb]
        psi[:, j, :] = b @ coef_psi[j].T
        value = b @ beta[:nb]
    if degenerate and not problem.spec.k_is_zero:
        log.warning("{} regressor blocks without variance got zero coefficients".format(degenerate))
    elif degenerate:
        log.debug("{} regressor blocks without variance got zero coefficients".format(degenerate))
    mean_term = float(np.average(G, weights=w))
    integral = np.einsum("pja,pja->p", psi, dU)
    L = G - mean_term - integral
    # backward value at the first node against the weighted mean
    gap = value - mean_term
    sd = float(np.std(H))
    diagnostics = OrderedDict(
        [
            (
                "orthogonality",
                max(
                    [abs(_weighted_corr(L, U[:, -1, a] - U[:, 0, a], w)) for a in range(na) if np.std(U[:, -1, a]) > 0]
                    or [0.0]
                ),
            ),
            ("residual_ratio", float(np.std(L)) / sd if sd > 0 else 0.0),
            ("reconstruction_error", float(np.sqrt(np.mean(gap ** 2))) / sd if sd > 0 else 0.0),
            ("degenerate_blocks", degenerate),
        ]
    )
    log.debug("GKW decomposition: {}".format(dict(diagnostics)))
    return GKWData(market.grid, psi, U, L, mean_term, coef_psi, x_scale, basis, diagnostics)


class GeneralStrategy(StrategyRule):
    """theta = (sigma0')^{-1} [psi1 + (zeta / ztilde_0)(Vbar - psi' U)]

    Vbar_t = x + sum psi' dU is accumulated along the paths with
    coefficients taken from a GKW regression. The wealth of the strategy is
    (ztilde_t / ztilde_0) Vbar_t.
    """

    name = "general"

    def __init__(self, problem, gkw, capital=None, density=None):
        self.problem = problem
        self.gkw = gkw
        self.density = density
        if capital is None:
            capital = gkw.mean_term if problem.capital == "auto" else problem.capital
        self.capital = float(capital)
        self.value = None

    def along(self, market, density=None):
        if market.grid.n_steps != self.gkw.grid.n_steps:
            raise ConfigError("Market grid does not match the regression grid")
        if density is None and self.density is not None and self.density.market is market:
            density = self.density
        if density is None:
            density = zeta_and_ztilde(self.problem, market)
        U = density.U(market)
        dU = np.diff(U, axis=1)
        sig0 = reference_sigma(self.problem.spec, market)
        P, n, d = market.n_paths, market.grid.n_steps, market.d
        theta = np.zeros((P, n, d))
        value = np.zeros((P, n + 1))
        vbar = np.full(P, self.capital)
        for j in range(n):
            psi = self.gkw.psi_at(j, market.X[:, j, :], market.Y[:, j])
            value[:, j] = density.ztilde[:, j] / density.z0 * vbar
            zeta = density.zeta[:, j, :] / density.z0[:, None]
            rhs = psi[:, 1:] + zeta * (vbar - np.sum(psi * U[:, j, :], axis=1))[:, None]
            if d == 1:
                s0 = sig0[:, j, 0, 0]
                if np.any(s0 == 0.0):
                    raise SingularMatrixError("sigma0 vanishes at s={}".format(market.grid.nodes[j]))
                theta[:, j, 0] = rhs[:, 0] / s0
            else:
                try:
                    theta[:, j, :] = np.linalg.solve(np.swapaxes(sig0[:, j], 1, 2), rhs[:, :, None])[:, :, 0]
                except np.linalg.LinAlgError:
                    raise SingularMatrixError("sigma0 is singular at s={}".format(market.grid.nodes[j]))
            vbar = vbar + np.sum(psi * dU[:, j, :], axis=1)
        value[:, n] = density.ztilde[:, n] / density.z0 * vbar
        self.value = value
        return theta


def strategy_general(problem, gkw, zeta_ztilde=None):
    return GeneralStrategy(problem, gkw, density=zeta_ztilde)


def phi_from_gkw(gkw):
    """psi1 of the regression as a phi functional (zero drift, one asset)"""
    nodes = gkw.grid.nodes

    def phi(t, x, y, sig0):
        j = min(int(np.searchsorted(nodes, t - 1e-12 * max(1.0, abs(t)))), len(nodes) - 2)
        return gkw.psi_at(j, x, y)[:, 1]

    return phi


# Reports


def time_volatility(grid, values):
    """sigma0(t) interpolated from node values"""
    nodes = np.array(grid.nodes)
    values = np.array(values, dtype=float)
    return lambda t, y: np.interp(t, nodes, values)


def _map(fn, items, threads):
    """fn over items in order, on a thread pool when threads > 1"""
    items = list(items)
    if threads > 1 and len(items) > 1:
        with Pool(min(threads, len(items))) as pool:
            return pool.map(fn, items)
    return [fn(item) for item in items]


def hedge_report(problem, grid, n_paths=2000, seed=0, strategy=None, train_paths=None, threads=1):
    """Risk of a strategy at sigma0, DJ over a test grid and the worst case

    Without a strategy the GKW one is fitted on its own paths and evaluated
    on independent ones. Without drift the DJ is the analytic one, with the
    pathwise estimate next to it.
    """
    train_paths = n_paths if train_paths is None else train_paths
    gkw = None
    if strategy is None or problem.spec.k_is_zero:
        train = reference_market(problem, grid, seed, train_paths, first=n_paths)
        gkw = gkw_decompose(problem, train)
    if strategy is None:
        strategy = strategy_general(problem, gkw)
    market = reference_market(problem, grid, seed, n_paths)
    J = risk_J(problem, ReferenceVolatility(problem.spec), strategy, market=market)
    theta = strategy.along(market)
    zero_drift = problem.spec.k_is_zero and problem.d == 1
    phi = phi_from_gkw(gkw) if zero_drift and gkw is not None else None
    method = "pathwise" if phi is None else "analytic"

    def differential(h):
        result = gateaux_DJ(problem, strategy, h, phi=phi, market=market, method=method)
        entry = OrderedDict(
            [("h", h.to_dict()), ("method", method), ("DJ", result.value), ("std_err", result.std_err)]
        )
        if method == "analytic":
            check = gateaux_DJ(problem, strategy, h, market=market, method="pathwise")
            entry["DJ_pathwise"] = check.value
            entry["std_err_pathwise"] = check.std_err
        return entry

    dj = _map(differential, dj_test_grid(problem, grid.t_end), threads)
    worst = None
    if phi is not None:
        sigma_star = worst_case_sigma(problem, strategy, phi)
        worst = risk_J(problem, sigma_star, strategy, market=market).to_dict()
    return OrderedDict(
        [
            ("problem", problem.to_dict()),
            ("J", J.value),
            ("SE", J.std_err),
            ("DJ_grid", dj),
            ("worst_case_J", worst),
            ("strategy_stats", strategy.stats(market)),
            ("strategy", OrderedDict([("s", grid.nodes[:-1]), ("theta_mean", theta[:, :, 0].mean(axis=0))])),
        ]
    )


def band_problems(problem, band, width=None):
    """Problems with sigma0 at the band center and at the non-robust sigma*"""
    width = float(np.max(band.half_width)) if width is None else float(width)
    robust = problem.with_sigma0(time_volatility(band.grid, band.center), width)
    naive = problem.with_sigma0(time_volatility(band.grid, band.sigma_star), width)
    return robust, naive, width


def robust_vs_nonrobust(problem, band, n_paths=2000, seed=0, grid=None, width=None, threads=1):
    """Hedge with sigma0 at the band center versus the non-robust sigma*

    Both strategies are scored at the band center and at its two constant
    edges; the correction |sigma* - sigma0| is reported along the grid.
    """
    grid = band.grid if grid is None else grid
    robust, naive, width = band_problems(problem, band, width)
    scores = OrderedDict()
    rules = OrderedDict()
    market = reference_market(robust, grid, seed, n_paths)

    def score(item):
        name, prob = item
        train = reference_market(prob, grid, seed, n_paths, first=n_paths)
        rule = strategy_general(prob, gkw_decompose(prob, train))
        rule.name = name
        risks = OrderedDict()
        for label, shift in (("center", 0.0), ("low", -width), ("high", width)):
            risks[label] = risk_J(robust, ShiftedVolatility(robust.spec, shift), rule, market=market).to_dict()
        risks["sup"] = max(v["J"] for v in risks.values())
        return name, rule, risks

    for name, rule, risks in _map(score, (("robust", robust), ("nonrobust", naive)), threads):
        rules[name] = rule
        scores[name] = risks
        scores[name + "_theta0"] = rule.along(market)[:, 0, :].mean(axis=0)
    theta = rules["robust"].along(market)
    scores["correction"] = band.correction
    scores["strategy"] = OrderedDict(
        [("s", grid.nodes[:-1]), ("theta_mean", theta[:, :, 0].mean(axis=0))]
    )
    return scores
