"""Influence functions for M-estimation of the drift parameter.

All limit quantities are trapezoid integrals along the noiseless path
Y0(alpha):

    Gamma0 = int psi psi'     gamma0 = int psi a_dot'     I0 = int a_dot a_dot'

V = gamma0^{-1} Gamma0 gamma0^{-T} is the asymptotic covariance of
eps^{-1}(alpha_hat - alpha). The optimal bounded influence is
psi* = h_c(A a_dot) with A solving int h_c(A a_dot) a_dot' = Id.
"""

import math
from collections import OrderedDict

import numpy as np
from scipy import optimize

from robust_hedge import log
from robust_hedge.errors import (
    ConfigError,
    SingularMatrixError,
    InfeasibleTruncationError,
    ConvergenceError,
    CStarError,
    NumericError,
)
from robust_hedge.grid import trapezoid
from robust_hedge.models import as_alpha
from robust_hedge.sde import (
    solve_limit_ode,
    ContaminationSpec,
    constant_contamination,
    plateau_contamination,
    spike_contamination,
)

RANK_TOL = 1e-12


def huber_clip(z, c):
    """z * min(1, c / |z|) over the last axis"""
    if not c > 0:
        raise ConfigError("Clipping level must be positive, got {}".format(c))
    z = np.asarray(z, dtype=float)
    if z.ndim == 0 or z.shape[-1] == 1:
        return np.clip(z, -c, c)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        scale = np.where(norm > c, c / norm, 1.0)
    return z * scale


class InfluenceSpec:
    """psi(s, xs, alpha) along a path, one m-vector per node

    A, when set, was computed at alpha_ref and stays fixed when psi is
    evaluated at other parameters.
    """

    def __init__(self, psi, m, clip_c=None, A=None, name="custom", alpha_ref=None):
        if clip_c is not None and not clip_c > 0:
            raise ConfigError("clip_c must be positive, got {}".format(clip_c))
        self.psi = psi
        self.m = int(m)
        self.clip_c = None if clip_c is None else float(clip_c)
        self.A = None if A is None else np.asarray(A, dtype=float)
        self.name = name
        self.alpha_ref = alpha_ref
        self.diagnostics = OrderedDict()

    def along(self, s, xs, alpha):
        out = np.asarray(self.psi(s, xs, alpha), dtype=float)
        if out.shape[-1] != self.m:
            raise ConfigError(
                "Influence '{}' returned {} components, expected {}".format(
                    self.name, out.shape[-1], self.m
                )
            )
        return out

    def to_dict(self):
        data = OrderedDict([("kind", self.name), ("m", self.m), ("clip_c", self.clip_c)])
        if self.A is not None:
            data["A"] = self.A
        data.update(self.diagnostics)
        return data

    def __repr__(self):
        return "InfluenceSpec({!r}, m={}, clip_c={})".format(self.name, self.m, self.clip_c)


def score_influence(model):
    """psi = a_dot, the maximum likelihood score"""
    return InfluenceSpec(model.drift_grad_along, model.m, name="score")


def constant_influence(m=1, value=1.0):
    def psi(s, xs, alpha):
        shape = np.broadcast_shapes(np.shape(s), np.shape(xs))
        return np.full(shape + (m,), float(value))

    return InfluenceSpec(psi, m, name="constant")


def linear_influence(model, B):
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return InfluenceSpec(
        lambda s, xs, alpha: model.drift_grad_along(s, xs, alpha) @ B.T, model.m, name="linear"
    )


def truncated_score(model, c):
    """Clipped score h_c(a_dot); for m=1 this is a_dot truncated to [-c, c]"""
    return InfluenceSpec(
        lambda s, xs, alpha: huber_clip(model.drift_grad_along(s, xs, alpha), c),
        model.m,
        clip_c=c,
        name="truncated",
    )


def clipped_influence(model, c, A, name="clipped", alpha_ref=None):
    A = np.asarray(A, dtype=float)
    return InfluenceSpec(
        lambda s, xs, alpha: huber_clip(model.drift_grad_along(s, xs, alpha) @ A.T, c),
        model.m,
        clip_c=c,
        A=A,
        name=name,
        alpha_ref=alpha_ref,
    )


def _integrands(model, psi, alpha, grid, path=None):
    alpha = as_alpha(alpha, model.m)
    if path is None:
        path = solve_limit_ode(model, alpha, grid)
    s, y = path.s, path.x
    p = psi.along(s, y, alpha) if psi is not None else None
    adot = model.drift_grad_along(s, y, alpha)
    return s, y, p, adot


def _outer_integral(u, v, grid):
    return trapezoid(u[:, :, None] * v[:, None, :], grid)


class LimitMatrices:
    def __init__(self, Gamma0, gamma0, I0):
        self.Gamma0 = np.atleast_2d(Gamma0)
        self.gamma0 = np.atleast_2d(gamma0)
        self.I0 = np.atleast_2d(I0)
        self.m = self.Gamma0.shape[0]
        self.rank_Gamma = _rank(self.Gamma0)
        self.rank_gamma = _rank(self.gamma0)
        self.rank_I = _rank(self.I0)

    @property
    def standardizable(self):
        return self.rank_gamma == self.m

    def to_dict(self):
        return OrderedDict(
            [
                ("Gamma0", self.Gamma0),
                ("gamma0", self.gamma0),
                ("I0", self.I0),
                ("rank_Gamma0", self.rank_Gamma),
                ("rank_gamma0", self.rank_gamma),
                ("standardizable", self.standardizable),
            ]
        )


def _rank(M):
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    return int(np.linalg.matrix_rank(M, tol=RANK_TOL * scale))


def limit_matrices(model, psi, alpha, grid, path=None):
    s, y, p, adot = _integrands(model, psi, alpha, grid, path)
    lm = LimitMatrices(
        _outer_integral(p, p, grid), _outer_integral(p, adot, grid), _outer_integral(adot, adot, grid)
    )
    if not lm.standardizable:
        log.warning(
            "gamma0 of influence '{}' has rank {} < {}: estimate cannot be standardized".format(
                psi.name, lm.rank_gamma, lm.m
            )
        )
    return lm


def _inverse(M, what):
    M = np.atleast_2d(M)
    if _rank(M) < M.shape[0]:
        raise SingularMatrixError("{} is singular".format(what))
    return np.linalg.inv(M)


def asymptotic_cov(lm):
    G = _inverse(lm.gamma0, "gamma0")
    V = G @ lm.Gamma0 @ G.T
    return 0.5 * (V + V.T)


def gross_error_sensitivity(model, psi, alpha, grid, standardized=True, path=None):
    """Largest norm of gamma0^{-1} psi over the nodes of the limit path"""
    s, y, p, adot = _integrands(model, psi, alpha, grid, path)
    if standardized:
        G = _inverse(_outer_integral(p, adot, grid), "gamma0")
        p = p @ G.T
    return float(np.max(np.linalg.norm(p, axis=-1)))


class BiasResult:
    def __init__(self, b, b_tilde):
        self.b = b
        self.b_tilde = b_tilde

    def to_dict(self):
        return OrderedDict([("b", self.b), ("b_tilde", self.b_tilde)])


def bias_functional(model, psi, h, alpha, grid, path=None):
    """b = int psi h along Y0 and its standardized form gamma0^{-1} b"""
    alpha = as_alpha(alpha, model.m)
    s, y, p, adot = _integrands(model, psi, alpha, grid, path)
    hv = h.check(h.along(s, y, alpha))
    b = trapezoid(p * hv[:, None], grid)
    G = _inverse(_outer_integral(p, adot, grid), "gamma0")
    return BiasResult(b, G @ b)


def risk_functional(model, psi, h, alpha, grid, path=None):
    """|b_tilde|^2 + tr V"""
    alpha = as_alpha(alpha, model.m)
    if path is None:
        path = solve_limit_ode(model, alpha, grid)
    bias = bias_functional(model, psi, h, alpha, grid, path)
    V = asymptotic_cov(limit_matrices(model, psi, alpha, grid, path))
    return float(bias.b_tilde @ bias.b_tilde + np.trace(V))


def minimax_risk(model, psi, alpha, r, grid, path=None):
    """Largest risk over alternatives with int |h(s, Y0)| ds <= r

    The bias is largest for an impulse where |gamma0^{-1} psi| peaks, which
    gives r^2 gamma*^2 + tr V.
    """
    alpha = as_alpha(alpha, model.m)
    if path is None:
        path = solve_limit_ode(model, alpha, grid)
    g = gross_error_sensitivity(model, psi, alpha, grid, path=path)
    V = asymptotic_cov(limit_matrices(model, psi, alpha, grid, path))
    return float(r ** 2 * g ** 2 + np.trace(V))


def solve_A_star(model, alpha, c, grid, eta=0.5, max_iter=500, tol=1e-10, path=None):
    """Solve int h_c(A a_dot) a_dot' ds = Id by damped fixed point

    A <- A + eta (Id - int h_c(A a_dot) a_dot') I0^{-1}, from A = I0^{-1}.
    """
    if not c > 0:
        raise ConfigError("Clipping level must be positive, got {}".format(c))
    s, y, _, adot = _integrands(model, None, alpha, grid, path)
    m = adot.shape[-1]
    I0 = _outer_integral(adot, adot, grid)
    I_inv = _inverse(I0, "Fisher information I0")

    # F_ii <= c int |a_dot_i| for every A
    reach = c * trapezoid(np.abs(adot), grid)
    if np.any(reach < 1.0 - 1e-12):
        raise InfeasibleTruncationError(
            "c={} is infeasible: c * int|a_dot_i| = {} < 1".format(c, np.min(reach))
        )

    identity = np.eye(m)
    A = I_inv.copy()
    trace = []
    for it in range(max_iter + 1):
        F = _outer_integral(huber_clip(adot @ A.T, c), adot, grid)
        residual = identity - F
        norm = float(np.linalg.norm(residual))
        trace.append(norm)
        if norm < tol:
            log.debug("A* for c={} converged in {} iterations".format(c, it))
            _inverse(A, "A*")
            return A
        if it >= 50 and norm > 0.999 * trace[it - 50]:
            raise ConvergenceError(
                "A* for c={} stalled at residual {}".format(c, norm), residual=norm, trace=trace
            )
        if it == max_iter:
            break
        A = A + eta * residual @ I_inv
    raise ConvergenceError(
        "A* for c={} did not converge in {} iterations (residual {})".format(c, max_iter, trace[-1]),
        residual=trace[-1],
        trace=trace,
    )


def optimal_influence(model, alpha, c, grid, path=None, **kwargs):
    """psi* = h_c(A* a_dot) with A* frozen at alpha"""
    alpha = as_alpha(alpha, model.m)
    if path is None:
        path = solve_limit_ode(model, alpha, grid)
    A = solve_A_star(model, alpha, c, grid, path=path, **kwargs)
    psi = clipped_influence(model, c, A, name="optimal", alpha_ref=alpha)
    lm = limit_matrices(model, psi, alpha, grid, path)
    gamma_error = float(np.max(np.abs(lm.gamma0 - np.eye(model.m))))
    sup = gross_error_sensitivity(model, psi, alpha, grid, standardized=False, path=path)
    psi.diagnostics["gamma0_error"] = gamma_error
    psi.diagnostics["sup_norm"] = sup
    if gamma_error > 1e-8 or sup > c * (1.0 + 1e-12):
        log.warning(
            "Optimal influence off its side conditions: |gamma0 - Id| = {}, sup = {}".format(
                gamma_error, sup
            )
        )
    return psi


def c_star_residual(adot, c, r, grid):
    clipped = np.clip(adot, -c, c)
    return float(
        trapezoid(clipped * adot, grid) - trapezoid(clipped ** 2, grid) - r ** 2 * c ** 2
    )


def solve_c_star(model, alpha, r, grid, path=None):
    """Optimal truncation level of the clipped score (one parameter)

    Root in (0, sup|a_dot|) of r^2 c^2 = int [a_dot]c a_dot - int [a_dot]c^2.
    """
    if model.m != 1:
        raise ConfigError("Optimal truncation needs a one-parameter model, m={}".format(model.m))
    if not r > 0:
        raise ConfigError("Contamination radius must be positive, got {}".format(r))
    s, y, _, adot = _integrands(model, None, alpha, grid, path)
    adot = adot[:, 0]
    sup = float(np.max(np.abs(adot)))

    def g(c):
        return c_star_residual(adot, c, r, grid)

    lo, hi = sup * 1e-12, sup
    if not (sup > 0 and g(lo) > 0 and g(hi) < 0):
        cs = np.linspace(lo, hi, 21) if sup > 0 else np.zeros(1)
        curve = [(float(c), g(c)) for c in cs]
        raise CStarError(
            "No sign change of the truncation equation on (0, {}]: {}".format(sup, curve),
            curve=curve,
        )
    c = optimize.bisect(g, lo, hi, xtol=1e-15, maxiter=500)
    residual = abs(g(c))
    if residual >= 1e-10:
        raise ConvergenceError(
            "Truncation root residual {} too large".format(residual), residual=residual
        )
    log.debug("c* = {} for r = {}".format(c, r))
    return float(c)


def scaled_to_ball(h, r, model, alpha, grid, path=None):
    """Rescale h so that int |h(s, Y0)| ds = r"""
    alpha = as_alpha(alpha, model.m)
    if path is None:
        path = solve_limit_ode(model, alpha, grid)
    norm = h.l1_norm(path.s, path.x, alpha, grid)
    if norm == 0.0:
        return h
    k = r / norm
    return ContaminationSpec(
        lambda s, state, a: k * np.asarray(h.fn(s, state, a)),
        h.bound * abs(k),
        h.name,
        h.path,
        OrderedDict(list(h.params.items()) + [("l1", r)]),
    )


def h_grid(r, model, alpha, grid, path=None):
    """Twenty alternatives on the boundary of the L1 ball of radius r

    Constants, impulses at five nodes and plateaus on the four quarters,
    each with both signs.
    """
    t = grid.t_end
    nodes = grid.nodes
    raw = [constant_contamination(1.0)]
    for q in (0.0, 0.25, 0.5, 0.75, 1.0):
        at = float(nodes[int(np.argmin(np.abs(nodes - q * t)))])
        raw.append(spike_contamination(1.0, at))
    for q in range(4):
        raw.append(plateau_contamination(1.0, q * t / 4, (q + 1) * t / 4))
    out = []
    for h in raw:
        for sign in (1.0, -1.0):
            out.append(scaled_to_ball(h, sign * r, model, alpha, grid, path))
    return out


def tune_c(model, alpha, r, grid, path=None):
    """Truncation level minimizing the minimax risk

    The one-parameter case has the root of solve_c_star. Otherwise the
    optimal influence is scanned by a bounded search in log c between the
    feasibility limit and the level where clipping stops binding.
    """
    if model.m == 1:
        return solve_c_star(model, alpha, r, grid, path)
    alpha = as_alpha(alpha, model.m)
    if path is None:
        path = solve_limit_ode(model, alpha, grid)
    s, y, _, adot = _integrands(model, None, alpha, grid, path)
    c_min = float(np.max(1.0 / trapezoid(np.abs(adot), grid)))
    # above the sup of the standardized score nothing is clipped
    I_inv = _inverse(_outer_integral(adot, adot, grid), "Fisher information I0")
    c_max = max(float(np.max(np.linalg.norm(adot @ I_inv.T, axis=-1))), 1.1 * c_min)
    c_max = min(c_max, 50.0 * c_min)

    def risk(log_c):
        try:
            psi = optimal_influence(model, alpha, math.exp(log_c), grid, path)
            return minimax_risk(model, psi, alpha, r, grid, path)
        except NumericError:
            return np.inf

    res = optimize.minimize_scalar(
        risk,
        bounds=(math.log(1.05 * c_min), math.log(c_max)),
        method="bounded",
        options={"xatol": 1e-3},
    )
    if not np.isfinite(res.fun):
        raise CStarError("No feasible truncation level in [{}, {}]".format(1.05 * c_min, c_max))
    log.debug("Tuned c = {} with minimax risk {}".format(math.exp(res.x), res.fun))
    return float(math.exp(res.x))
