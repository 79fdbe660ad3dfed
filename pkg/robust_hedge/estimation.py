"""M-estimates of the drift parameter from one observed path, their
confidence regions, and Monte Carlo studies of their limit law."""

import itertools
from collections import OrderedDict
from multiprocessing.dummy import Pool

import numpy as np
from scipy import stats

from robust_hedge import log
from robust_hedge.errors import (
    ConfigError,
    ConvergenceError,
    NumericError,
    SingularMatrixError,
    StudyError,
)
from robust_hedge.grid import SamplePath, TimeGrid, make_grid
from robust_hedge.influence import (
    asymptotic_cov,
    bias_functional,
    constant_influence,
    gross_error_sensitivity,
    limit_matrices,
    linear_influence,
    optimal_influence,
    score_influence,
    truncated_score,
    tune_c,
)
from robust_hedge.models import as_alpha, model_from_json
from robust_hedge.sde import (
    contamination_from_json,
    simulate_contaminated_batch,
    simulate_small_noise_batch,
    solve_limit_ode,
)
from robust_hedge.seeds import as_seed


def estimating_function(model, psi, s, y, alpha):
    """sum_j psi(s_j, Y; alpha) (dY_j - a(s_j, Y; alpha) ds_j)"""
    dt = np.diff(s)
    a = model.drift_along(s, y, alpha)[..., :-1]
    p = psi.along(s, y, alpha)[..., :-1, :]
    innovation = np.diff(y, axis=-1) - a * dt
    return np.einsum("...jm,...j->...m", p, innovation)


class EstimateResult:
    def __init__(self, alpha_hat, iterations, residual, trace, V=None, gamma_star=None):
        self.alpha_hat = alpha_hat
        self.iterations = iterations
        self.residual = residual
        self.trace = trace
        self.V = V
        self.gamma_star = gamma_star

    def to_dict(self):
        return OrderedDict(
            [
                ("alpha_hat", self.alpha_hat),
                ("V", self.V),
                ("gamma_star", self.gamma_star),
                ("iterations", self.iterations),
                ("residual", self.residual),
                ("trace", self.trace),
            ]
        )


def coarse_start(model, psi, data, box=(-5.0, 5.0), points=11):
    """Grid point of the box with the smallest estimating-function norm"""
    axis = np.linspace(box[0], box[1], points)
    s, y = data.s, data.x
    best, best_norm = None, np.inf
    for alpha in itertools.product(axis, repeat=model.m):
        alpha = np.array(alpha)
        with np.errstate(all="ignore"):
            norm = np.linalg.norm(estimating_function(model, psi, s, y, alpha))
        if np.isfinite(norm) and norm < best_norm:
            best, best_norm = alpha, norm
    if best is None:
        raise ConvergenceError("Estimating function is not finite anywhere on the start grid")
    return best


def _jacobian(L, alpha, L0=None):
    m = len(alpha)
    J = np.zeros((m, m))
    for i in range(m):
        step = 1e-6 * (1.0 + abs(alpha[i]))
        e = np.zeros(m)
        e[i] = step
        J[:, i] = (L(alpha + e) - L(alpha - e)) / (2 * step)
    return J


def m_estimate(
    model,
    psi,
    data,
    alpha_init=None,
    max_iter=100,
    xtol=1e-13,
    diagnostics=True,
):
    """Root of the discretized estimating equation by damped Newton

    The Jacobian uses central differences with step 1e-6 (1 + |alpha_i|);
    each step is halved until the residual norm decreases.
    """
    if data.d != 1:
        raise ConfigError("Estimation needs a one-dimensional path")
    s, y = data.s, data.x
    if alpha_init is None:
        alpha_init = coarse_start(model, psi, data)
    alpha = as_alpha(alpha_init, model.m).copy()

    def L(a):
        return estimating_function(model, psi, s, y, a)

    scale = max(1.0, float(np.sum(np.abs(psi.along(s, y, alpha)[:-1]) * np.abs(np.diff(y))[:, None])))
    atol = 1e-14 * scale
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        value = L(alpha)
        norm = float(np.linalg.norm(value))
        trace.append(norm)
        if not np.isfinite(norm):
            raise ConvergenceError("Estimating function is not finite at {}".format(alpha), norm, trace)
        if norm <= atol:
            converged = True
            break
        J = _jacobian(L, alpha)
        if not np.all(np.isfinite(J)) or np.linalg.matrix_rank(J) < model.m:
            raise SingularMatrixError("Singular Jacobian of the estimating equation at {}".format(alpha))
        step = np.linalg.solve(J, -value)
        if np.linalg.norm(step) <= xtol * (1.0 + np.linalg.norm(alpha)):
            alpha = alpha + step
            converged = True
            break
        lam = 1.0
        while True:
            candidate = alpha + lam * step
            cand_norm = float(np.linalg.norm(L(candidate)))
            if np.isfinite(cand_norm) and cand_norm < norm:
                break
            lam /= 2
            if lam < 1e-10:
                raise ConvergenceError(
                    "Newton step failed to reduce the residual {} at {}".format(norm, alpha),
                    norm,
                    trace,
                )
        alpha = candidate
        if np.linalg.norm(lam * step) <= xtol * (1.0 + np.linalg.norm(alpha)):
            converged = True
            break
    residual = float(np.linalg.norm(L(alpha)))
    if not converged:
        raise ConvergenceError(
            "Newton did not converge in {} iterations (residual {})".format(max_iter, residual),
            residual,
            trace,
        )
    log.debug("M-estimate {} after {} iterations, residual {}".format(alpha, it, residual))
    result = EstimateResult(alpha, it, residual, trace)
    if diagnostics:
        grid = data.grid
        path = solve_limit_ode(model, alpha, grid)
        result.V = asymptotic_cov(limit_matrices(model, psi, alpha, grid, path))
        result.gamma_star = gross_error_sensitivity(model, psi, alpha, grid, path=path)
    return result


class ConfidenceRegion:
    """{alpha : (alpha - center)' V^{-1} (alpha - center) <= radius^2}"""

    def __init__(self, center, shape, radius, level):
        self.center = np.asarray(center, dtype=float)
        self.shape = np.atleast_2d(shape)
        self.radius = float(radius)
        self.level = level
        try:
            self._chol = np.linalg.cholesky(self.shape)
        except np.linalg.LinAlgError:
            raise SingularMatrixError("Covariance of the region is not positive definite")

    def distance2(self, alpha):
        diff = np.asarray(alpha, dtype=float) - self.center
        z = np.linalg.solve(self._chol, diff.T).T
        return np.sum(z ** 2, axis=-1)

    def contains(self, alpha):
        return self.distance2(alpha) <= self.radius ** 2

    @property
    def half_widths(self):
        return self.radius * np.sqrt(np.diag(self.shape))

    def boundary(self, count=64):
        """Points on the ellipsoid surface (two per axis for m=1)"""
        m = len(self.center)
        if m == 1:
            dirs = np.array([[-1.0], [1.0]])
        elif m == 2:
            angle = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
            dirs = np.stack([np.cos(angle), np.sin(angle)], axis=-1)
        else:
            eye = np.eye(m)
            dirs = np.concatenate([eye, -eye])
        return self.center + self.radius * dirs @ self._chol.T

    def to_dict(self):
        return OrderedDict(
            [
                ("center", self.center),
                ("shape", self.shape),
                ("radius", self.radius),
                ("level", self.level),
                ("half_widths", self.half_widths),
            ]
        )


def confidence_region(est, epsilon, level=0.05, V=None):
    """Ellipsoid of asymptotic coverage 1 - level around alpha_hat"""
    if not 0.0 < level < 1.0:
        raise ConfigError("Level must be in (0, 1), got {}".format(level))
    V = est.V if V is None else V
    if V is None:
        raise ConfigError("Estimate carries no covariance")
    m = len(est.alpha_hat)
    q = stats.chi2.ppf(1.0 - level, m)
    return ConfidenceRegion(est.alpha_hat, V, epsilon * np.sqrt(q), level)


class VolBand:
    def __init__(self, grid, y_lo, y_hi, sigma_lo, sigma_hi, sigma_star):
        self.grid = grid
        self.y_lo = y_lo
        self.y_hi = y_hi
        self.sigma_lo = sigma_lo
        self.sigma_hi = sigma_hi
        self.sigma_star = sigma_star

    @property
    def center(self):
        return 0.5 * (self.sigma_lo + self.sigma_hi)

    @property
    def half_width(self):
        return 0.5 * (self.sigma_hi - self.sigma_lo)

    @property
    def correction(self):
        """|sigma* - sigma0| between the non-robust and the band center"""
        return np.abs(self.sigma_star - self.center)

    def to_dict(self):
        return OrderedDict(
            [
                ("s", self.grid.nodes),
                ("y_lo", self.y_lo),
                ("y_hi", self.y_hi),
                ("sigma_lo", self.sigma_lo),
                ("sigma_hi", self.sigma_hi),
                ("sigma0", self.center),
                ("half_width", self.half_width),
                ("sigma_star", self.sigma_star),
                ("correction", self.correction),
            ]
        )


def volatility_band(model, region, grid, vol_map):
    """Map the parameter region through alpha -> Y0(alpha) -> f^{1/2}"""
    paths = [solve_limit_ode(model, a, grid).x for a in region.boundary()]
    paths.append(solve_limit_ode(model, region.center, grid).x)
    paths = np.array(paths)
    y_lo = paths.min(axis=0)
    y_hi = paths.max(axis=0)
    s_lo = vol_map.sigma(y_lo)
    s_hi = vol_map.sigma(y_hi)
    lo, hi = np.minimum(s_lo, s_hi), np.maximum(s_lo, s_hi)
    return VolBand(grid, y_lo, y_hi, lo, hi, vol_map.sigma(paths[-1]))


def band_from_dict(data):
    arr = {key: np.asarray(data[key], dtype=float) for key in ("y_lo", "y_hi", "sigma_lo", "sigma_hi", "sigma_star")}
    return VolBand(
        TimeGrid(data["s"]),
        arr["y_lo"],
        arr["y_hi"],
        arr["sigma_lo"],
        arr["sigma_hi"],
        arr["sigma_star"],
    )


def region_from_dict(data):
    return ConfidenceRegion(data["center"], data["shape"], data["radius"], data["level"])


def influence_from_json(data, model, alpha, grid):
    data = data or {"kind": "score"}
    kind = data.get("kind", "score")
    if kind == "score":
        return score_influence(model)
    if kind == "constant":
        return constant_influence(model.m, data.get("value", 1.0))
    if kind == "linear":
        if "B" not in data:
            raise ConfigError("Influence 'linear' needs a matrix B")
        return linear_influence(model, data["B"])
    if kind in ("truncated", "optimal"):
        c = data.get("c", "auto")
        if c == "auto":
            if "r" not in data:
                raise ConfigError("Influence '{}' with c=auto needs r".format(kind))
            c = tune_c(model, alpha, float(data["r"]), grid)
        if kind == "truncated":
            return truncated_score(model, float(c))
        return optimal_influence(model, alpha, float(c), grid)
    raise ConfigError("Unknown influence kind '{}'".format(kind))


STUDY_DEFAULTS = OrderedDict(
    [
        ("replicates", 2000),
        ("n_steps", 1000),
        ("seed", 0),
        ("level", 0.05),
        ("failure_threshold", 0.05),
        ("chunk", 250),
        ("influence", {"kind": "score"}),
        ("contamination", {"kind": "zero"}),
    ]
)


def _moments(Z):
    n, m = Z.shape
    mean = Z.mean(axis=0) if n else np.zeros(m)
    if n > 1:
        cov = np.atleast_2d(np.cov(Z, rowvar=False))
        sd = np.sqrt(np.diag(cov))
    else:
        cov = np.zeros((m, m))
        sd = np.zeros(m)
    se = sd / np.sqrt(max(n, 1))
    if n > 2 and np.all(sd > 0):
        skew = stats.skew(Z, axis=0)
        kurt = stats.kurtosis(Z, axis=0)
    else:
        skew = np.zeros(m)
        kurt = np.zeros(m)
    return mean, cov, se, skew, kurt


class StudyReport:
    def __init__(self, summary, standardized):
        self.summary = summary
        self.standardized = standardized

    def to_dict(self):
        return self.summary


def mc_study(config, threads=1):
    """Empirical law of eps^{-1}(alpha_hat - alpha) over simulated replicates

    Coverage counts the replicates whose own confidence region, with V at
    their estimate, holds the true parameter.
    """
    cfg = OrderedDict(STUDY_DEFAULTS)
    cfg.update(config)
    missing = [key for key in ("model", "alpha") if key not in cfg]
    if missing:
        raise ConfigError("Study config is missing: {}".format(", ".join(missing)))
    model = model_from_json(cfg["model"])
    if "epsilon" in cfg:
        model = model.with_epsilon(cfg["epsilon"])
    eps = model.epsilon
    alpha = as_alpha(cfg["alpha"], model.m)
    grid = make_grid(model.t_end, int(cfg["n_steps"]))
    seed = as_seed(int(cfg["seed"]))
    R = int(cfg["replicates"])
    if R < 1:
        raise ConfigError("replicates must be >= 1")
    psi = influence_from_json(cfg["influence"], model, alpha, grid)
    h = contamination_from_json(cfg["contamination"])
    contaminated = h.name != "zero"
    chunk = max(1, int(cfg["chunk"]))
    chunks = [range(i, min(i + chunk, R)) for i in range(0, R, chunk)]

    def run_chunk(reps):
        if contaminated:
            Y = simulate_contaminated_batch(model, alpha, h, grid, seed, reps)
        else:
            Y = simulate_small_noise_batch(model, alpha, grid, seed, reps)
        out = []
        for k, row in zip(reps, Y):
            try:
                est = m_estimate(model, psi, SamplePath(grid, row), alpha, diagnostics=False)
                est.V = asymptotic_cov(
                    limit_matrices(model, psi, est.alpha_hat, grid, solve_limit_ode(model, est.alpha_hat, grid))
                )
                covered = bool(confidence_region(est, eps, cfg["level"]).contains(alpha))
                out.append(((est.alpha_hat - alpha) / eps, covered))
            except NumericError as e:
                log.debug("Replicate {} failed: {}".format(k, e))
                out.append(None)
        return out

    log.info("Running {} replicates in {} chunks on {} threads".format(R, len(chunks), threads))
    if threads > 1:
        with Pool(threads) as pool:
            results = pool.map(run_chunk, chunks)
    else:
        results = [run_chunk(c) for c in chunks]
    flat = [z for part in results for z in part]
    failures = sum(1 for z in flat if z is None)
    if failures > cfg["failure_threshold"] * R:
        raise StudyError("{} of {} replicates failed".format(failures, R))
    if failures:
        log.warning("{} of {} replicates failed and were dropped".format(failures, R))
    kept = [z for z in flat if z is not None]
    Z = np.array([z for z, _ in kept]).reshape(-1, model.m)
    inside = np.array([covered for _, covered in kept], dtype=bool)

    path = solve_limit_ode(model, alpha, grid)
    V = asymptotic_cov(limit_matrices(model, psi, alpha, grid, path))
    b_tilde = bias_functional(model, psi, h, alpha, grid, path).b_tilde
    mean, cov, se, skew, kurt = _moments(Z)
    summary = OrderedDict(
        [
            ("model", model.to_dict()),
            ("alpha", alpha),
            ("epsilon", eps),
            ("grid", grid.to_dict()),
            ("seed", seed.master_seed),
            ("influence", psi.to_dict()),
            ("contamination", h.to_dict()),
            ("replicates", R),
            ("failures", failures),
            ("mean", mean),
            ("cov", cov),
            ("se_mean", se),
            ("skewness", skew),
            ("excess_kurtosis", kurt),
            ("coverage", float(np.mean(inside)) if len(Z) else 0.0),
            ("level", cfg["level"]),
            (
                "theory",
                OrderedDict([("V", V), ("b_tilde", b_tilde), ("gamma_star", gross_error_sensitivity(model, psi, alpha, grid, path=path))]),
            ),
        ]
    )
    return StudyReport(summary, Z)
