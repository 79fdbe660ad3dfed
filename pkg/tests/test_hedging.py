import numpy as np
import pytest

from robust_hedge.errors import ConfigError, EllipticityError, UnsupportedCaseError
from robust_hedge.estimation import VolBand
from robust_hedge.grid import make_grid
from robust_hedge.hedging import (
    FeedbackStrategy,
    HedgeProblem,
    PerturbedVolatility,
    ReferenceVolatility,
    RepresentationStrategy,
    ShiftedVolatility,
    black_scholes_call,
    call_payoff,
    dj_test_grid,
    gateaux_DJ,
    gkw_decompose,
    hedge_problem_from_json,
    hedge_report,
    linear_payoff,
    payoff_from_json,
    phi_call,
    phi_linear,
    put_payoff,
    reference_market,
    risk_J,
    robust_vs_nonrobust,
    strategy_general,
    strategy_zero_drift,
    worst_case_sigma,
    zero_strategy,
    vol_payoff,
    zeta_and_ztilde,
)
from robust_hedge.market import SVMarketSpec
from robust_hedge.pde import default_lattice, pde_delta_strategy, pde_gkw, sv_pde_price
from robust_hedge.sde import constant_contamination
from robust_hedge.volatility import VolMap


def _problem(payoff, k=0.0, delta=0.05, r=1.0, capital=1.0):
    return HedgeProblem(SVMarketSpec(x0=1.0, sigma0=0.2, k=k), payoff, delta=delta, r=r, capital=capital)


def test_payoffs():
    x = np.array([[0.5], [1.0], [1.5]])
    y = np.zeros(3)
    assert np.allclose(call_payoff(1.0)(x, y), [0.0, 0.0, 0.5])
    assert np.allclose(put_payoff(1.0)(x, y), [0.5, 0.0, 0.0])
    assert np.allclose(linear_payoff()(x, y), [0.5, 1.0, 1.5])
    assert np.allclose(payoff_from_json({"kind": "constant", "value": 2})(x, y), 2.0)
    assert np.allclose(payoff_from_json({"kind": "vol", "scale": 3.0})(x, y + 1.0), 3.0)
    assert payoff_from_json({"kind": "call", "strike": 1.1}).to_dict()["strike"] == 1.1
    with pytest.raises(ConfigError):
        payoff_from_json({"kind": "call"})
    with pytest.raises(ConfigError):
        payoff_from_json({"kind": "digital"})


def test_hedge_problem():
    problem = hedge_problem_from_json(
        {"market": {"x0": 1.0, "sigma0": 0.2}, "payoff": {"kind": "put", "strike": 1.0}, "delta": 0.1, "r": 0.5}
    )
    assert problem.band_width == pytest.approx(0.05)
    assert problem.d == 1
    with pytest.raises(ConfigError):
        hedge_problem_from_json({"market": {}})
    with pytest.raises(ConfigError):
        HedgeProblem(SVMarketSpec(sigma0=0.2), call_payoff(1.0), delta=-1.0)


def test_black_scholes_call():
    assert black_scholes_call(1.0, 1.0, 0.04) == pytest.approx(0.0796557, rel=1e-5)
    assert black_scholes_call(1.5, 1.0, 0.0) == pytest.approx(0.5)


def test_representation_of_linear_claim():
    problem = _problem(linear_payoff())
    grid = make_grid(1.0, 50)
    market = reference_market(problem, grid, 3, 2000)
    theta = strategy_zero_drift(problem, phi_linear())
    assert np.allclose(theta.along(market)[:, :, 0], market.X[:, :-1, 0])
    hedged = risk_J(problem, ReferenceVolatility(problem.spec), theta, market=market)
    naked = risk_J(problem, ReferenceVolatility(problem.spec), zero_strategy(), market=market)
    assert hedged.value < 0.01 * naked.value
    assert naked.value == pytest.approx(np.exp(0.04) - 1.0, rel=0.15)


def test_dj_vanishes_at_the_zero_drift_strategy():
    problem = _problem(linear_payoff())
    grid = make_grid(1.0, 100)
    market = reference_market(problem, grid, 5, 2000)
    theta = strategy_zero_drift(problem, phi_linear())
    tests = dj_test_grid(problem, grid.t_end)
    assert len(tests) == 10
    for h in tests:
        exact = gateaux_DJ(problem, theta, h, phi=phi_linear(), market=market, method="analytic")
        assert abs(exact.value) < 1e-12
        sampled = gateaux_DJ(problem, theta, h, market=market, method="pathwise")
        assert abs(sampled.value) <= 4 * sampled.std_err + 1e-12


def test_dj_matches_finite_difference():
    delta = 1e-3
    problem = _problem(linear_payoff(), delta=delta, r=1.0)
    grid = make_grid(1.0, 50)
    market = reference_market(problem, grid, 11, 2000)
    theta = FeedbackStrategy(lambda t, x, y: 0.5 * x[:, 0], "half")
    h = constant_contamination(1.0)
    base = risk_J(problem, ReferenceVolatility(problem.spec), theta, market=market)
    bumped = risk_J(problem, PerturbedVolatility(problem.spec, h, delta), theta, market=market)
    dj = gateaux_DJ(problem, theta, h, market=market)
    assert dj.method == "pathwise"
    fd = (bumped.value - base.value) / delta
    assert dj.value < 0
    assert fd == pytest.approx(dj.value, rel=0.05)


def test_worst_case_volatility_dominates_the_band():
    problem = _problem(call_payoff(1.0), delta=0.05, r=1.0, capital="auto")
    grid = make_grid(1.0, 50)
    market = reference_market(problem, grid, 2, 2000)
    phi = phi_call(1.0, grid.t_end)
    under = RepresentationStrategy(problem.spec, lambda t, x, y, s: 0.8 * phi(t, x, y, s), "under")
    worst = risk_J(problem, worst_case_sigma(problem, under, phi), under, market=market)
    low_edge = risk_J(problem, ShiftedVolatility(problem.spec, -0.05), under, market=market)
    assert worst.value == pytest.approx(low_edge.value, rel=1e-9)
    for shift in np.linspace(-0.05, 0.05, 9):
        J = risk_J(problem, ShiftedVolatility(problem.spec, shift), under, market=market)
        assert worst.value >= J.value - 3 * J.std_err


def test_band_checks():
    grid = make_grid(1.0, 20)
    wide = _problem(call_payoff(1.0), delta=0.25, r=1.0)
    theta = strategy_zero_drift(wide, phi_call(1.0, 1.0))
    with pytest.raises(EllipticityError):
        risk_J(wide, ReferenceVolatility(wide.spec), theta, grid=grid, n_paths=10)
    narrow = _problem(call_payoff(1.0), delta=0.05, r=1.0)
    with pytest.raises(ConfigError):
        risk_J(narrow, ShiftedVolatility(narrow.spec, 0.1), theta, grid=grid, n_paths=10)
    # no position, no constraint
    risk_J(narrow, ShiftedVolatility(narrow.spec, 0.1), zero_strategy(), grid=grid, n_paths=10)


def test_unsupported_cases():
    grid = make_grid(1.0, 10)
    drifting = _problem(call_payoff(1.0), k=0.1)
    with pytest.raises(UnsupportedCaseError):
        strategy_zero_drift(drifting, phi_call(1.0, 1.0))
    spec = SVMarketSpec(x0=1.0, sigma0=0.2, k_price=lambda t, x, y: 0.1 * x)
    priced = HedgeProblem(spec, call_payoff(1.0))
    market = reference_market(priced, grid, 0, 5)
    with pytest.raises(UnsupportedCaseError):
        zeta_and_ztilde(priced, market)


def test_density_paths():
    problem = _problem(call_payoff(1.0), k=0.3)
    grid = make_grid(1.0, 50)
    market = reference_market(problem, grid, 4, 4000)
    density = zeta_and_ztilde(problem, market)
    assert density.normalizer == pytest.approx(np.exp(-0.09))
    assert np.allclose(density.z0, np.exp(0.09))
    assert density.mean_terminal().value == pytest.approx(1.0, abs=4 * density.mean_terminal().std_err)
    flat = zeta_and_ztilde(_problem(call_payoff(1.0)), market)
    assert np.all(flat.ztilde == 1.0) and np.all(flat.zeta == 0.0)


def test_density_paths_with_volatility_driven_k():
    spec = SVMarketSpec(
        x0=1.0, vol_map=VolMap("exp", 0.04), vol_noise=0.5, k=lambda t, y: 0.2 + 0.3 * np.tanh(y)
    )
    assert spec.k_kind == "vol"
    problem = HedgeProblem(spec, call_payoff(1.0))
    grid = make_grid(1.0, 50)
    market = reference_market(problem, grid, 11, 4000)
    assert np.std(market.K[:, -1]) > 0.01
    density = zeta_and_ztilde(problem, market)
    assert density.normalizer == pytest.approx(np.mean(np.exp(-market.K[:, -1])))
    assert np.allclose(density.z0, 1.0 / density.normalizer)
    assert np.allclose(density.zeta, -market.k * density.ztilde[:, :-1, None])
    # E ztilde_T = E exp(-K_T) / N given the factor path
    mean = density.mean_terminal()
    assert mean.value == pytest.approx(1.0, abs=4 * mean.std_err)


def test_gkw_reduces_to_the_zero_drift_strategy():
    problem = _problem(linear_payoff())
    grid = make_grid(1.0, 50)
    train = reference_market(problem, grid, 6, 2000, first=2000)
    gkw = gkw_decompose(problem, train)
    assert gkw.diagnostics["degenerate_blocks"] == grid.n_steps
    assert gkw.diagnostics["residual_ratio"] < 0.1
    assert gkw.diagnostics["reconstruction_error"] < 0.1
    assert gkw.mean_term == pytest.approx(1.0, abs=0.03)

    market = reference_market(problem, grid, 6, 2000)
    general = strategy_general(problem, gkw).along(market)[:, :, 0]
    exact = strategy_zero_drift(problem, phi_linear()).along(market)[:, :, 0]
    rms = np.sqrt(np.mean((general - exact) ** 2) / np.mean(exact ** 2))
    assert rms < 0.1


def test_general_strategy_hedges_with_drift():
    problem = _problem(linear_payoff(), k=0.05, capital="auto")
    grid = make_grid(1.0, 50)
    train = reference_market(problem, grid, 8, 2000, first=2000)
    rule = strategy_general(problem, gkw_decompose(problem, train))
    assert rule.capital == pytest.approx(1.0, abs=0.03)
    market = reference_market(problem, grid, 8, 2000)
    hedged = risk_J(problem, ReferenceVolatility(problem.spec), rule, market=market)
    naked = risk_J(problem, ReferenceVolatility(problem.spec), zero_strategy(), market=market)
    assert hedged.value < 0.1 * naked.value


def _vol_factor_market():
    return SVMarketSpec(x0=1.0, vol_map=VolMap("exp", 0.04), vol_noise=0.3)


def test_gkw_of_a_claim_on_the_factor():
    # v = y: nothing to hedge, the whole claim is orthogonal risk
    spec = _vol_factor_market()
    problem = HedgeProblem(spec, vol_payoff())
    grid = make_grid(1.0, 10)
    market = reference_market(problem, grid, 12, 4000)
    solution = sv_pde_price(spec, vol_payoff(), default_lattice(spec, 1.0, nx=51))
    xi, L = pde_gkw(solution, market)
    H = market.Y[:, -1]
    v0 = float(solution.value(0.0, 1.0, 0.0))
    gains_pde = np.sum(xi * np.diff(market.X[:, :, 0], axis=1), axis=1)
    assert np.allclose(H - v0 - gains_pde - L, 0.0, atol=1e-10)

    gkw = gkw_decompose(problem, market)
    assert gkw.diagnostics["residual_ratio"] > 0.95
    assert np.corrcoef(gkw.L_terminal, L)[0, 1] > 0.98
    assert abs(gkw.mean_term) < 4 * np.std(H) / np.sqrt(4000)


def test_general_strategy_matches_the_pde_delta():
    spec = _vol_factor_market()
    problem = HedgeProblem(spec, linear_payoff())
    grid = make_grid(1.0, 20)
    train = reference_market(problem, grid, 13, 2000, first=2000)
    rule = strategy_general(problem, gkw_decompose(problem, train))
    market = reference_market(problem, grid, 13, 2000)
    general = rule.along(market)[:, :, 0]
    solution = sv_pde_price(spec, linear_payoff(), default_lattice(spec, 1.0, nx=51))
    delta = pde_delta_strategy(solution).along(market)[:, :, 0]
    assert np.allclose(delta, market.X[:, :-1, 0], rtol=1e-8)
    rms = np.sqrt(np.mean((general - delta) ** 2) / np.mean(delta ** 2))
    assert rms < 0.1


def test_hedge_report():
    problem = _problem(call_payoff(1.0), delta=0.05, r=1.0, capital="auto")
    grid = make_grid(1.0, 20)
    report = hedge_report(problem, grid, n_paths=500, seed=1)
    assert list(report) == ["problem", "J", "SE", "DJ_grid", "worst_case_J", "strategy_stats", "strategy"]
    assert len(report["DJ_grid"]) == 10
    assert report["J"] > 0 and report["SE"] > 0
    assert report["worst_case_J"] is not None
    assert len(report["strategy"]["theta_mean"]) == grid.n_steps
    for entry in report["DJ_grid"]:
        assert entry["method"] == "analytic"
        assert abs(entry["DJ"]) < 1e-12
        assert np.isfinite(entry["DJ_pathwise"]) and entry["std_err_pathwise"] >= 0
    drifting = hedge_report(_problem(call_payoff(1.0), k=0.1, capital="auto"), grid, n_paths=200, seed=1)
    assert drifting["worst_case_J"] is None
    for entry in drifting["DJ_grid"]:
        assert entry["method"] == "pathwise"
        assert "DJ_pathwise" not in entry


def test_robust_vs_nonrobust():
    grid = make_grid(1.0, 20)
    ones = np.ones(grid.n_steps + 1)
    band = VolBand(grid, ones, ones, 0.18 * ones, 0.22 * ones, 0.21 * ones)
    problem = _problem(call_payoff(1.0), delta=1.0, r=1.0, capital="auto")
    scores = robust_vs_nonrobust(problem, band, n_paths=500, seed=2)
    assert np.allclose(scores["correction"], 0.01)
    for name in ("robust", "nonrobust"):
        risks = scores[name]
        assert set(risks) == {"center", "low", "high", "sup"}
        assert risks["sup"] >= risks["center"]["J"]
    assert scores["robust_theta0"].shape == (1,)
    assert len(scores["strategy"]["s"]) == grid.n_steps
