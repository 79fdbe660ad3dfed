import numpy as np
import pytest

from robust_hedge.errors import ConfigError, SingularMatrixError
from robust_hedge.estimation import (
    ConfidenceRegion,
    band_from_dict,
    coarse_start,
    confidence_region,
    estimating_function,
    influence_from_json,
    m_estimate,
    mc_study,
    region_from_dict,
    volatility_band,
)
from robust_hedge.grid import SamplePath, make_grid
from robust_hedge.influence import constant_influence, score_influence
from robust_hedge.models import constant_model, ou_model
from robust_hedge.sde import simulate_small_noise, solve_limit_ode
from robust_hedge.utils import jsonable
from robust_hedge.volatility import VolMap


def test_constant_model_estimate_is_slope():
    model = constant_model(0.1)
    grid = make_grid(2.0, 200)
    path = simulate_small_noise(model, [1.0], grid, 3)
    est = m_estimate(model, score_influence(model), path)
    assert est.alpha_hat[0] == pytest.approx(path.x[-1] / 2.0, abs=1e-10)
    assert est.V[0, 0] == pytest.approx(0.5)
    assert est.gamma_star == pytest.approx(0.5)


def test_estimating_function_vanishes_at_estimate():
    model = ou_model(0.05)
    grid = make_grid(1.0, 500)
    path = simulate_small_noise(model, [1.0, 0.5], grid, 1)
    psi = score_influence(model)
    est = m_estimate(model, psi, path, alpha_init=[1.0, 0.5])
    value = estimating_function(model, psi, path.s, path.x, est.alpha_hat)
    assert np.linalg.norm(value) < 1e-10
    assert est.iterations <= 5


def test_ou_estimate_near_truth():
    model = ou_model(0.01)
    grid = make_grid(1.0, 1000)
    path = simulate_small_noise(model, [1.0, 0.5], grid, 2)
    est = m_estimate(model, score_influence(model), path)
    assert np.allclose(est.alpha_hat, [1.0, 0.5], atol=0.3)


def test_coarse_start_picks_best_grid_point():
    model = constant_model(0.1)
    grid = make_grid(1.0, 10)
    path = SamplePath(grid, 2.0 * grid.nodes)
    assert np.array_equal(coarse_start(model, score_influence(model), path), [2.0])


def test_singular_jacobian():
    model = ou_model(0.1)
    grid = make_grid(1.0, 10)
    flat = SamplePath(grid, np.zeros(11))
    with pytest.raises(SingularMatrixError):
        m_estimate(model, score_influence(model), flat, alpha_init=[1.0, 1.0], diagnostics=False)


def test_estimation_needs_one_dimension():
    model = constant_model(0.1)
    grid = make_grid(1.0, 2)
    path = SamplePath(grid, np.zeros((3, 2)))
    with pytest.raises(ConfigError):
        m_estimate(model, score_influence(model), path)


def test_confidence_region():
    region = ConfidenceRegion([1.0, 2.0], [[4.0, 1.0], [1.0, 2.0]], 0.5, 0.05)
    assert region.contains([1.0, 2.0])
    assert not region.contains([3.0, 2.0])
    assert np.allclose(region.distance2(region.boundary()), 0.25)
    assert np.allclose(region.half_widths, [1.0, 0.5 * np.sqrt(2.0)])
    back = region_from_dict(jsonable(region.to_dict()))
    assert np.allclose(back.boundary(), region.boundary())
    with pytest.raises(SingularMatrixError):
        ConfidenceRegion([0.0], [[0.0]], 1.0, 0.05)


def test_confidence_region_from_estimate():
    model = constant_model(0.1)
    grid = make_grid(1.0, 100)
    path = simulate_small_noise(model, [1.0], grid, 0)
    est = m_estimate(model, score_influence(model), path)
    region = confidence_region(est, model.epsilon, 0.05)
    assert region.radius == pytest.approx(0.1 * 1.959964, rel=1e-5)
    assert len(region.boundary()) == 2
    with pytest.raises(ConfigError):
        confidence_region(est, 0.1, 1.5)


def test_volatility_band():
    model = constant_model(0.1)
    grid = make_grid(1.0, 50)
    region = ConfidenceRegion([1.0], [[1.0]], 0.2, 0.05)
    vol_map = VolMap("exp", 0.04)
    band = volatility_band(model, region, grid, vol_map)
    assert np.allclose(band.y_lo, 0.8 * grid.nodes)
    assert np.allclose(band.y_hi, 1.2 * grid.nodes)
    assert np.all(band.sigma_lo <= band.sigma_star + 1e-15)
    assert np.all(band.sigma_star <= band.sigma_hi + 1e-15)
    assert np.allclose(band.sigma_star, vol_map.sigma(grid.nodes))
    assert np.all(band.correction >= 0.0)
    back = band_from_dict(jsonable(band.to_dict()))
    assert np.allclose(back.center, band.center)
    assert back.grid == grid


def test_influence_from_json():
    model = constant_model(0.1)
    grid = make_grid(1.0, 50)
    alpha = np.array([1.0])
    assert influence_from_json(None, model, alpha, grid).name == "score"
    assert influence_from_json({"kind": "constant"}, model, alpha, grid).name == "constant"
    psi = influence_from_json({"kind": "linear", "B": [[2.0]]}, model, alpha, grid)
    assert np.allclose(psi.along(grid.nodes, np.zeros(51), alpha), 2.0)
    psi = influence_from_json({"kind": "truncated", "c": "auto", "r": 1.0}, model, alpha, grid)
    assert psi.clip_c == pytest.approx(0.5)
    psi = influence_from_json({"kind": "optimal", "c": 2.0}, model, alpha, grid)
    assert np.allclose(psi.A, 1.0)
    with pytest.raises(ConfigError):
        influence_from_json({"kind": "truncated", "c": "auto"}, model, alpha, grid)
    with pytest.raises(ConfigError):
        influence_from_json({"kind": "linear"}, model, alpha, grid)
    with pytest.raises(ConfigError):
        influence_from_json({"kind": "median"}, model, alpha, grid)


STUDY = {
    "model": {"name": "constant", "epsilon": 0.02},
    "alpha": [1.0],
    "n_steps": 200,
    "replicates": 1000,
    "seed": 17,
    "chunk": 100,
}


def test_limit_law_of_the_score_estimate():
    study = mc_study(STUDY)
    summary = study.to_dict()
    assert summary["failures"] == 0
    assert study.standardized.shape == (1000, 1)
    assert abs(summary["mean"][0]) < 3 * summary["se_mean"][0]
    # I0^{-1} = 1
    assert abs(summary["cov"][0, 0] - 1.0) < 0.15
    assert np.allclose(summary["theory"]["V"], 1.0)


def test_contamination_shifts_the_limit():
    config = dict(STUDY, influence={"kind": "constant"}, contamination={"kind": "constant", "eta": 0.5})
    summary = mc_study(config).to_dict()
    assert abs(summary["mean"][0] - 0.5) < 3 * summary["se_mean"][0]
    assert np.allclose(summary["theory"]["b_tilde"], 0.5)


def test_clipping_reduces_the_contamination_bias():
    # a_dot = 1 + s; c = 0.75 clips it everywhere
    config = {
        "model": {"name": "time-trend", "epsilon": 0.02},
        "alpha": [1.0],
        "n_steps": 200,
        "replicates": 1000,
        "seed": 29,
        "chunk": 100,
        "contamination": {"kind": "plateau", "level": 10.0, "start": 0.9, "stop": 1.0},
    }
    score = mc_study(dict(config, influence={"kind": "score"})).to_dict()
    clipped = mc_study(dict(config, influence={"kind": "truncated", "c": "auto", "r": 1.0})).to_dict()
    assert clipped["influence"]["clip_c"] == pytest.approx(0.75, abs=1e-8)
    assert score["theory"]["b_tilde"][0] == pytest.approx(1.95 / (7.0 / 3.0), rel=0.05)
    assert clipped["theory"]["b_tilde"][0] == pytest.approx(2.0 / 3.0, rel=0.05)
    se = np.hypot(score["se_mean"][0], clipped["se_mean"][0])
    assert clipped["mean"][0] < score["mean"][0] - 3 * se
    for summary in (score, clipped):
        assert abs(summary["mean"][0] - summary["theory"]["b_tilde"][0]) < 4 * summary["se_mean"][0]


def test_coverage():
    config = dict(STUDY, replicates=2000, n_steps=100)
    summary = mc_study(config).to_dict()
    assert 0.93 <= summary["coverage"] <= 0.97


def test_coverage_two_parameters():
    # V depends on alpha for the OU drift
    config = {
        "model": {"name": "ou", "epsilon": 0.02},
        "alpha": [1.0, 1.0],
        "n_steps": 100,
        "replicates": 1000,
        "seed": 23,
        "chunk": 100,
    }
    summary = mc_study(config).to_dict()
    assert summary["failures"] == 0
    assert 0.92 <= summary["coverage"] <= 0.98


def test_study_is_independent_of_threads():
    config = dict(STUDY, replicates=60, chunk=7)
    one = mc_study(config, threads=1)
    four = mc_study(config, threads=4)
    assert np.array_equal(one.standardized, four.standardized)


def test_study_config_errors():
    with pytest.raises(ConfigError):
        mc_study({"model": {"name": "constant", "epsilon": 0.1}})
    with pytest.raises(ConfigError):
        mc_study(dict(STUDY, replicates=0))
