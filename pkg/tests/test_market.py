import numpy as np
import pytest

from robust_hedge.errors import ConfigError, EllipticityError
from robust_hedge.grid import make_grid
from robust_hedge.market import (
    SVMarketSpec,
    ellipticity_margin,
    market_from_json,
    simulate_diffusion_market,
    simulate_sv_market,
)
from robust_hedge.sde import constant_contamination
from robust_hedge.volatility import VolMap


def test_paths_are_reproducible_by_index():
    spec = market_from_json({"x0": 1.0, "vol_noise": 0.1, "vol_map": {"scale": 0.04}})
    grid = make_grid(1.0, 50)
    batch = simulate_sv_market(spec, grid, 9, n_paths=3)
    single = simulate_sv_market(spec, grid, 9, n_paths=1, first=1)
    assert np.array_equal(batch.X[1], single.X[0])
    assert np.array_equal(batch.Y[1], single.Y[0])
    assert batch.n_paths == 3 and batch.d == 1


def test_log_price_dynamics():
    spec = SVMarketSpec(x0=2.0, sigma0=0.2)
    grid = make_grid(1.0, 100)
    m = simulate_sv_market(spec, grid, 1, n_paths=4)
    expected = np.log(2.0) + m.R[:, :, 0] - 0.5 * 0.04 * grid.nodes
    assert np.allclose(np.log(m.X[:, :, 0]), expected)
    assert np.all(m.X > 0)
    # zero market price of risk: the driving martingale is the Wiener path
    assert np.allclose(m.M0, m.W)
    assert np.all(m.K == 0.0)


def test_market_price_of_risk():
    spec = SVMarketSpec(x0=1.0, sigma0=0.2, k=0.5)
    assert spec.k_kind == "deterministic"
    grid = make_grid(2.0, 40)
    m = simulate_sv_market(spec, grid, 1, n_paths=2)
    assert np.allclose(m.K[:, -1], 0.25 * 2.0)
    assert np.allclose(m.M0 - m.W, 0.5 * grid.nodes[None, :, None])
    assert m.mvt()["max"] == pytest.approx(0.5)


def test_volatility_factor_drives_sigma():
    spec = SVMarketSpec(x0=1.0, vol_map=VolMap("exp", 0.04), vol_drift=1.0)
    grid = make_grid(1.0, 10)
    m = simulate_sv_market(spec, grid, 0)
    assert np.allclose(m.Y[0], grid.nodes)
    assert np.allclose(m.sigma[0, :, 0, 0], 0.2 * np.exp(grid.nodes[:-1] / 2))


def test_perturbed_volatility():
    spec = SVMarketSpec(x0=1.0, sigma0=0.2)
    grid = make_grid(1.0, 10)
    h = constant_contamination(1.0)
    m = simulate_sv_market(spec, grid, 0, h=h, delta=0.1, n_paths=2)
    assert np.allclose(m.sigma, 0.3)
    with pytest.raises(EllipticityError):
        simulate_sv_market(spec, grid, 0, h=h, delta=0.3)
    with pytest.raises(ConfigError):
        simulate_sv_market(spec, grid, 0, h=h, delta=-0.1)


def test_diffusion_market():
    sigma0 = np.array([[0.2, 0.0], [0.1, 0.3]])
    grid = make_grid(1.0, 20)
    m = simulate_diffusion_market([1.0, 2.0], sigma0, [0.1, -0.2], grid, 3, n_paths=5)
    assert m.X.shape == (5, 21, 2)
    assert np.allclose(m.sigma, sigma0)
    assert np.allclose(m.K[:, -1], 0.05)
    assert np.allclose(m.X[:, 0, :], [1.0, 2.0])
    assert np.allclose(ellipticity_margin(m.sigma[:, 0]), np.linalg.svd(sigma0, compute_uv=False)[-1])


def test_spec_validation():
    with pytest.raises(ConfigError):
        SVMarketSpec(x0=-1.0)
    with pytest.raises(ConfigError):
        SVMarketSpec(vol_noise=-0.1)
    with pytest.raises(ConfigError):
        SVMarketSpec(d=2).sigma0_at(0.0, np.zeros(3))
    with pytest.raises(ConfigError):
        SVMarketSpec().replace(colour="red")


def test_replace_keeps_other_fields():
    spec = market_from_json({"x0": 1.5, "k": 0.3, "vol_map": {"name": "exp", "scale": 0.04}})
    other = spec.replace(y0=1.0)
    assert other.y0 == 1.0
    assert other.k_kind == "deterministic"
    assert np.array_equal(other.x0, [1.5])
    assert other.to_dict()["k"] == 0.3
    assert spec.with_sigma0(0.25).variance(0.0, 0.0)[0] == pytest.approx(0.0625)


def test_market_from_json_kinds():
    assert market_from_json({}).k_is_zero
    assert market_from_json({"k": {"kind": "vol", "scale": 0.5}}).k_kind == "vol"
    spec = market_from_json({"vol_drift": {"kind": "mean-reverting", "speed": 2.0, "level": 1.0}})
    assert np.allclose(spec.vol_drift_at(0.0, np.array([0.0, 1.0])), [2.0, 0.0])
    with pytest.raises(ConfigError):
        market_from_json({"k": {"kind": "weird"}})
    with pytest.raises(ConfigError):
        market_from_json([])
