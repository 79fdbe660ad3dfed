import numpy as np
import pytest
from scipy import stats

from robust_hedge.errors import ConfigError, LatticeError
from robust_hedge.grid import make_grid
from robust_hedge.hedging import HedgeProblem, black_scholes_call, call_payoff, phi_call, reference_market
from robust_hedge.market import SVMarketSpec
from robust_hedge.pde import (
    Lattice,
    check_lattice,
    default_lattice,
    lattice_from_json,
    pde_delta_strategy,
    pde_gkw,
    sv_pde_price,
)
from robust_hedge.volatility import VolMap


def _flat_market():
    # eps = 0 and no factor drift: Black-Scholes with variance 0.04 e^y
    return SVMarketSpec(x0=1.0, vol_map=VolMap("exp", 0.04))


@pytest.fixture(scope="module")
def call_solution():
    spec = _flat_market()
    return sv_pde_price(spec, call_payoff(1.0), default_lattice(spec, 1.0))


def test_call_matches_black_scholes(call_solution):
    price = float(call_solution.value(0.0, 1.0, 0.0))
    assert price == pytest.approx(float(black_scholes_call(1.0, 1.0, 0.04)), rel=0.005)
    shifted = float(call_solution.value(0.0, 1.0, 0.05))
    assert shifted == pytest.approx(float(black_scholes_call(1.0, 1.0, 0.04 * np.exp(0.05))), rel=0.005)
    assert shifted > price
    assert float(call_solution.delta(0.0, 1.0, 0.0)) == pytest.approx(stats.norm.cdf(0.1), abs=0.01)


def test_terminal_slice_is_the_payoff(call_solution):
    lat = call_solution.lattice
    assert np.allclose(call_solution.slice(1.0)[:, 0], np.maximum(lat.x - 1.0, 0.0))
    columns = call_solution.surface_columns(0)
    assert len(columns) == 5
    assert len(columns[0]) == lat.shape[0] * lat.shape[1]


def test_delta_strategy_tracks_the_call_hedge(call_solution):
    problem = HedgeProblem(_flat_market(), call_payoff(1.0))
    grid = make_grid(1.0, 20)
    market = reference_market(problem, grid, 0, 200)
    theta = pde_delta_strategy(call_solution).along(market)[:, :, 0]
    phi = phi_call(1.0, 1.0)
    s = grid.nodes
    exact = np.stack(
        [phi(s[j], market.X[:, j, :], market.Y[:, j], problem.spec.sigma0_at(s[j], market.Y[:, j])) / 0.2 for j in range(grid.n_steps)],
        axis=1,
    )
    assert np.mean(np.abs(theta - exact)) < 0.01
    xi, L = pde_gkw(call_solution, market)
    assert xi.shape == (200, grid.n_steps)
    assert np.all(L == 0.0)


def test_coarse_time_step_suggests_steps():
    spec = _flat_market()
    lat = Lattice(1.0, 10, 0.0, 4.0, 201, -0.1, 0.1, 21)
    with pytest.raises(LatticeError) as e:
        check_lattice(spec, lat)
    assert e.value.suggested_steps > 10
    check_lattice(spec, lat.with_steps(e.value.suggested_steps))
    with pytest.raises(LatticeError):
        sv_pde_price(spec, call_payoff(1.0), lat)


def test_lattice_from_json():
    lat = lattice_from_json({"nt": 50, "x": [0, 4, 101], "y": [-1, 1, 11]}, 2.0)
    assert lat.t_end == 2.0
    assert lat.shape == (101, 11)
    assert lat.to_dict()["nt"] == 50
    assert lattice_from_json(lat.to_dict()).dx == pytest.approx(lat.dx)
    with pytest.raises(ConfigError):
        lattice_from_json({"x": [0, 4, 101], "y": [-1, 1, 11]}, 1.0)
    with pytest.raises(ConfigError):
        lattice_from_json({"nt": 5, "x": [0, 4, 101], "y": [-1, 1, 11]})
    with pytest.raises(ConfigError):
        Lattice(1.0, 5, 1.0, 0.5, 11, 0.0, 1.0, 3)


def test_one_asset_only():
    spec = SVMarketSpec(x0=[1.0, 1.0], sigma0=0.2 * np.eye(2), d=2)
    with pytest.raises(ConfigError):
        sv_pde_price(spec, call_payoff(1.0), Lattice(1.0, 10, 0.0, 4.0, 11, -0.1, 0.1, 3))
