"""Reconstruct, estimate, band, hedge.

Each stage writes its artifact to the output directory before the next one
starts, and the next stage reads only what the artifact holds. Resuming at
a later stage therefore reproduces the same report.
"""

import os
from collections import OrderedDict

import numpy as np

from robust_hedge import log, version
from robust_hedge.errors import ConfigError, RobustHedgeError, StageError
from robust_hedge.estimation import (
    band_from_dict,
    confidence_region,
    m_estimate,
    region_from_dict,
    volatility_band,
)
from robust_hedge.grid import SamplePath, TimeGrid, make_grid, read_path_csv
from robust_hedge.hedging import band_problems, hedge_problem_from_json, hedge_report, robust_vs_nonrobust
from robust_hedge.influence import optimal_influence, score_influence, truncated_score, tune_c
from robust_hedge.market import market_from_json, simulate_sv_market
from robust_hedge.models import as_alpha, model_from_json
from robust_hedge.paths import (
    BAND_FNAME,
    ESTIMATE_FNAME,
    MANIFEST_FNAME,
    PRICES_FNAME,
    REPORT_FNAME,
    STRATEGY_FNAME,
    VOL_PATH_FNAME,
    out_dir,
)
from robust_hedge.sde import contamination_from_json
from robust_hedge.seeds import as_seed
from robust_hedge.utils import canonical_hash, file_hash, mkdir, read_csv, read_json, write_csv, write_json
from robust_hedge.volatility import reconstruct_from_prices, vol_map_from_json

STAGES = ("reconstruct", "estimate", "band", "hedge")


class PipelineReport:
    def __init__(self, cfg):
        self.sections = OrderedDict()
        self.inputs = cfg.to_dict()
        self.seed = cfg.seed
        self.input_files = OrderedDict()
        self.strategy = (["s", "theta_mean"], [])
        self.vol_path = (["s", "y", "sigma"], [])

    def to_dict(self):
        return self.sections


def simulated_market(cfg, model, vol_map):
    """SV market whose factor follows the model at the true parameter

    An optional contamination h adds eps h to the factor drift.
    """
    sim = cfg.simulation
    alpha = as_alpha(sim["alpha"], model.m)
    h = contamination_from_json(sim.get("contamination"))
    eps = model.epsilon

    def drift(t, y):
        prefix = np.asarray(y, dtype=float)[..., None]
        return model.drift(t, prefix, alpha) + eps * h.at(t, prefix, alpha)

    base = market_from_json(sim.get("market", {}))
    return base.replace(vol_drift=drift, vol_noise=eps, vol_map=vol_map, y0=0.0)


def _stage_reconstruct(cfg, model, vol_map, out, report):
    if cfg.simulation is not None:
        grid = make_grid(model.t_end, cfg.n_steps)
        spec = simulated_market(cfg, model, vol_map)
        paths = simulate_sv_market(spec, grid, as_seed(cfg.seed))
        prices = SamplePath(grid, paths.X[0, :, 0])
        write_csv(os.path.join(out, PRICES_FNAME), ["s", "x", "y"], [grid.nodes, prices.x, paths.Y[0]])
    else:
        fname = cfg.prices_file
        prices = read_path_csv(fname)
        if prices.d != 1:
            prices = prices.component(0)
        report.input_files["prices"] = file_hash(fname)
        if abs(prices.grid.t_end - model.t_end) > 1e-12:
            log.warning("Price data ends at {} but the model horizon is {}".format(prices.grid.t_end, model.t_end))
    R, qv, y = reconstruct_from_prices(prices, vol_map, cfg.window, cfg.floor)
    write_csv(os.path.join(out, VOL_PATH_FNAME), ["s", "y", "sigma"], [y.s, y.x, vol_map.sigma(y.x)])
    return y


def _load_vol_path(out):
    fname = os.path.join(out, VOL_PATH_FNAME)
    if not os.path.isfile(fname):
        raise ConfigError("Missing artifact '{}' for resuming".format(fname))
    header, rows = read_csv(fname)
    grid = TimeGrid(rows[:, 0])
    return SamplePath(grid, rows[:, header.index("y")])


def _reconstruct_section(y, vol_map):
    sigma = vol_map.sigma(y.x)
    return OrderedDict(
        [
            ("n_steps", y.grid.n_steps),
            ("t_end", y.grid.t_end),
            ("y_range", [float(np.min(y.x)), float(np.max(y.x))]),
            ("sigma_range", [float(np.min(sigma)), float(np.max(sigma))]),
        ]
    )


def robust_influence(model, cfg, alpha, grid):
    """Clipped score for one parameter, optimal clipped influence otherwise"""
    if cfg.r == 0 and cfg.truncation == "auto":
        return score_influence(model), None
    if cfg.truncation == "auto":
        c = tune_c(model, alpha, cfg.r, grid)
    else:
        c = float(cfg.truncation)
    if model.m == 1:
        return truncated_score(model, c), c
    return optimal_influence(model, alpha, c, grid), c


def _stage_estimate(cfg, model, y, out):
    grid = y.grid
    pilot = m_estimate(model, score_influence(model), y, diagnostics=False)
    psi, c = robust_influence(model, cfg, pilot.alpha_hat, grid)
    est = m_estimate(model, psi, y, alpha_init=pilot.alpha_hat)
    region = confidence_region(est, model.epsilon, cfg.level)
    data = OrderedDict(
        [
            ("alpha_pilot", pilot.alpha_hat),
            ("alpha_star", est.alpha_hat),
            ("c", c),
            ("influence", psi.to_dict()),
            ("V", est.V),
            ("gamma_star", est.gamma_star),
            ("iterations", est.iterations),
            ("residual", est.residual),
            ("region", region.to_dict()),
        ]
    )
    if cfg.simulation is not None:
        alpha = as_alpha(cfg.simulation["alpha"], model.m)
        data["alpha_true"] = alpha
        data["covered"] = bool(region.contains(alpha))
        data["contamination"] = contamination_from_json(cfg.simulation.get("contamination")).to_dict()
    write_json(os.path.join(out, ESTIMATE_FNAME), data)
    return read_json(os.path.join(out, ESTIMATE_FNAME))


def _stage_band(cfg, model, vol_map, grid, estimate, out):
    region = region_from_dict(estimate["region"])
    band = volatility_band(model, region, grid, vol_map)
    data = band.to_dict()
    data["band_width"] = float(np.max(band.half_width)) if cfg.band_width is None else float(cfg.band_width)
    write_json(os.path.join(out, BAND_FNAME), data)
    return read_json(os.path.join(out, BAND_FNAME))


def _stage_hedge(cfg, band_data, report):
    band = band_from_dict(band_data)
    width = band_data["band_width"]
    hedge = OrderedDict([("market", OrderedDict()), ("capital", "auto")])
    hedge.update(cfg.hedge or {})
    if "payoff" not in hedge:
        x0 = float(np.atleast_1d(hedge["market"].get("x0", 1.0))[0])
        hedge["payoff"] = OrderedDict([("kind", "call"), ("strike", x0)])
    hedge["market"] = OrderedDict(hedge["market"])
    hedge["market"].setdefault("vol_map", cfg.vol_map)
    problem = hedge_problem_from_json(hedge)
    grid = make_grid(band.grid.t_end, cfg.hedge_steps)
    seed = as_seed(cfg.seed)
    robust, _, width = band_problems(problem, band, width)
    risk = hedge_report(robust, grid, n_paths=cfg.replicates, seed=seed, threads=cfg.threads)
    risk.pop("strategy")
    comparison = robust_vs_nonrobust(
        problem, band, n_paths=cfg.replicates, seed=seed, grid=grid, width=width, threads=cfg.threads
    )
    strategy = comparison.pop("strategy")
    report.strategy = (["s", "theta_mean"], [strategy["s"], strategy["theta_mean"]])
    return OrderedDict([("band_width", width), ("risk", risk), ("comparison", comparison)])


def _run_stage(name, fn, *args):
    with log.stage(name):
        try:
            return fn(*args)
        except RobustHedgeError as e:
            raise StageError(name, e) from e


def run_pipeline(cfg, out=None, start="reconstruct"):
    """Run the stages from start on, reading earlier stages from artifacts"""
    if start not in STAGES:
        raise ConfigError("Unknown stage '{}' (use one of {})".format(start, ", ".join(STAGES)))
    out = out_dir(out or cfg.out)
    mkdir(out)
    first = STAGES.index(start)
    model = model_from_json(cfg.model)
    vol_map = vol_map_from_json(cfg.vol_map)
    report = PipelineReport(cfg)

    if first == 0:
        y = _run_stage("reconstruct", _stage_reconstruct, cfg, model, vol_map, out, report)
    else:
        y = _load_vol_path(out)
        if cfg.data is not None:
            report.input_files["prices"] = file_hash(cfg.prices_file)
    report.sections["reconstruct"] = _reconstruct_section(y, vol_map)
    report.vol_path = (["s", "y", "sigma"], [y.s, y.x, vol_map.sigma(y.x)])

    if first <= 1:
        estimate = _run_stage("estimate", _stage_estimate, cfg, model, y, out)
    else:
        estimate = _load_artifact(out, ESTIMATE_FNAME)
    report.sections["estimate"] = estimate

    if first <= 2:
        band = _run_stage("band", _stage_band, cfg, model, vol_map, y.grid, estimate, out)
    else:
        band = _load_artifact(out, BAND_FNAME)
    report.sections["band"] = band

    report.sections["hedge"] = _run_stage("hedge", _stage_hedge, cfg, band, report)
    return report


def _load_artifact(out, fname):
    data = read_json(os.path.join(out, fname))
    if data is None:
        raise ConfigError("Missing artifact '{}' for resuming".format(os.path.join(out, fname)))
    return data


def emit_report(report, dir):
    """report.json, strategy.csv, vol_path.csv and manifest.json"""
    mkdir(dir)
    files = OrderedDict()
    fname = os.path.join(dir, REPORT_FNAME)
    write_json(fname, report.to_dict())
    files[REPORT_FNAME] = fname
    header, columns = report.strategy
    fname = os.path.join(dir, STRATEGY_FNAME)
    write_csv(fname, header, columns)
    files[STRATEGY_FNAME] = fname
    header, columns = report.vol_path
    fname = os.path.join(dir, VOL_PATH_FNAME)
    write_csv(fname, header, columns)
    files[VOL_PATH_FNAME] = fname
    manifest = OrderedDict(
        [
            ("inputs_hash", canonical_hash(OrderedDict([("config", report.inputs), ("files", report.input_files)]))),
            ("seed", report.seed),
            ("versions", version.stack()),
            ("outputs", OrderedDict((name, file_hash(path)) for name, path in files.items())),
        ]
    )
    write_json(os.path.join(dir, MANIFEST_FNAME), manifest)
    files[MANIFEST_FNAME] = os.path.join(dir, MANIFEST_FNAME)
    log.info("Wrote {} to '{}'".format(", ".join(files), dir))
    return files
