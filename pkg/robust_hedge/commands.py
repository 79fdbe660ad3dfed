import os
from collections import OrderedDict

import numpy as np

from robust_hedge import log
from robust_hedge.config import load_json_file, validate_config
from robust_hedge.errors import ConfigError
from robust_hedge.estimation import confidence_region, influence_from_json, m_estimate, mc_study
from robust_hedge.grid import make_grid, read_path_csv, write_path_csv
from robust_hedge.hedging import hedge_problem_from_json, hedge_report, payoff_from_json
from robust_hedge.influence import (
    h_grid,
    minimax_risk,
    risk_functional,
    score_influence,
    truncated_score,
    tune_c,
)
from robust_hedge.market import market_from_json, simulate_sv_market
from robust_hedge.models import as_alpha, model_from_json
from robust_hedge.paths import (
    ESTIMATE_FNAME,
    PATH_FNAME,
    PRICES_FNAME,
    RAW_ESTIMATES_FNAME,
    REPORT_FNAME,
    STRATEGY_FNAME,
    STUDY_FNAME,
    SURFACE_FNAME,
    VOL_PATH_FNAME,
    out_dir,
    out_file,
)
from robust_hedge.pde import default_lattice, lattice_from_json, sv_pde_price
from robust_hedge.pipeline import emit_report, run_pipeline
from robust_hedge.sde import contamination_from_json, simulate_contaminated, simulate_small_noise, solve_limit_ode
from robust_hedge.utils import column_print, mkdir, pretty, write_csv, write_json
from robust_hedge.volatility import reconstruct_from_prices, vol_map_from_json


def _alpha(text, m):
    try:
        values = [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError("Could not parse alpha '{}'".format(text))
    return as_alpha(values, m)


def simulate(model_file, alpha, n_steps, seed, out, contamination_file=None, market_file=None):
    if market_file:
        spec = market_from_json(load_json_file(market_file, "market"))
        t_end = 1.0
        if model_file:
            t_end = model_from_json(load_json_file(model_file, "model")).t_end
        grid = make_grid(t_end, n_steps)
        paths = simulate_sv_market(spec, grid, seed)
        fname = out_file(out, PRICES_FNAME)
        write_csv(fname, ["s", "x", "y"], [grid.nodes, paths.X[0, :, 0], paths.Y[0]])
        print(fname)
        return 0

    model = model_from_json(load_json_file(model_file, "model"))
    alpha = _alpha(alpha, model.m)
    grid = make_grid(model.t_end, n_steps)
    if contamination_file:
        h = contamination_from_json(load_json_file(contamination_file, "contamination"))
        path = simulate_contaminated(model, alpha, h, grid, seed)
    else:
        path = simulate_small_noise(model, alpha, grid, seed)
    fname = out_file(out, PATH_FNAME)
    write_path_csv(path, fname)
    print(fname)
    return 0


def reconstruct(prices_file, vol_map_file, window, floor, out):
    vol_map = vol_map_from_json(load_json_file(vol_map_file, "volatility map") if vol_map_file else None)
    prices = read_path_csv(prices_file)
    if prices.d != 1:
        log.info("Using the first of {} price columns".format(prices.d))
        prices = prices.component(0)
    R, qv, y = reconstruct_from_prices(prices, vol_map, window, floor)
    fname = out_file(out, VOL_PATH_FNAME)
    write_csv(fname, ["s", "y", "sigma"], [y.s, y.x, vol_map.sigma(y.x)])
    column_print(
        OrderedDict(
            [
                ("window", qv.window),
                ("realized variance", qv.cumulative[-1] / y.grid.t_end),
                ("output", fname),
            ]
        )
    )
    return 0


def estimate(path_file, model_file, influence_file, level, out):
    model = model_from_json(load_json_file(model_file, "model"))
    y = read_path_csv(path_file)
    pilot = m_estimate(model, score_influence(model), y, diagnostics=False)
    data = load_json_file(influence_file, "influence") if influence_file else None
    psi = influence_from_json(data, model, pilot.alpha_hat, y.grid)
    est = m_estimate(model, psi, y, alpha_init=pilot.alpha_hat)
    region = confidence_region(est, model.epsilon, level)
    result = OrderedDict(
        [
            ("model", model.to_dict()),
            ("influence", psi.to_dict()),
            ("estimate", est.to_dict()),
            ("region", region.to_dict()),
        ]
    )
    write_json(out_file(out, ESTIMATE_FNAME), result)
    print(pretty(result))
    return 0


def ctune(model_file, alpha, r, n_steps, out):
    model = model_from_json(load_json_file(model_file, "model"))
    alpha = _alpha(alpha, model.m)
    grid = make_grid(model.t_end, n_steps)
    path = solve_limit_ode(model, alpha, grid)
    c = tune_c(model, alpha, r, grid, path)
    rows = OrderedDict()
    alternatives = h_grid(r, model, alpha, grid, path)
    candidates = [("score", score_influence(model))]
    if model.m == 1:
        candidates.append(("truncated", truncated_score(model, c)))
    for name, psi in candidates:
        worst = max(risk_functional(model, psi, h, alpha, grid, path) for h in alternatives)
        rows[name] = OrderedDict(
            [
                ("minimax_risk", minimax_risk(model, psi, alpha, r, grid, path)),
                ("h_grid_sup", worst),
            ]
        )
    result = OrderedDict([("c", c), ("r", r), ("alpha", alpha), ("risks", rows)])
    write_json(out_file(out, "ctune.json"), result)
    print(pretty(result))
    return 0


def hedge(problem_file, n_steps, n_paths, seed, threads, out):
    data = load_json_file(problem_file, "hedge problem")
    problem = hedge_problem_from_json(data)
    grid = make_grid(float(data.get("t_end", 1.0)), n_steps)
    report = hedge_report(problem, grid, n_paths=n_paths, seed=seed, threads=threads)
    strategy = report.pop("strategy")
    write_csv(out_file(out, STRATEGY_FNAME), ["s", "theta_mean"], [strategy["s"], strategy["theta_mean"]])
    write_json(out_file(out, REPORT_FNAME), report)
    column_print(OrderedDict([("J", report["J"]), ("SE", report["SE"]), ("worst case", report["worst_case_J"])]))
    return 0


def pde(spec_file, out):
    data = load_json_file(spec_file, "pricing")
    if "market" not in data or "payoff" not in data:
        raise ConfigError("Pricing spec needs 'market' and 'payoff'")
    spec = market_from_json(data["market"])
    payoff = payoff_from_json(data["payoff"])
    t_end = float(data.get("t_end", 1.0))
    if "lattice" in data:
        lattice = lattice_from_json(data["lattice"], t_end)
    else:
        lattice = default_lattice(spec, t_end)
    solution = sv_pde_price(spec, payoff, lattice)
    fname = out_file(out, SURFACE_FNAME)
    write_csv(fname, ["x", "y", "v", "dv_dx", "dv_dy"], solution.surface_columns(0))
    price = float(solution.value(0.0, spec.x0[0], spec.y0))
    column_print(OrderedDict([("price", price), ("lattice", lattice.to_dict()), ("output", fname)]))
    return 0


def mc(study_file, threads, seed, out):
    config = load_json_file(study_file, "study")
    if seed is not None:
        config["seed"] = seed
    study = mc_study(config, threads=threads)
    summary = study.to_dict()
    write_json(out_file(out, STUDY_FNAME), summary)
    m = study.standardized.shape[1]
    write_csv(
        out_file(out, RAW_ESTIMATES_FNAME),
        ["z{}".format(i + 1) for i in range(m)],
        [study.standardized[:, i] for i in range(m)],
    )
    print(pretty(OrderedDict((k, summary[k]) for k in ("mean", "se_mean", "cov", "coverage", "failures"))))
    return 0


def pipeline(config_file, seed, threads, out, start):
    data = load_json_file(config_file, "config")
    if seed is not None:
        data["seed"] = seed
    if threads is not None:
        data["threads"] = threads
    if out is not None:
        data["out"] = out
    cfg = validate_config(data, os.path.dirname(os.path.abspath(config_file)))
    target = out_dir(cfg.out)
    mkdir(target)
    report = run_pipeline(cfg, target, start)
    files = emit_report(report, target)
    estimate = report.sections["estimate"]
    column_print(
        OrderedDict(
            [
                ("alpha*", np.asarray(estimate["alpha_star"])),
                ("band width", report.sections["hedge"]["band_width"]),
                ("J", report.sections["hedge"]["risk"]["J"]),
                ("report", files["report.json"]),
            ]
        )
    )
    return 0
