import argparse
import os
import sys

from robust_hedge import log
from robust_hedge import version
from robust_hedge import commands
from robust_hedge.errors import RobustHedgeError
from robust_hedge.pipeline import STAGES
from robust_hedge.utils import user_error, exit_success, cache


def print_version_info():
    print("robust-hedge version %s" % version.string())
    for name, value in version.stack().items():
        print("  {} {}".format(name, value))


@cache
def _get_arg_parser():
    ap = argparse.ArgumentParser(
        description="Robust drift estimation and mean-variance hedging under volatility uncertainty",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )

    ap.add_argument(
        "--log-level",
        help="Specify level of logging: DEBUG, INFO, WARNING, ERROR, or CRITICAL",
        type=str,
        default="WARNING",
    )
    ap.add_argument(
        "--version", "-V", help="Print version information", action="store_true"
    )
    ap.add_argument("--seed", help="Master seed (unsigned 64-bit)", type=int)
    ap.add_argument("--threads", help="Worker threads", type=int)
    ap.add_argument("--out", help="Output directory", type=str)
    ap.add_argument("--config", help="Pipeline config file (JSON)", type=str)

    command_help_hint = (
        "Commands (use %s COMMAND --help to get more info)"
        % os.path.basename(sys.argv[0])
    )
    subp = ap.add_subparsers(dest="command", title=command_help_hint)

    sp = subp.add_parser("simulate", help="Simulate a small-noise path or SV prices")
    sp.add_argument("--model", help="Model JSON file", type=str)
    sp.add_argument(
        "--alpha", help="Comma-separated true parameter, e.g. 1.0,0.5", type=str
    )
    sp.add_argument("--steps", help="Grid steps", type=int, default=1000)
    sp.add_argument("--contamination", help="Contamination JSON file", type=str)
    sp.add_argument(
        "--market", help="Market JSON file (writes prices instead)", type=str
    )

    sp = subp.add_parser(
        "reconstruct", help="Reconstruct the volatility path from prices"
    )
    sp.add_argument("prices", help="Price CSV (header s,x1,...)", type=str)
    sp.add_argument("--vol-map", help="Volatility map JSON file", type=str)
    sp.add_argument("--window", help="Realized QV window in steps", type=int)
    sp.add_argument("--floor", help="Floor for the volatility slope", type=float)

    sp = subp.add_parser("estimate", help="Robust M-estimate from a path")
    sp.add_argument("path", help="Path CSV (header s,x1)", type=str)
    sp.add_argument("--model", help="Model JSON file", type=str, required=True)
    sp.add_argument("--influence", help="Influence function JSON file", type=str)
    sp.add_argument(
        "--level", help="Confidence region level", type=float, default=0.05
    )

    sp = subp.add_parser("ctune", help="Tune the truncation level c")
    sp.add_argument("--model", help="Model JSON file", type=str, required=True)
    sp.add_argument("--alpha", help="Comma-separated parameter", type=str, required=True)
    sp.add_argument("--r", help="Contamination radius", type=float, default=1.0)
    sp.add_argument("--steps", help="Grid steps", type=int, default=1000)

    sp = subp.add_parser("hedge", help="Mean-variance hedge and risk report")
    sp.add_argument("problem", help="Hedge problem JSON file", type=str)
    sp.add_argument("--steps", help="Grid steps", type=int, default=100)
    sp.add_argument("--paths", help="Monte Carlo paths", type=int, default=2000)

    sp = subp.add_parser("pde", help="Price a payoff on the SV pricing equation")
    sp.add_argument("spec", help="Pricing JSON (market, payoff, lattice)", type=str)

    sp = subp.add_parser("mc", help="Monte Carlo study of the estimator")
    sp.add_argument("study", help="Study JSON file", type=str)

    sp = subp.add_parser("pipeline", help="Reconstruct, estimate, band and hedge")
    sp.add_argument("config_file", help="Pipeline config file", type=str, nargs="?")
    sp.add_argument(
        "--start",
        help="Resume from this stage using stored artifacts",
        choices=STAGES,
        default=STAGES[0],
    )

    return ap


def get_args(argv=None):
    ap = _get_arg_parser()
    args = ap.parse_args(argv)
    return args


def run_command_with_args(command, args):
    if command == "simulate":
        return commands.simulate(
            args.model,
            args.alpha,
            args.steps,
            args.seed,
            args.out,
            contamination_file=args.contamination,
            market_file=args.market,
        )
    elif command == "reconstruct":
        return commands.reconstruct(
            args.prices, args.vol_map, args.window, args.floor, args.out
        )
    elif command == "estimate":
        return commands.estimate(
            args.path, args.model, args.influence, args.level, args.out
        )
    elif command == "ctune":
        return commands.ctune(args.model, args.alpha, args.r, args.steps, args.out)
    elif command == "hedge":
        return commands.hedge(args.problem, args.steps, args.paths, args.seed, args.threads, args.out)
    elif command == "pde":
        return commands.pde(args.spec, args.out)
    elif command == "mc":
        return commands.mc(args.study, args.threads, args.seed, args.out)
    elif command == "pipeline":
        return commands.pipeline(
            args.config_file, args.seed, args.threads, args.out, args.start
        )
    else:
        user_error("Unknown command: '{}'".format(command))


def _check_file(path, what):
    if path and not os.path.isfile(path):
        user_error("{} file '{}' does not exist".format(what, path))


def validate_command(command, args):
    if command == "simulate":
        if not args.market and not args.model:
            user_error("Specify --model, or --market to simulate prices")
        if args.model and not args.market and not args.alpha:
            user_error("--alpha needs to be specified")
        if args.market and args.contamination:
            user_error("--contamination cannot be used with --market")
        _check_file(args.model, "Model")
        _check_file(args.contamination, "Contamination")
        _check_file(args.market, "Market")

    if command in ["simulate", "ctune", "hedge"] and args.steps < 1:
        user_error("--steps must be >= 1")

    if command == "reconstruct":
        _check_file(args.prices, "Price")
        _check_file(args.vol_map, "Volatility map")
        if args.window is not None and args.window < 1:
            user_error("--window must be >= 1")

    if command == "estimate":
        _check_file(args.path, "Path")
        _check_file(args.model, "Model")
        _check_file(args.influence, "Influence")
        if not 0.0 < args.level < 1.0:
            user_error("--level must be in (0, 1)")

    if command == "ctune" and args.r <= 0:
        user_error("--r must be > 0")

    if command == "hedge":
        _check_file(args.problem, "Hedge problem")
        if args.paths < 2:
            user_error("--paths must be >= 2")

    if command == "pde":
        _check_file(args.spec, "Pricing")

    if command == "mc":
        _check_file(args.study, "Study")

    if command == "pipeline":
        if args.config_file and args.config and args.config_file != args.config:
            user_error("Give the config either as --config or as an argument")
        args.config_file = args.config_file or args.config
        if not args.config_file:
            user_error("pipeline needs a config file")
        _check_file(args.config_file, "Config")


def validate_args(args):
    if args.version:
        print_version_info()
        exit_success()

    if args.seed is not None and args.seed < 0:
        user_error("--seed must be a non-negative integer")
    if args.threads is not None and args.threads < 1:
        user_error("--threads must be >= 1")
    if args.config and args.command not in [None, "pipeline"]:
        user_error("--config is only used by the 'pipeline' command")

    if not args.command:
        _get_arg_parser().print_help()
        user_error("Invalid or missing command")
    args.command = args.command.strip()
    if args.seed is None:
        args.seed = 0 if args.command != "pipeline" else None
    if args.threads is None and args.command != "pipeline":
        args.threads = 1
    validate_command(args.command, args)


def main(argv=None):
    args = get_args(argv)
    if args.log_level:
        try:
            log.set_level(args.log_level)
        except RobustHedgeError as e:
            user_error(str(e))
    validate_args(args)

    try:
        exit_code = run_command_with_args(args.command, args)
    except RobustHedgeError as e:
        log.error(str(e))
        exit_code = e.exit_code
    assert type(exit_code) is int
    sys.exit(exit_code)


if __name__ == "__main__":
    main()
