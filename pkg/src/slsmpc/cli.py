"""Command line entry point: ``slsmpc {invset,simulate,feasmap,bench}``.

Exit codes: 0 on success, 2 when the requested task is certified
infeasible, 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiments import cmd_bench, cmd_feasmap, cmd_invset, cmd_simulate, load_config
from .polytope import NonConvergenceError

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slsmpc", description="Robust SLS MPC experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("invset", "compute the maximal robust invariant terminal set"),
                        ("simulate", "closed-loop receding-horizon episodes"),
                        ("feasmap", "feasibility of a grid of initial states"),
                        ("bench", "solver time against the horizon")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON experiment config (default: the shipped double integrator)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, help="master RNG seed")
        p.add_argument("--method", choices=("sls", "tube_unit", "tube_zinv", "all"))
        p.add_argument("--horizon", type=int, help="MPC horizon T")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        if name == "bench":
            p.add_argument("--horizons", type=int, nargs="+", help="horizons to time (default: from config)")
            p.add_argument("--repetitions", type=int)
        if name == "feasmap":
            p.add_argument("--spacing", type=float, help="grid spacing")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, method=args.method, horizon=args.horizon)
        if args.command == "invset":
            summary = cmd_invset(cfg, args.out)
            code = EXIT_INFEASIBLE if summary["empty"] else EXIT_OK
        elif args.command == "simulate":
            summary = cmd_simulate(cfg, args.out, jobs=args.jobs)
            code = EXIT_INFEASIBLE if any(v["infeasible_at_start"] for v in summary["methods"].values()) \
                else EXIT_OK
        elif args.command == "feasmap":
            if args.spacing is not None:
                cfg = cfg.model_copy(update={"feasmap": cfg.feasmap.model_copy(update={"spacing": args.spacing})})
            summary = cmd_feasmap(cfg, args.out, jobs=args.jobs)
            code = EXIT_OK
        else:
            summary = cmd_bench(cfg, args.out, args.horizons, args.repetitions)
            code = EXIT_OK
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:
        if args.verbose:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps(summary, indent=2, default=str))
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
