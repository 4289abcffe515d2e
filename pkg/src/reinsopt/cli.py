"""Command line entry point: ``reinsopt <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from .experiments import (
    TABLES,
    ExperimentConfig,
    run_asymptotics,
    run_bayes,
    run_bootstrap,
    run_figure_sweep,
    run_optimize,
    run_simulate,
    run_table,
)

FULL_SCALE = {"m": 1_000_000, "reps": 100}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with ExperimentConfig keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (default: results)")
    common.add_argument("--m", type=int, help="Monte Carlo sample size")
    common.add_argument("--reps", type=int, help="bootstrap replicates")
    common.add_argument("--family", choices=["gaussian", "gamma", "lognormal", "pareto"])
    common.add_argument("--principle", choices=["expected", "esscher"])
    common.add_argument("--risk-measure", dest="risk_measure", choices=["VaR", "CVaR"])
    common.add_argument("--n-jobs", dest="n_jobs", type=int)
    common.add_argument("--paper-scale", action="store_true",
                        help="use m=1e6 and 100 replicates unless --m or --reps is given")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="reinsopt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate aggregate losses")
    sub.add_parser("optimize", parents=[common], help="optimize one layer")
    sub.add_parser("bootstrap", parents=[common], help="bootstrap degradation over n_grid")
    sub.add_parser("asymptotics", parents=[common], help="bootstrap vs large-sample formulas")
    p = sub.add_parser("bayes", parents=[common], help="posterior-predictive degradation")
    p.add_argument("--prior", choices=["informative", "jeffreys"])
    p = sub.add_parser("table", parents=[common], help="reproduce a results table")
    p.add_argument("table_id", choices=sorted(TABLES))
    sub.add_parser("sweep", parents=[common], help="criterion against a1 with a2 at the quantile")
    return parser


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    if args.paper_scale:
        data.update(FULL_SCALE)
    for key in ("seed", "out", "m", "reps", "family", "principle", "risk_measure", "n_jobs",
                "prior"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    return ExperimentConfig.from_dict(data)


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        runners = {
            "simulate": run_simulate,
            "optimize": run_optimize,
            "bootstrap": run_bootstrap,
            "asymptotics": run_asymptotics,
            "bayes": run_bayes,
            "sweep": run_figure_sweep,
        }
        if args.command == "table":
            path = run_table(args.table_id, cfg)
        else:
            path = runners[args.command](cfg)
    except Exception as exc:  # noqa: BLE001 - reported as a structured error
        print(json.dumps({"error": type(exc).__name__, "message": str(exc),
                          "command": args.command}), file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
