"""Command line entry point: ``fedcf run | sweep | costs | summarize``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, ExperimentConfig, apply_overrides, load_config
from .data import DatasetError, ParseError
from .experiment import PRESETS, SweepSpec, cost_table, preset_spec, run_experiment, run_sweep, summarize
from .server import DivergenceError

OVERRIDES = {
    "epsilon": "epsilon",
    "k": "k",
    "users": "n_users",
    "items": "n_items",
    "seed": "seed",
    "mode": "mode",
    "out": "output_path",
    "data": "data_path",
    "epochs": "epochs",
    "splits": "n_splits",
    "split_mode": "split_mode",
    "reg": "reg",
    "lr": "learning_rate",
    "alpha": "confidence_alpha",
    "min_interactions": "min_interactions",
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p)


def _sizes(text: str) -> tuple[tuple, ...]:
    out = []
    for part in text.split(","):
        u, i = part.lower().split("x")
        out.append((u if u == "full" else int(u), i if i == "full" else int(i)))
    return tuple(out)


def _config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    return apply_overrides(config, {key: getattr(args, flag) for flag, key in OVERRIDES.items()})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    common.add_argument("--config", help="key = value config file")
    for flag in OVERRIDES:
        common.add_argument(f"--{flag.replace('_', '-')}", dest=flag)

    sub.add_parser("run", parents=[common], help="train and evaluate one configuration")

    sweep = sub.add_parser("sweep", parents=[common], help="grid over epsilon, k and dataset size")
    sweep.add_argument("--epsilons", type=_floats)
    sweep.add_argument("--ks", type=_ints)
    sweep.add_argument("--sizes", type=_sizes, help="e.g. 1000x1000,10000x1000,fullxfull")
    sweep.add_argument("--preset", choices=sorted(PRESETS))

    costs = sub.add_parser("costs", parents=[common], help="per-user communication cost")
    costs.add_argument("--n-items", type=int, dest="cost_items", help="item count (default: --items or 9781)")

    summ = sub.add_parser("summarize", help="re-aggregate trace or sweep CSVs")
    summ.add_argument("csv", nargs="+")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "summarize":
            sys.stdout.write(summarize(args.csv))
            return 0

        config = _config(args)
        if args.command == "run":
            result = run_experiment(config)
            print(result.summary_line())
            return 0
        if args.command == "costs":
            n_items = args.cost_items or (config.n_items if isinstance(config.n_items, int) else 9781)
            print(cost_table(config, n_items))
            return 0
        if args.command == "sweep":
            if args.preset:
                spec = preset_spec(args.preset, config)
            else:
                spec = SweepSpec(
                    config,
                    args.epsilons or (config.epsilon,),
                    args.ks or (config.k,),
                    args.sizes or ((config.n_users, config.n_items),),
                )
            return run_sweep(spec, config.output_path)
    except (ConfigError, ParseError, DatasetError, DivergenceError, OSError, ValueError) as exc:
        print(f"fedcf: error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
