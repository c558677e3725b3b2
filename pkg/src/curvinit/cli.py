"""Command line entry point.

Exit codes: 0 success, 2 bad configuration or usage, 3 missing or malformed
data files, 4 numeric failure (divergence, non-finite values).
"""
from __future__ import annotations

import argparse
import sys

from .curvature import NonFiniteError
from .data import DataError
from .experiments import EXPERIMENT_NAMES, ConfigError, parse_config_file, run_experiment
from .init import BracketNotFoundError, CalibrationError
from .train import DivergenceError

_CALIBRATE_FLAGS = {
    "layers": "layers",
    "act": "activation",
    "scheme": "scheme",
    "target": "target",
    "tol": "tol",
    "layer": "layer",
    "seed": "seed",
    "loss": "loss",
    "dataset": "dataset",
    "n": "n",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curvinit",
        description="Layerwise curvature experiments for small dense networks.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENT_NAMES:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", default=f"{name}.csv",
                       help="output CSV path (default: %(default)s)")
        if name == "calibrate":
            p.add_argument("--layers", help="comma-separated layer dims, e.g. 8,16,16,4")
            p.add_argument("--act", help="hidden activation (linear|tanh|sigmoid|relu|leaky:S)")
            p.add_argument("--scheme", help="init scheme (glorot|forward|backward|fixed:STD)")
            p.add_argument("--target", type=float, help="target top eigenvalue")
            p.add_argument("--tol", type=float, help="relative tolerance on the target")
            p.add_argument("--layer", type=int, help="layer whose curvature is calibrated")
            p.add_argument("--seed", type=int, help="base seed")
            p.add_argument("--loss", help="loss (squared|softmax-ce)")
            p.add_argument("--dataset", help="dataset kind (blobs|linreg|mnist)")
            p.add_argument("--n", type=int, help="number of samples")
            p.add_argument("--relu-correct", action="store_true",
                           help="halve variance under relu layers")
            p.add_argument("--dropout-correct", action="store_true",
                           help="scale variance by the next layer's keep rate")
    return parser


def _gather_config(args) -> dict:
    raw = parse_config_file(args.config) if args.config else {}
    if args.experiment == "calibrate":
        for flag, key in _CALIBRATE_FLAGS.items():
            value = getattr(args, flag, None)
            if value is not None:
                raw[key] = str(value)
        if getattr(args, "relu_correct", False):
            raw["relu_correct"] = "1"
        if getattr(args, "dropout_correct", False):
            raw["dropout_correct"] = "1"
    elif not args.config:
        raise ConfigError(f"{args.experiment} requires --config")
    return raw


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help; keep its code
        return int(exc.code or 0)
    try:
        raw = _gather_config(args)
        out = run_experiment(args.experiment, raw, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (DivergenceError, NonFiniteError, BracketNotFoundError, CalibrationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
