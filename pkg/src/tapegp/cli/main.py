"""``tapegp`` command-line entry point."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ..adgraph import TapeError
from ..inference import DivergentTrajectory, OptimizationError
from .commands import cmd_bench, cmd_fit, cmd_predict, cmd_sample, describe
from .config import Config, ConfigError


def _thread_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid thread count {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"invalid thread count {text!r}")
    return values


def _common(p: argparse.ArgumentParser, threads_help: str) -> None:
    p.add_argument("--config", type=Path, help="INI run configuration")
    p.add_argument("--seed", type=int, help="seed overriding the config")
    p.add_argument("--threads", type=_thread_list, help=threads_help)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    p.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key (repeatable)"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tapegp", description="Gaussian process models on a reverse-mode tape.")
    sub = parser.add_subparsers(dest="command", required=True)
    fit = sub.add_parser("fit", help="optimise a gpr/sgpr/vgp/svgp model; writes model.json and trace.csv")
    _common(fit, "BLAS thread cap")
    fit.add_argument("--resume", type=Path, help="continue from a saved model.json (Adam moments restart from zero)")
    pred = sub.add_parser("predict", help="predict at the rows of a CSV; writes predictions.csv")
    pred.add_argument("artifact", type=Path, help="model.json written by fit")
    pred.add_argument("inputs", type=Path, help="CSV of input features")
    pred.add_argument("--no-header", action="store_true", help="the input CSV has no header line")
    _common(pred, "BLAS thread cap")
    samp = sub.add_parser("sample", help="run HMC on a gpmc/sgpmc model; writes chain.csv")
    _common(samp, "BLAS thread cap")
    bench = sub.add_parser("bench", help="throughput sweep of stochastic training; writes bench.csv")
    _common(bench, "comma list of thread counts to sweep (default 1,...,6)")
    return parser


def load_config(args) -> Config:
    cfg = Config.from_file(args.config, args.command) if args.config else Config(command=args.command)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key, value)
    if getattr(args, "resume", None) is not None:
        cfg.set("resume", str(args.resume))
    return cfg


def _single_thread(args) -> int | None:
    if args.threads is None:
        return None
    if len(args.threads) != 1:
        raise ConfigError(f"{args.command} takes a single thread count")
    return args.threads[0]


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        seed = args.seed if args.seed is not None else cfg.get_int("seed")
        if args.command == "fit":
            result = cmd_fit(cfg, args.out, seed, _single_thread(args))
        elif args.command == "predict":
            result = cmd_predict(args.artifact, args.inputs, args.out, not args.no_header, _single_thread(args))
        elif args.command == "sample":
            result = cmd_sample(cfg, args.out, seed, _single_thread(args))
        else:
            result = cmd_bench(
                cfg, args.out, seed, args.threads, progress=lambda r: print(",".join(r.row()), file=sys.stderr)
            )
    except (ValueError, OSError, KeyError, TapeError, OptimizationError, DivergentTrajectory, np.linalg.LinAlgError) as exc:
        print(f"tapegp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(describe(result))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
