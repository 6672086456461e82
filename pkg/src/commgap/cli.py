"""Command-line entry point: ``commgap <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .cluster import RimConfig
from .envs import SpecError
from .experiments import (
    MissingArtifactsError,
    RunConfig,
    emit_plotdata,
    format_example,
    run_bound_sweep,
    run_example,
    run_matrix,
    run_maze,
)


def _labels(text: str) -> list[int]:
    try:
        out = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("label counts must be positive")
    return out


def _seeds(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated seeds, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=None, help="output directory (default: from config, else ./runs)")
    common.add_argument("--config", type=Path, default=None, help="JSON run configuration")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="commgap", description="Return-gap experiments for clustered messages.", parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("example", parents=[common], help="illustrative 2x4 game against its quoted values")
    ex.add_argument("--labels", type=int, default=None, help="check only the gap for this alphabet size")

    bs = sub.add_parser("bound-sweep", parents=[common], help="bound check over random one-step games")
    bs.add_argument("--trials", type=int, default=1000)
    bs.add_argument("--seed", type=int, default=0)
    bs.add_argument("--labels", type=_labels, default=[1, 2, 3])
    bs.add_argument("--max-sizes", type=_labels, default=[6, 6, 6, 1], help="upper bounds for |O1|,|O2|,|A1|,|A2|")
    bs.add_argument("--workers", type=int, default=1)

    mz = sub.add_parser("maze", parents=[common], help="maze ablation: centralized, independent, clustered messages")
    mz.add_argument("--seeds", type=_seeds, default=None)
    mz.add_argument("--activation", choices=("tanh", "softmax", "none"), action="append", default=None)
    mz.add_argument("--episodes", type=int, default=None)
    mz.add_argument("--workers", type=int, default=None)

    mx = sub.add_parser("matrix", parents=[common], help="gap report for a game file")
    mx.add_argument("--spec", type=Path, required=True)
    mx.add_argument("--labels", type=int, required=True)

    pd = sub.add_parser("plotdata", parents=[common], help="gnuplot columns from a run directory")
    pd.add_argument("--run", type=Path, required=True)
    return p


def _config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.out is not None:
        cfg.out_dir = str(args.out)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        out = Path(cfg.out_dir)
        if args.command == "example":
            res = run_example(args.labels, cfg.rim, out)
            sys.stdout.write(format_example(res))
            return 0 if res.ok else 1
        if args.command == "bound-sweep":
            res = run_bound_sweep(args.trials, args.max_sizes, args.labels, args.seed, cfg.rim, out, args.workers)
            print(res.summary())
            return 0 if res.violations == 0 else 1
        if args.command == "maze":
            if args.seeds is not None:
                cfg.seeds = args.seeds
            if args.activation:
                cfg.activations = list(dict.fromkeys(args.activation))
            if args.episodes is not None:
                cfg.learn = type(cfg.learn)(**{**asdict(cfg.learn), "episodes": args.episodes})
            if args.workers is not None:
                cfg.workers = args.workers
            if not cfg.seeds:
                raise ValueError("at least one seed is required")
            res = run_maze(cfg, out)
            sys.stdout.write(res.summary())
            return 0 if all(ok for _, ok in res.ordering_checks()) else 1
        if args.command == "matrix":
            rep = run_matrix(args.spec, args.labels, cfg.rim, out)
            print(rep.summary())
            return 0 if rep.holds else 1
        if args.command == "plotdata":
            for path in emit_plotdata(args.run, args.out):
                print(path)
            return 0
    except MissingArtifactsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SpecError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
