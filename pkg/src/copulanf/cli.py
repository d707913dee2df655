"""Command-line entry point: ``copulanf <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .harness.config import ConfigError, ExperimentConfig, default_out, load_config
from .harness.experiment import (
    export_quantiles,
    generate_target,
    run_surface_report,
    run_sweep,
    run_trial,
)
from .harness.io import LayoutError, write_table
from .numerics import Rng


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="INI experiment file")
    p.add_argument("--preset", help="base preset (normal, heavierTails, correctFamily, exactMarginals)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--trials", type=int, help="number of trials")
    p.add_argument("--epochs", type=int, help="epochs per trial")
    p.add_argument("--out", help="output directory (default: $COPULANF_OUT or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copulanf", description="Copula-base normalizing flow experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("sweep", help="run all trials and aggregate")
    _common(p)
    p.add_argument("--workers", type=int, help="parallel trial processes (0 = all cores)")
    p.add_argument("--surfaces", action="store_true", help="also emit Lipschitz surfaces per trial")

    p = sub.add_parser("trial", help="run a single trial")
    _common(p)
    p.add_argument("--index", type=int, default=0, help="trial index")
    p.add_argument("--surfaces", action="store_true")

    p = sub.add_parser("surfaces", help="Lipschitz surfaces of a saved flow")
    _common(p)
    p.add_argument("--params", type=Path, required=True, help="parameter file from a trial")

    p = sub.add_parser("quantiles", help="model and target quantile curves")
    _common(p)
    p.add_argument("--params", type=Path, help="parameter file (default: identity flow)")
    p.add_argument("--n", type=int, help="number of model samples")

    p = sub.add_parser("gen-data", help="sample the target distribution")
    _common(p)
    p.add_argument("--n", type=int, required=True, help="number of points")
    p.add_argument("--file", default="target.csv", help="file name inside --out")

    sub.add_parser("selftest", help="fast invariant checks")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig(out=default_out())
    cfg = cfg.with_overrides(
        preset=args.preset, epochs=args.epochs, seed=args.seed, trials=args.trials, out=args.out
    )
    if getattr(args, "workers", None) is not None:
        cfg = replace(cfg, workers=args.workers)
    if getattr(args, "surfaces", False):
        cfg = replace(cfg, surfaces=True)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "selftest":
        from .selftest import run_selftest

        return 0 if run_selftest() else 1
    try:
        cfg = _config(args)
        if args.command == "sweep":
            s = run_sweep(cfg)
            print(f"{s.preset}: {s.n_trials} trials, {s.n_excluded} excluded, final test mean {s.final_mean():.4f}")
        elif args.command == "trial":
            r = run_trial(cfg, args.index)
            print(f"trial {r.trial}: final test nll {r.final_test_nll:.4f} diverged={r.diverged} excluded={r.excluded}")
        elif args.command == "surfaces":
            rep = run_surface_report(cfg, args.params)
            print(f"log10 max forward {rep['forward']['max']:.4f} inverse {rep['inverse']['max']:.4f}")
        elif args.command == "quantiles":
            print(export_quantiles(cfg, args.params, n=args.n))
        elif args.command == "gen-data":
            if args.n < 1:
                raise ConfigError("--n must be >= 1")
            x = generate_target(Rng(cfg.seed), args.n, cfg.target)
            path = Path(cfg.out) / args.file
            write_table(path, ("x1", "x2"), x.tolist())
            print(path)
    except (ConfigError, LayoutError, FileNotFoundError) as exc:
        print(f"copulanf: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
