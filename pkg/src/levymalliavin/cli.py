"""Command-line entry point: one subcommand per experiment kind."""

from __future__ import annotations

import argparse
import sys

from .config import KINDS, PRESETS, ConfigError, load_config, preset
from .runner import run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="levymalliavin",
        description="Monte Carlo checks of Malliavin calculus identities on Lévy paths.")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", metavar="PATH", help="YAML or JSON experiment file")
        src.add_argument("--preset", metavar="NAME", help="shipped preset name")
        p.add_argument("--seed", type=int, help="override the ensemble seed")
        p.add_argument("--paths", type=int, help="override the number of paths")
        p.add_argument("--out", metavar="DIR", help="directory for CSV and summary files")
        p.add_argument("--workers", type=int, default=1, help="worker threads (default 1)")
    sub.add_parser("presets", help="list the shipped presets")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.kind == "presets":
        for name in sorted(PRESETS):
            print(f"{name:22} {PRESETS[name]['kind']}")
        return 0
    try:
        cfg = load_config(args.config) if args.config else preset(args.preset)
        if cfg.kind != args.kind:
            raise ConfigError(f"config is a {cfg.kind!r} experiment, not {args.kind!r}")
        cfg = cfg.with_overrides(seed=args.seed, paths=args.paths)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        report = run(cfg, args.out, workers=args.workers)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(report.summary_text())
    return report.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
