"""Command-line entry point: one subcommand per experiment kind."""
from __future__ import annotations

import argparse
import sys

from .experiments import KINDS, ConfigError, RunFailed, parse_config, run_experiment

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catalytic-pam", description=__doc__)
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", required=True, help="INI config document")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="master seed, unsigned 64-bit (overrides the config)")
        p.add_argument("--reps", type=int, help="number of replicas (overrides the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = parse_config(text, seed=args.seed, n_reps=args.reps, out=args.out)
        if cfg.kind != args.kind:
            raise ConfigError([f"config kind {cfg.kind!r} does not match subcommand {args.kind!r}"])
    except ConfigError as exc:
        for v in exc.violations:
            print(f"invalid config: {v}", file=sys.stderr)
        return EXIT_INVALID
    try:
        manifest = run_experiment(cfg)
    except RunFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    for f in manifest["files"]:
        print(f"{manifest['directory']}/{f['name']}  {f['sha256'][:16]}")
    for v in manifest["violations"]:
        print(f"warning: {v}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
