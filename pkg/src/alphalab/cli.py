"""Command-line front end: one subcommand per experiment."""

from __future__ import annotations

import argparse
import sys

from .errors import AlphaLabError, ConfigError
from .lab import EXPERIMENTS, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alphalab",
        description="Numerical laboratory for perturbed-energy harmonic maps: "
                    "energies, tension fields, stability spectra, gradient "
                    "flow, and closed-form criterion audits.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="scenario config (YAML)")
        p.add_argument("--out-dir", default=None,
                       help="output directory (default runs/<experiment>)")
        p.add_argument("--seed", type=int, default=None, help="override RNG seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads for sweep experiments")
        p.add_argument("--tol-scale", type=float, default=None,
                       help="multiply every audit tolerance by this factor")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out_dir or f"runs/{args.experiment}"
    try:
        manifest = run(args.config, out_dir, seed=args.seed, threads=args.threads,
                       tol_scale=args.tol_scale, experiment=args.experiment)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AlphaLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for line in manifest.conflicts:
        print(f"known paper conflict: {line}")
    for line in manifest.failures:
        print(f"FAIL {line}", file=sys.stderr)
    print(f"{manifest.experiment}: wrote {len(manifest.outputs)} outputs to "
          f"{out_dir} ({manifest.wall_time_s:.2f} s)")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
