#!/usr/bin/env python3
"""Forced-diffusion refinement study on the torus.

Runs the manufactured-solution diffusion problem over a ladder of
quasi-uniform node counts and reports the fitted convergence rate of the
relative l2 error against sqrt(N). With the fourth-order setup the fitted
slope should land near 5.
"""

from __future__ import annotations

import argparse
import sys

from surfpde.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--counts", default="1000,2000,4000,8000,16000",
        help="comma-separated node counts for the refinement ladder",
    )
    parser.add_argument("--target-order", type=int, default=3)
    parser.add_argument("--outdir", default="results/torus_convergence")
    args = parser.parse_args()
    return cli_main([
        "convergence",
        "--problem", "diffusion",
        "--counts", args.counts,
        "--target-order", str(args.target_order),
        "--outdir", args.outdir,
    ])


if __name__ == "__main__":
    sys.exit(main())
