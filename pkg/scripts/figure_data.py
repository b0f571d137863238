#!/usr/bin/env python3
"""Emit the CSV plot data behind the standard figures for one config.

Thin wrapper over the CLI: slope scan (beta against the target), the
majorant against the shifted reward, the value function and its
derivative, and the oracle iterates.

    python scripts/figure_data.py configs/bm_quadratic_cost.cfg --out fig/
"""

import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from impulse_bands.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--out", default="fig")
    ap.add_argument("--grid", type=int, default=None)
    args = ap.parse_args()

    solve_args = ["solve", args.config, "--out", args.out]
    iterate_args = ["iterate", args.config, "--out", args.out,
                    "--log-every", "5"]
    if args.grid:
        solve_args += ["--grid", str(args.grid)]
        iterate_args += ["--grid", str(args.grid)]
    code = cli_main(solve_args)
    if code != 0:
        return code
    return cli_main(iterate_args)


if __name__ == "__main__":
    sys.exit(main())
