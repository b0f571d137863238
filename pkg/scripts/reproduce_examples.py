#!/usr/bin/env python3
"""Run the three bundled example problems end to end.

For each config this solves the band policy, runs the grid oracle, and
checks a small Monte Carlo estimate against the assembled value function,
printing a one-line verdict per stage.  Use --full for the acceptance-scale
Monte Carlo run.

    python scripts/reproduce_examples.py [--out out/] [--full]
"""

import argparse
import pathlib
import sys
import time

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from impulse_bands import (SimConfig, assemble_value, build_context,
                           load_config, scan_slopes, simulate_policy,
                           value_iteration)
from impulse_bands.cli import main as cli_main

ROOT = pathlib.Path(__file__).resolve().parent.parent

EXPECTED = {
    "bm_quadratic_cost": dict(bands=[(5.077, 12.261)], beta=0.0492),
    "ou_dividend": dict(bands=[(0.2192, 0.6220)], beta=0.5749),
    "bm_sine_multiband": dict(
        bands=[(2.75 + 4 * k * np.pi, 3.52 + 4 * k * np.pi)
               for k in range(3)], beta=9.30),
}

ORACLE_OPTS = {
    "bm_quadratic_cost": {},
    "ou_dividend": dict(n_nodes=1200, n_max=400, tol=1e-7),
    "bm_sine_multiband": dict(n_nodes=3000, n_max=1500, tol=1e-5),
}

# the zero-discount example needs a long horizon (censored paths forfeit
# their remaining value) and a small step: with no discounting, every
# barrier touch missed between samples risks losing the rest of the path
SIM = {
    "bm_quadratic_cost": dict(x0=0.0, dt=2e-3, horizon=70.0, n_paths=20000),
    "ou_dividend": dict(x0=0.4, dt=2e-3, horizon=135.0, n_paths=8000),
    "bm_sine_multiband": dict(x0=10.0, dt=1e-3, horizon=30000.0,
                              n_paths=700),
}


def run_one(name, out_root, full):
    cfg_path = ROOT / "configs" / f"{name}.cfg"
    out = out_root / name
    print(f"\n=== {name} ===")

    t0 = time.perf_counter()
    code = cli_main(["solve", str(cfg_path), "--out", str(out)])
    if code != 0:
        print(f"solve FAILED with exit code {code}")
        return False
    cfg = load_config(cfg_path.read_text())
    ctx = build_context(cfg.problem, cfg.solver)
    scan = scan_slopes(ctx)
    policy = scan.policy
    exp = EXPECTED[name]
    ok = abs(policy.slope / exp["beta"] - 1) < 0.02
    for a_e, b_e in exp["bands"]:
        ok &= min(abs(a / a_e - 1) for a, _ in policy.bands) < 0.02
        ok &= min(abs(b / b_e - 1) for _, b in policy.bands) < 0.02
    print(f"solve: beta*={policy.slope:.5g}, {len(policy.bands)} band(s) "
          f"in {time.perf_counter() - t0:.1f}s "
          f"[{'ok' if ok else 'MISMATCH'} vs published values]")

    t0 = time.perf_counter()
    og = value_iteration(ctx, **ORACLE_OPTS[name])
    near = max(min(abs(t - b) for t in og.triggers) for _, b in policy.bands)
    print(f"oracle: {og.n_iter} iterations in {time.perf_counter() - t0:.1f}s, "
          f"triggers within {near:.3g} of the direct solution")

    vrep = assemble_value(ctx, policy)
    sim = dict(SIM[name])
    if full and name == "bm_quadratic_cost":
        sim.update(dt=1e-3, n_paths=100_000)
    t0 = time.perf_counter()
    res = simulate_policy(ctx, policy, SimConfig(seed=2024, **sim))
    v = float(vrep.value(sim["x0"]))
    z = (res.estimate - v) / res.std_error if res.std_error else 0.0
    print(f"simulate: estimate {res.estimate:.4f} +/- {res.std_error:.4f} "
          f"vs value {v:.4f} (z={z:+.2f}) in {time.perf_counter() - t0:.1f}s")
    return ok and abs(z) <= 3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="out")
    ap.add_argument("--full", action="store_true",
                    help="acceptance-scale Monte Carlo for the first example")
    args = ap.parse_args()
    out_root = pathlib.Path(args.out)
    results = [run_one(name, out_root, args.full) for name in EXPECTED]
    print("\nall ok" if all(results) else "\nsome stages disagreed")
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
