#!/usr/bin/env python3
"""Lane keeping: how the backup policy shapes the invariant set.

Two backup profiles are compared against the grid-computed near-maximal
invariant set on the v = 5 m/s slice:

  * conservative - hold cruise speed, steer back gently;
  * aggressive   - brake to a stop while straightening.

Stopping is a much stronger safety maneuver, so the aggressive profile's
set nearly fills the maximal one.

Run:  python demos/demo_dubins_sets.py          (about a minute)
"""

import numpy as np

from backup_cbf import (GridGeometry, compare_sets, constraint_grid,
                        make_benchmark, slice_grid, solve_invariant,
                        sweep_backup_h)

geom = GridGeometry((-2.25, -1.0, -1.25), (2.25, 11.0, 1.25), (61, 61, 61),
                    (False, False, False))

print("solving the grid baseline (61^3 cells)...")
model, policy, spec = make_benchmark("dubins")
baseline = solve_invariant(constraint_grid(geom, spec), model, tol=1e-4,
                           max_steps=20000)

print("sweeping the conservative backup set...")
grid_cons = sweep_backup_h(model, policy, spec, geom, 8.0, 100)

print("sweeping the aggressive backup set...")
model_a, policy_a, spec_a = make_benchmark("dubins", {"profile": "aggressive"})
grid_aggr = sweep_backup_h(model_a, policy_a, spec_a, geom, 8.0, 100)

print()
print(f"{'profile':>14} | {'3-D jaccard':>11} | {'v=5 slice jaccard':>17} | "
      f"{'outside baseline':>16}")
print("-" * 70)
base_slice = slice_grid(baseline, 1, 5.0)
for name, grid in [("conservative", grid_cons), ("aggressive", grid_aggr)]:
    full = compare_sets(grid, baseline)
    sl = compare_sets(slice_grid(grid, 1, 5.0), base_slice)
    print(f"{name:>14} | {full['jaccard']:>11.3f} | {sl['jaccard']:>17.3f} | "
          f"{full['fraction_a_not_b'] * 100:>15.2f}%")

print()
print("ASCII view of the v = 5 slice (rows: lateral offset Y, cols: heading)")
print("  #  in both sets      o  baseline only      .  outside both")
bs = base_slice.membership()
ag = slice_grid(grid_aggr, 1, 5.0).membership()
ys = geom.axis_coordinates(0)
for i in range(0, 61, 3):
    row = "".join("#" if (bs[i, j] and ag[i, j]) else
                  "o" if bs[i, j] else "." for j in range(0, 61, 2))
    print(f"  Y={ys[i]:+5.2f}  {row}")
