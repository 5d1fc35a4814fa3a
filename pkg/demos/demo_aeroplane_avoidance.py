#!/usr/bin/env python3
"""Collision avoidance in relative coordinates.

The backup policy is a bang-bang turn away from the opponent (smoothed for
differentiability).  Despite its simplicity, the danger set it induces is
nearly the minimal one: the demo compares it against the grid baseline and
then flies a filtered head-on encounter.

Run:  python demos/demo_aeroplane_avoidance.py     (about half a minute)
"""

import numpy as np

from backup_cbf import (GridGeometry, Scenario, compare_sets, constraint_grid,
                        make_benchmark, simulate, solve_invariant,
                        sweep_backup_h)

model, policy, spec = make_benchmark("aeroplane")
geom = GridGeometry((-6.0, -6.0, -np.pi), (6.0, 6.0, np.pi), (61, 61, 61),
                    (False, False, True))    # heading axis wraps

print("solving the grid baseline...")
baseline = solve_invariant(constraint_grid(geom, spec), model, tol=1e-4,
                           max_steps=20000)
print("sweeping the backup set...")
backup = sweep_backup_h(model, policy, spec, geom, 4.0, 200)

metrics = compare_sets(backup, baseline)
danger_b = ~backup.membership()
danger_h = ~baseline.membership()
danger_jaccard = (danger_b & danger_h).sum() / max((danger_b | danger_h).sum(), 1)
print()
print(f"safe-set jaccard:    {metrics['jaccard']:.3f}")
print(f"danger-set jaccard:  {danger_jaccard:.3f}")
print(f"danger cells:        backup {danger_b.sum()}, "
      f"baseline {danger_h.sum()} of {danger_b.size}")
print(f"backup cells outside baseline: {metrics['fraction_a_not_b'] * 100:.2f}%")

print()
print("head-on encounter, nominal pilot ignores the opponent:")
sc = Scenario(benchmark="aeroplane", x0=(4.0, 0.3, np.pi),
              nominal={"kind": "constant", "value": [0.0]},
              duration_s=10.0, dt_s=0.02, label="head_on")
log = simulate(sc)
sep = np.sqrt(log.states[:, 0] ** 2 + log.states[:, 1] ** 2)
print(f"  filtered: closest approach {sep.min():.3f} m (minimum allowed 1.0)")

off = Scenario(**{**sc.to_json_dict(), "filter_on": False})
log_off = simulate(off)
sep_off = np.sqrt(log_off.states[:, 0] ** 2 + log_off.states[:, 1] ** 2)
print(f"  unfiltered: closest approach {sep_off.min():.3f} m -> collision")
