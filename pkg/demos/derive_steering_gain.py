#!/usr/bin/env python3
"""Provenance of the lane-keeping defaults baked into the dubins benchmark.

The conservative steering gain is the infinite-horizon quadratic-regulator
gain of the lateral subsystem

    d/dt [Y; psi] = [[0, v], [0, 0]] [Y; psi] + [0; 1] r

linearized at the cruise speed, computed here by integrating the Riccati
differential equation to its steady state (plain numpy, no solver
dependency).  The terminal ellipsoid matrix comes from the closed-loop
Lyapunov equation, and the level is then checked against the three
conditions the terminal set has to satisfy:

  1. it lies inside the lane/heading constraints,
  2. the commanded inputs stay unsaturated inside it,
  3. the backup flow does not leave it (sampled on the boundary).

Run:  python demos/derive_steering_gain.py
"""

import numpy as np

from backup_cbf import closed_loop_rhs, make_benchmark

V_CRUISE = 5.0
Q_WEIGHTS = np.diag([0.25, 1.0])
R_WEIGHT = 25.0


def riccati_steady_state(a, b, q, r, dt=5e-4, steps=600_000):
    p = np.zeros_like(a)
    for _ in range(steps):
        dp = a.T @ p + p @ a - p @ b @ b.T @ p / r + q
        p = p + dt * dp
    return p


a_lat = np.array([[0.0, V_CRUISE], [0.0, 0.0]])
b_lat = np.array([[0.0], [1.0]])
p_lat = riccati_steady_state(a_lat, b_lat, Q_WEIGHTS, R_WEIGHT)
gain = (b_lat.T @ p_lat / R_WEIGHT)[0]
print(f"regulator gain K = {gain}   (steering law r = -K [Y; psi])")
print(f"  -> benchmark default k_y = {tuple(-gain)}")

k_v = 1.0
a_cl = np.array([[0.0, 0.0, V_CRUISE],
                 [0.0, -k_v, 0.0],
                 [-gain[0], 0.0, -gain[1]]])
print(f"closed-loop eigenvalues: {np.linalg.eigvals(a_cl)}")

lhs = np.kron(np.eye(3), a_cl.T) + np.kron(a_cl.T, np.eye(3))
p_term = np.linalg.solve(lhs, -np.eye(3).flatten()).reshape(3, 3)
p_term = 0.5 * (p_term + p_term.T)
print(f"terminal quadratic form P =\n{p_term}")

# validate the shipped defaults against the three conditions
model, policy, spec = make_benchmark("dubins")
rng = np.random.default_rng(1)
c_level = 1.0
chol = np.linalg.cholesky(np.linalg.inv(p_term))
z = rng.normal(size=(20_000, 3))
z /= np.linalg.norm(z, axis=1, keepdims=True)
boundary = z @ (chol.T * np.sqrt(c_level)) + np.array([0.0, V_CRUISE, 0.0])

h_lane = np.stack([c.h_eval(boundary) for c in spec.constraints]).min(axis=0)
inputs = policy.pi_eval(boundary)
inward = np.einsum("ni,ni->n", spec.terminal.grad_eval(boundary),
                   closed_loop_rhs(model, policy, boundary))
print(f"\nellipsoid level c = {c_level}:")
print(f"  1. containment: min constraint value on boundary = {h_lane.min():.3f}")
print(f"  2. saturation: max |a| = {np.abs(inputs[:, 0]).max():.3f} (limit 3), "
      f"max |r| = {np.abs(inputs[:, 1]).max():.3f} (limit 0.5)")
print(f"  3. invariance: min inward flow on boundary = {inward.min():.4f}")
assert h_lane.min() > 0 and inward.min() >= 0
print("all conditions hold")
