"""Closed-loop backup flow integration with sensitivity propagation.

The flow map and its state sensitivity are advanced together by a
fixed-step explicit fourth-order scheme on a uniform time grid.  The
sensitivity obeys the variational equation ``Qdot = J(x) Q`` with
``J = d f_pi / d x`` and ``Q(0) = I``, so one integration pass serves every
downstream constraint row.

Everything here is pure and reentrant; the batch entry point advances many
initial states at once with no shared mutable state, which is what the
grid sweeps build on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import FlowDivergenceError, ValidationError
from .systems import BackupPolicy, SystemModel

Array = np.ndarray


@dataclass(frozen=True)
class FlowTrajectory:
    """Sampled backup flow from one initial state.

    ``times`` is the uniform grid ``0 = tau_0 < ... < tau_N = T`` (s),
    ``states[i]`` the flow at ``tau_i``, and ``sensitivities[i]`` the
    Jacobian of ``states[i]`` with respect to the initial state.
    """

    times: Array
    states: Array
    sensitivities: Array
    origin: Array

    def __post_init__(self):
        n = self.origin.shape[0]
        m = self.times.shape[0]
        if self.states.shape != (m, n) or self.sensitivities.shape != (m, n, n):
            raise ValidationError("trajectory arrays have inconsistent shapes")


def _check_args(x0: Array, horizon: float, steps: int) -> Array:
    if horizon <= 0.0:
        raise ValidationError("horizon must be > 0")
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValidationError("initial state must be finite")
    return x0


def _flow_derivs(model: SystemModel, policy: BackupPolicy, x: Array,
                 q: Array | None) -> tuple[Array, Array | None]:
    """Augmented derivative sharing one evaluation of f, g, and pi per
    stage; finiteness is checked per step by the integrators, not here."""
    u = policy.pi_eval(x)
    g = model.g_eval(x)
    dx = model.f_eval(x) + np.matmul(g, u[..., None])[..., 0]
    if q is None:
        return dx, None
    jac = model.df_dx(x)
    if model.dg_dx is not None:
        jac = jac + np.einsum("...imk,...m->...ik", model.dg_dx(x), u)
    jac = jac + np.matmul(g, policy.dpi_dx(x))
    return dx, np.matmul(jac, q)


def _rk4_step(model: SystemModel, policy: BackupPolicy, x: Array,
              q: Array | None, dt: float) -> tuple[Array, Array | None]:
    """One explicit fourth-order step of the augmented (state, sensitivity)
    system; ``q`` is carried along only when provided."""
    half = 0.5 * dt
    k1x, k1q = _flow_derivs(model, policy, x, q)
    k2x, k2q = _flow_derivs(model, policy, x + half * k1x,
                            None if q is None else q + half * k1q)
    k3x, k3q = _flow_derivs(model, policy, x + half * k2x,
                            None if q is None else q + half * k2q)
    k4x, k4q = _flow_derivs(model, policy, x + dt * k3x,
                            None if q is None else q + dt * k3q)
    x_next = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    q_next = None if q is None else q + (dt / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    return x_next, q_next


def integrate_flow(model: SystemModel, policy: BackupPolicy, x0: Array,
                   horizon: float, steps: int) -> FlowTrajectory:
    """Integrate the backup loop from ``x0`` over ``[0, horizon]`` on a
    uniform grid of ``steps`` intervals, propagating the sensitivity
    alongside the state."""
    x0 = _check_args(x0, horizon, steps)
    n = x0.shape[0]
    dt = horizon / steps
    times = np.linspace(0.0, horizon, steps + 1)
    states = np.empty((steps + 1, n))
    sens = np.empty((steps + 1, n, n))
    x, q = x0.copy(), np.eye(n)
    states[0], sens[0] = x, q
    for i in range(steps):
        # divergence is detected after the step; silence transient overflow
        with np.errstate(over="ignore", invalid="ignore"):
            x, q = _rk4_step(model, policy, x, q, dt)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(q))):
            raise FlowDivergenceError(
                f"flow diverged at step {i + 1} (t = {times[i + 1]:.6g} s)", i + 1)
        states[i + 1], sens[i + 1] = x, q
    return FlowTrajectory(times=times, states=states, sensitivities=sens, origin=x0)


def integrate_flow_batch(model: SystemModel, policy: BackupPolicy, x0s: Array,
                         horizon: float, steps: int, *,
                         with_sensitivity: bool = True,
                         observer: Callable[[int, float, Array], None] | None = None,
                         ) -> tuple[Array, Array, Array | None]:
    """Advance a batch of initial states ``x0s`` of shape ``(B, n)``.

    Only the endpoint is kept; ``observer(i, tau_i, states)`` is invoked at
    every grid point (including i = 0) for callers that fold over the path,
    e.g. running constraint minima.  Returns ``(times, end_states, end_Q)``
    with ``end_Q = None`` when sensitivities are switched off.
    """
    x0s = np.asarray(x0s, dtype=float)
    if x0s.ndim != 2 or x0s.shape[1] != model.state_dim:
        raise ValidationError("x0s must have shape (batch, state_dim)")
    _check_args(x0s[0], horizon, steps)
    if not np.all(np.isfinite(x0s)):
        raise ValidationError("initial states must be finite")
    b, n = x0s.shape
    dt = horizon / steps
    times = np.linspace(0.0, horizon, steps + 1)
    x = x0s.copy()
    q = np.broadcast_to(np.eye(n), (b, n, n)).copy() if with_sensitivity else None
    if observer is not None:
        observer(0, 0.0, x)
    for i in range(steps):
        with np.errstate(over="ignore", invalid="ignore"):
            x, q = _rk4_step(model, policy, x, q, dt)
        ok = np.all(np.isfinite(x)) and (q is None or np.all(np.isfinite(q)))
        if not ok:
            raise FlowDivergenceError(
                f"flow diverged at step {i + 1} (t = {times[i + 1]:.6g} s)", i + 1)
        if observer is not None:
            observer(i + 1, times[i + 1], x)
    return times, x, q


def sensitivity_fd_check(model: SystemModel, policy: BackupPolicy, x0: Array,
                         horizon: float, steps: int, fd_step: float) -> float:
    """Compare the propagated sensitivity against central differences of the
    flow endpoint.

    Returns the largest entrywise deviation scaled by
    ``max(1, max |finite-difference Jacobian|)``.
    """
    if fd_step <= 0.0:
        raise ValidationError("fd_step must be > 0")
    x0 = _check_args(x0, horizon, steps)
    n = x0.shape[0]
    traj = integrate_flow(model, policy, x0, horizon, steps)
    q_end = traj.sensitivities[-1]

    perturbed = np.repeat(x0[None, :], 2 * n, axis=0)
    for j in range(n):
        perturbed[2 * j, j] += fd_step
        perturbed[2 * j + 1, j] -= fd_step
    _, ends, _ = integrate_flow_batch(model, policy, perturbed, horizon, steps,
                                      with_sensitivity=False)
    fd = np.empty((n, n))
    for j in range(n):
        fd[:, j] = (ends[2 * j] - ends[2 * j + 1]) / (2.0 * fd_step)
    scale = max(1.0, float(np.max(np.abs(fd))))
    return float(np.max(np.abs(q_end - fd)) / scale)
