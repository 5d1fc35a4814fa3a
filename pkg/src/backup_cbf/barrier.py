"""Implicit backup barrier: evaluation, constraint rows, and the filter.

The barrier value at a state is the worst case over the sampled backup
flow: every path constraint at every grid time, plus the terminal
function at the horizon.  Its zero-superlevel set is the control
invariant set induced by the backup policy.

The filter solves, at each call,

    min ||u - u0||^2  over the input box, subject to
    grad hC_k(Phi_i) . (Q_i (f(x) + g(x) u) - f_pi(Phi_i)) + alpha(hC_k(Phi_i)) >= 0
    grad hS(Phi_N) . Q_N (f(x) + g(x) u) + alpha(hS(Phi_N)) >= 0

with one row per (constraint, grid time) pair and one terminal row.  The
terminal row has no drift correction: the horizon endpoint advances with
current time, while each path row pins an absolute time along the flow.
At ``u = pi(x)`` the path derivative terms cancel identically, which is
what makes the program feasible whenever the barrier is nonnegative.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import QpSolverError, ValidationError
from .flow import FlowTrajectory, integrate_flow, integrate_flow_batch
from .qp import QpProblem, QpSolver
from .systems import BackupPolicy, SafetySpec, SystemModel, closed_loop_rhs

Array = np.ndarray

TERMINAL_INDEX = -1  # constraint index marking the terminal entry in argmin


@dataclass(frozen=True)
class BarrierEvaluation:
    """Barrier value with its bookkeeping for one state.

    ``per_tau_values[k, i]`` tabulates path constraint ``k`` along the flow
    grid; ``argmin`` is ``(k, i)`` of the minimizing entry, with
    ``k = TERMINAL_INDEX`` when the terminal value attains the minimum.
    """

    h_value: float
    per_tau_values: Array
    terminal_value: float
    argmin: tuple[int, int]
    trajectory: FlowTrajectory


class BatchBarrierValues(NamedTuple):
    """Vectorized barrier values: overall, path-only minimum, terminal."""

    h: Array
    path_min: Array
    terminal: Array


@dataclass(frozen=True)
class ConstraintSet:
    """Affine rows ``a^T u >= b`` for the filter, with provenance labels.

    Labels are ``("path", k, i)`` or ``("terminal", 0, n_steps)``.  Row
    count is ``(n_steps + 1) * n_constraints + 1``; path rows are grouped
    by constraint, the terminal row comes last.
    """

    rows: tuple[tuple[Array, float], ...]
    labels: tuple[tuple[str, int, int], ...]
    input_lower: Array
    input_upper: Array

    def slacks(self, u: Array) -> Array:
        u = np.asarray(u, dtype=float)
        return np.array([a @ u - b for a, b in self.rows])


def eval_h(model: SystemModel, policy: BackupPolicy, spec: SafetySpec,
           x: Array, horizon: float, steps: int) -> BarrierEvaluation:
    """Integrate the backup flow once and take the worst constraint value
    over the grid, including the terminal function at the horizon."""
    traj = integrate_flow(model, policy, np.asarray(x, dtype=float),
                          horizon, steps)
    per_tau = np.stack([c.h_eval(traj.states) for c in spec.constraints])
    terminal = float(spec.terminal.h_eval(traj.states[-1]))
    path_min = float(per_tau.min())
    if path_min <= terminal:
        k, i = np.unravel_index(int(np.argmin(per_tau)), per_tau.shape)
        argmin = (int(k), int(i))
        h_value = path_min
    else:
        argmin = (TERMINAL_INDEX, steps)
        h_value = terminal
    return BarrierEvaluation(h_value=h_value, per_tau_values=per_tau,
                             terminal_value=terminal, argmin=argmin,
                             trajectory=traj)


def eval_h_batch(model: SystemModel, policy: BackupPolicy, spec: SafetySpec,
                 states: Array, horizon: float, steps: int) -> BatchBarrierValues:
    """Barrier values for a batch of states of shape ``(B, n)``.

    Streams the flow without storing paths or sensitivities, so grid-scale
    batches stay cheap; used by sweeps and sampling tests.
    """
    states = np.asarray(states, dtype=float)
    running = [None]

    def observe(_i, _t, xs):
        vals = np.stack([c.h_eval(xs) for c in spec.constraints]).min(axis=0)
        running[0] = vals if running[0] is None else np.minimum(running[0], vals)

    _, ends, _ = integrate_flow_batch(model, policy, states, horizon, steps,
                                      with_sensitivity=False, observer=observe)
    terminal = np.asarray(spec.terminal.h_eval(ends), dtype=float)
    path_min = running[0]
    return BatchBarrierValues(h=np.minimum(path_min, terminal),
                              path_min=path_min, terminal=terminal)


def build_constraints(model: SystemModel, policy: BackupPolicy, spec: SafetySpec,
                      evaluation: BarrierEvaluation, x: Array,
                      margin: float = 0.0) -> ConstraintSet:
    """Reduce the filter conditions along ``evaluation`` to rows in u.

    ``margin >= 0`` tightens every row by a constant, compensating
    inter-sample error of the time grid.
    """
    x = np.asarray(x, dtype=float)
    traj = evaluation.trajectory
    if x.shape != traj.origin.shape or not np.allclose(x, traj.origin):
        raise ValidationError("evaluation was produced from a different state")
    if margin < 0.0:
        raise ValidationError("margin must be >= 0")

    f0 = model.f_eval(x)
    g0 = model.g_eval(x)
    if g0.shape != (model.state_dim, model.input_dim):
        raise ValidationError("g(x) has the wrong shape")
    sens = traj.sensitivities              # (N+1, n, n)
    q_g = sens @ g0                        # (N+1, n, m)
    q_f = sens @ f0                        # (N+1, n)
    drift = closed_loop_rhs(model, policy, traj.states)

    rows: list[tuple[Array, float]] = []
    labels: list[tuple[str, int, int]] = []
    gamma = spec.alpha_gain
    for k, con in enumerate(spec.constraints):
        grads = con.grad_eval(traj.states)             # (N+1, n)
        a_k = np.einsum("ti,tim->tm", grads, q_g)
        b_k = (-np.einsum("ti,ti->t", grads, q_f - drift)
               - gamma * evaluation.per_tau_values[k] + margin)
        for i in range(traj.times.shape[0]):
            rows.append((a_k[i], float(b_k[i])))
            labels.append(("path", k, i))

    grad_t = spec.terminal.grad_eval(traj.states[-1])
    a_t = grad_t @ q_g[-1]
    b_t = float(-(grad_t @ q_f[-1]) - gamma * evaluation.terminal_value + margin)
    rows.append((a_t, b_t))
    labels.append(("terminal", 0, traj.times.shape[0] - 1))

    return ConstraintSet(rows=tuple(rows), labels=tuple(labels),
                         input_lower=model.input_lower,
                         input_upper=model.input_upper)


@dataclass(frozen=True)
class FilterDiagnostics:
    """Per-call record of what the filter saw and decided."""

    h_value: float
    argmin: tuple[int, int]
    flow_minima: tuple[float, ...]
    terminal_value: float
    row_count: int
    qp_status: str
    active_rows: tuple[tuple[str, int], ...]
    used_fallback: bool
    inside_set: bool
    timings_us: dict[str, int]

    def to_json_dict(self) -> dict:
        return {
            "h_value": self.h_value,
            "argmin": {"constraint": self.argmin[0], "grid_index": self.argmin[1]},
            "flow_minima": list(self.flow_minima),
            "terminal_value": self.terminal_value,
            "row_count": self.row_count,
            "qp_status": self.qp_status,
            "active_rows": [list(lab) for lab in self.active_rows],
            "used_fallback": self.used_fallback,
            "inside_set": self.inside_set,
            "timings_us": dict(self.timings_us),
        }


def filter_control(model: SystemModel, policy: BackupPolicy, spec: SafetySpec,
                   x: Array, u_nominal: Array, horizon: float, steps: int,
                   solver: QpSolver | None = None, margin: float = 0.0,
                   ) -> tuple[Array, FilterDiagnostics]:
    """Minimally adjust ``u_nominal`` so the backup barrier conditions hold.

    Returns the adjusted input and diagnostics.  If the program reports
    infeasible - possible only through numerical or grid error when the
    barrier is nonnegative - the backup input ``pi(x)`` is returned with a
    fallback flag.  An iteration-cap failure raises `QpSolverError`.
    """
    x = np.asarray(x, dtype=float)
    u_nominal = np.asarray(u_nominal, dtype=float)
    if u_nominal.shape != (model.input_dim,):
        raise ValidationError("u_nominal must have the input dimension")
    solver = solver if solver is not None else QpSolver()

    t0 = time.perf_counter()
    evaluation = eval_h(model, policy, spec, x, horizon, steps)
    t1 = time.perf_counter()
    constraints = build_constraints(model, policy, spec, evaluation, x, margin)
    t2 = time.perf_counter()
    problem = QpProblem(u0=u_nominal, rows=constraints.rows,
                        lower=model.input_lower, upper=model.input_upper)
    solution = solver.solve(problem)
    t3 = time.perf_counter()

    if solution.status == "max_iter":
        raise QpSolverError(f"active-set solver hit its iteration cap "
                            f"({solution.iterations} changes)")
    if solution.status == "infeasible":
        u_star = np.asarray(policy.pi_eval(x), dtype=float)
        used_fallback = True
        qp_status = "infeasible_fallback"
    else:
        u_star = solution.u_star
        used_fallback = False
        qp_status = solution.status

    diag = FilterDiagnostics(
        h_value=evaluation.h_value,
        argmin=evaluation.argmin,
        flow_minima=tuple(float(v) for v in
                          evaluation.per_tau_values.min(axis=1)),
        terminal_value=evaluation.terminal_value,
        row_count=len(constraints.rows),
        qp_status=qp_status,
        active_rows=solution.active_set,
        used_fallback=used_fallback,
        inside_set=evaluation.h_value >= 0.0,
        timings_us={
            "integrate": int((t1 - t0) * 1e6),
            "rows": int((t2 - t1) * 1e6),
            "qp": int((t3 - t2) * 1e6),
        })
    return u_star, diag


def terminal_row_coefficient(model: SystemModel, policy: BackupPolicy,
                             spec: SafetySpec, states: Array,
                             horizon: float, steps: int) -> Array:
    """Input coefficient of the terminal row for a batch of states; its
    norm being nonzero is the relative-degree-one property at that state."""
    states = np.asarray(states, dtype=float)
    squeeze = states.ndim == 1
    if squeeze:
        states = states[None, :]
    _, ends, q_end = integrate_flow_batch(model, policy, states, horizon, steps,
                                          with_sensitivity=True)
    grad_t = spec.terminal.grad_eval(ends)            # (B, n)
    g0 = model.g_eval(states)                         # (B, n, m)
    coeff = np.einsum("bi,bik,bkm->bm", grad_t, q_end, g0)
    return coeff[0] if squeeze else coeff


def relative_degree_probe(model: SystemModel, policy: BackupPolicy,
                          spec: SafetySpec, lower: Array, upper: Array,
                          count: int, horizon: float, steps: int,
                          seed: int = 0, tol: float = 1e-8) -> float:
    """Fraction of uniformly sampled states whose terminal row has a
    nonzero input coefficient."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    rng = np.random.default_rng(seed)
    samples = rng.uniform(lower, upper, size=(count, model.state_dim))
    coeff = terminal_row_coefficient(model, policy, spec, samples,
                                     horizon, steps)
    norms = np.linalg.norm(coeff, axis=1)
    return float(np.mean(norms > tol))
