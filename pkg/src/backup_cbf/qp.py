"""Small dense quadratic program: min ||u - u0||^2 over linear rows + box.

The solver is a dual active-set method specialized to the unit Hessian:
it starts from the unconstrained minimum ``u0``, repeatedly pulls in the
most violated constraint, and keeps the working set dually feasible.  For
these desk-scale problems (a few hundred rows, input dimension <= 8) every
working-set subproblem is a tiny least-squares solve, the active set is
reported exactly, and infeasibility surfaces as a Farkas-style certificate
(the incoming normal is a nonpositive combination of the working set).

A solver instance carries warm-start state (the previous active set is
tried first when scanning for violated rows); instances are cheap to clone
and must not be shared across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ValidationError

Array = np.ndarray

QpStatus = Literal["optimal", "infeasible", "max_iter"]

# (kind, index): kind is "row" for caller rows, "lower"/"upper" for box bounds.
ActiveLabel = tuple[str, int]


@dataclass(frozen=True)
class QpProblem:
    """``min ||u - u0||^2  s.t.  a_i^T u >= b_i,  lower <= u <= upper``.

    Box bounds may be infinite.  ``rows`` is a sequence of ``(a, b)`` pairs.
    """

    u0: Array
    rows: tuple[tuple[Array, float], ...]
    lower: Array
    upper: Array

    def __post_init__(self):
        u0 = np.asarray(self.u0, dtype=float)
        if u0.ndim != 1 or not np.all(np.isfinite(u0)):
            raise ValidationError("u0 must be a finite vector")
        m = u0.shape[0]
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != (m,) or hi.shape != (m,):
            raise ValidationError("box bounds must match the input dimension")
        if not np.all(lo <= hi):
            raise ValidationError("lower must be <= upper componentwise")
        rows = []
        for a, b in self.rows:
            a = np.asarray(a, dtype=float)
            if a.shape != (m,) or not np.all(np.isfinite(a)) or not np.isfinite(b):
                raise ValidationError("each row must be a finite (a, b) with a of "
                                      "the input dimension")
            rows.append((a, float(b)))
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "rows", tuple(rows))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.u0.shape[0]


@dataclass(frozen=True)
class QpSolution:
    u_star: Array
    status: QpStatus
    active_set: tuple[ActiveLabel, ...]
    kkt_residual: float
    iterations: int


def _stack(problem: QpProblem) -> tuple[Array, Array, list[ActiveLabel]]:
    """Stack caller rows and finite box bounds into one a^T u >= b system."""
    m = problem.dim
    mats, rhs, labels = [], [], []
    for i, (a, b) in enumerate(problem.rows):
        mats.append(a)
        rhs.append(b)
        labels.append(("row", i))
    eye = np.eye(m)
    for j in range(m):
        if np.isfinite(problem.lower[j]):
            mats.append(eye[j])
            rhs.append(problem.lower[j])
            labels.append(("lower", j))
    for j in range(m):
        if np.isfinite(problem.upper[j]):
            mats.append(-eye[j])
            rhs.append(-problem.upper[j])
            labels.append(("upper", j))
    if mats:
        return np.array(mats), np.array(rhs), labels
    return np.zeros((0, m)), np.zeros(0), labels


def _kkt_residual(u: Array, u0: Array, a_mat: Array, b_vec: Array,
                  work: list[int], lam: list[float]) -> float:
    grad = u - u0
    for j, idx in enumerate(work):
        grad = grad - lam[j] * a_mat[idx]
    stationarity = float(np.max(np.abs(grad))) if grad.size else 0.0
    slacks = a_mat @ u - b_vec if len(b_vec) else np.zeros(0)
    primal = float(max(0.0, -slacks.min())) if slacks.size else 0.0
    comp = max((abs(lam[j] * slacks[work[j]]) for j in range(len(work))),
               default=0.0)
    return max(stationarity, primal, comp)


class QpSolver:
    """Warm-startable active-set solver; one instance per thread."""

    def __init__(self):
        self._warm: list[ActiveLabel] = []

    def clone(self) -> "QpSolver":
        other = QpSolver()
        other._warm = list(self._warm)
        return other

    def solve(self, problem: QpProblem, warm_start: bool = True) -> QpSolution:
        a_mat, b_vec, labels = _stack(problem)
        n_con, m = a_mat.shape
        u = problem.u0.copy()
        work: list[int] = []
        lam: list[float] = []
        max_changes = 100 * (n_con + m)
        changes = 0

        row_scale = np.maximum(1.0, np.linalg.norm(a_mat, axis=1)) if n_con else None
        feas_tol = 1e-10
        label_to_idx = {lab: i for i, lab in enumerate(labels)}
        warm_pref = [label_to_idx[lab] for lab in self._warm
                     if warm_start and lab in label_to_idx]

        def finish(status: QpStatus) -> QpSolution:
            active = tuple(labels[i] for i in work)
            if status == "optimal":
                kkt = _kkt_residual(u, problem.u0, a_mat, b_vec, work, lam)
                self._warm = list(active)
            else:
                kkt = float("inf")
            return QpSolution(u_star=u.copy(), status=status, active_set=active,
                              kkt_residual=kkt, iterations=changes)

        while True:
            slacks = a_mat @ u - b_vec if n_con else np.zeros(0)
            scaled = slacks / row_scale if n_con else slacks
            p = None
            for idx in warm_pref:
                if idx not in work and scaled[idx] < -feas_tol:
                    p = idx
                    break
            if p is None:
                if n_con and scaled.min() < -feas_tol:
                    # most violated in scale-free units; ties -> lowest index
                    p = int(np.argmin(scaled))
                else:
                    return finish("optimal")

            # Pull constraint p into the working set, stepping the primal
            # point along the projected normal and trading off multipliers
            # of blocking constraints.
            n_p = a_mat[p]
            lam_p = 0.0
            while True:
                if changes >= max_changes:
                    return finish("max_iter")
                if work:
                    n_mat = a_mat[work].T  # m x q
                    gram = n_mat.T @ n_mat
                    try:
                        r = np.linalg.solve(gram, n_mat.T @ n_p)
                    except np.linalg.LinAlgError:
                        r = np.linalg.lstsq(gram, n_mat.T @ n_p, rcond=None)[0]
                    z = n_p - n_mat @ r
                else:
                    r = np.zeros(0)
                    z = n_p.copy()

                z_norm2 = float(z @ z)
                degenerate = z_norm2 <= 1e-22 * max(1.0, float(n_p @ n_p))
                s_p = float(n_p @ u - b_vec[p])
                t_full = np.inf if degenerate else max(0.0, -s_p / z_norm2)

                t_drop, k_drop = np.inf, -1
                for j in range(len(work)):
                    if r[j] > 1e-12:
                        cand = lam[j] / r[j]
                        if cand < t_drop:
                            t_drop, k_drop = cand, j

                t = min(t_full, t_drop)
                if not np.isfinite(t):
                    # n_p lies in the span of the working set with no
                    # positive multiplier to trade: no feasible point exists.
                    return finish("infeasible")

                if not degenerate:
                    u = u + t * z
                for j in range(len(work)):
                    lam[j] -= t * r[j]
                lam_p += t

                if t == t_full and not degenerate:
                    work.append(p)
                    lam.append(lam_p)
                    changes += 1
                    break
                # partial step: the blocking constraint leaves the set
                work.pop(k_drop)
                lam.pop(k_drop)
                changes += 1


def solve(problem: QpProblem) -> QpSolution:
    """One-shot solve with a fresh (cold) solver."""
    return QpSolver().solve(problem, warm_start=False)
