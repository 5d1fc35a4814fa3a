"""Benchmark dynamics, backup policies, and safety specifications.

All quantities are SI (m, m/s, m/s^2, rad, rad/s).  Every evaluator is a
pure function and accepts states of shape ``(n,)`` or batched ``(..., n)``,
broadcasting over the leading axes.  Values are immutable after
construction and safe to share across threads.

Four benchmark instances are provided:

``toy1d``
    Scalar plant ``xdot = u`` with linear feedback backup ``u = -k x``
    saturated to the input box.  Closed forms for everything; used as the
    analytic anchor throughout the test suite.

``double_integrator``
    Position/velocity chain ``sdot = v, vdot = u`` with a brake-to-rest
    backup.  Its induced invariant set has the well-known closed form
    ``c_limit - s - 1{v>0} v^2 / (2 u_max)`` which `di_closed_form_h`
    exposes as an oracle.

``dubins``
    Lane keeping for a Dubins-style car ``(Y, v, psi)`` with saturated
    speed-hold plus LQR steering backup.  Two gain profiles are bundled:
    ``conservative`` (hold cruise speed) and ``aggressive`` (brake to a
    stop), the latter inducing a much larger invariant set.

``aeroplane``
    Planar collision avoidance in relative coordinates
    ``(dx, dy, dpsi)`` against an opponent flying a fixed heading; the
    backup turns away from the opponent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import EvaluationError, ValidationError

Array = np.ndarray


# ---------------------------------------------------------------------------
# C1 smoothings of switching nonlinearities.
#
# Each smoothing is *exact* away from the switching surface so closed-form
# trajectories remain valid there; only a band of width `eps` is blended.
# `eps = 0` selects the hard (discontinuous-derivative) variant, kept for
# cross-checks only: its derivative is zero in saturated regions.
# ---------------------------------------------------------------------------


def smooth_positive_indicator(v: Array | float, eps: float) -> Array:
    """~= 1{v > 0}; exactly 1 for v >= 0 and 0 for v <= -eps.

    The blend band sits *below* the surface so the indicator engages
    slightly early - the conservative side for a braking policy.
    """
    if np.ndim(v) == 0:
        vf = float(v)
        if eps == 0.0:
            return np.float64(1.0 if vf > 0.0 else 0.0)
        t = min(max((vf + eps) / eps, 0.0), 1.0)
        return np.float64(t * t * (3.0 - 2.0 * t))
    v = np.asarray(v, dtype=float)
    if eps == 0.0:
        return (v > 0.0).astype(float)
    t = np.clip((v + eps) / eps, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def smooth_positive_indicator_deriv(v: Array | float, eps: float) -> Array:
    if np.ndim(v) == 0:
        if eps == 0.0:
            return np.float64(0.0)
        t = min(max((float(v) + eps) / eps, 0.0), 1.0)
        return np.float64(6.0 * t * (1.0 - t) / eps)
    v = np.asarray(v, dtype=float)
    if eps == 0.0:
        return np.zeros_like(v)
    t = np.clip((v + eps) / eps, 0.0, 1.0)
    return 6.0 * t * (1.0 - t) / eps


def smooth_sign(y: Array | float, eps: float) -> Array:
    """~= sign(y); exact +-1 for |y| >= eps, odd C1 blend through 0."""
    if np.ndim(y) == 0:
        yf = float(y)
        if eps == 0.0:
            return np.float64(0.0 if yf == 0.0 else (1.0 if yf > 0.0 else -1.0))
        q = min(max(yf / eps, -1.0), 1.0)
        return np.float64(q * (2.0 - abs(q)))
    y = np.asarray(y, dtype=float)
    if eps == 0.0:
        return np.sign(y)
    q = np.clip(y / eps, -1.0, 1.0)
    return q * (2.0 - np.abs(q))


def smooth_sign_deriv(y: Array | float, eps: float) -> Array:
    if np.ndim(y) == 0:
        if eps == 0.0:
            return np.float64(0.0)
        q = float(y) / eps
        return np.float64(2.0 * (1.0 - abs(q)) / eps if abs(q) < 1.0 else 0.0)
    y = np.asarray(y, dtype=float)
    if eps == 0.0:
        return np.zeros_like(y)
    q = y / eps
    inside = np.abs(q) < 1.0
    return np.where(inside, 2.0 * (1.0 - np.abs(q)) / eps, 0.0)


def _check_blend(lo: float, hi: float, eps: float):
    if eps > 0.0 and hi - lo <= 4.0 * eps:
        raise ValidationError("saturation blend width exceeds the box size")


def smooth_saturate(y: Array | float, lo: float, hi: float, eps: float) -> Array:
    """Saturation to [lo, hi]; identity on the interior, quadratic C1 blend
    on bands of half-width eps around each bound."""
    _check_blend(lo, hi, eps)
    if np.ndim(y) == 0:
        yf = float(y)
        if eps > 0.0:
            if hi - eps < yf < hi + eps:
                return np.float64(yf - (yf - (hi - eps)) ** 2 / (4.0 * eps))
            if lo - eps < yf < lo + eps:
                return np.float64(yf + ((lo + eps) - yf) ** 2 / (4.0 * eps))
        return np.float64(min(max(yf, lo), hi))
    y = np.asarray(y, dtype=float)
    out = np.clip(y, lo, hi)
    if eps == 0.0:
        return out
    out = np.where((y > hi - eps) & (y < hi + eps),
                   y - (y - (hi - eps)) ** 2 / (4.0 * eps), out)
    out = np.where((y > lo - eps) & (y < lo + eps),
                   y + ((lo + eps) - y) ** 2 / (4.0 * eps), out)
    return out


def smooth_saturate_deriv(y: Array | float, lo: float, hi: float, eps: float) -> Array:
    _check_blend(lo, hi, eps)
    if np.ndim(y) == 0:
        yf = float(y)
        if eps == 0.0:
            return np.float64(1.0 if lo < yf < hi else 0.0)
        if hi - eps < yf < hi + eps:
            return np.float64(1.0 - (yf - (hi - eps)) / (2.0 * eps))
        if lo - eps < yf < lo + eps:
            return np.float64(1.0 - ((lo + eps) - yf) / (2.0 * eps))
        return np.float64(1.0 if lo - eps < yf < hi + eps else 0.0)
    y = np.asarray(y, dtype=float)
    if eps == 0.0:
        return ((y > lo) & (y < hi)).astype(float)
    d = np.where((y > lo - eps) & (y < hi + eps), 1.0, 0.0)
    d = np.where((y > hi - eps) & (y < hi + eps),
                 1.0 - (y - (hi - eps)) / (2.0 * eps), d)
    d = np.where((y > lo - eps) & (y < lo + eps),
                 1.0 - ((lo + eps) - y) / (2.0 * eps), d)
    return d


# ---------------------------------------------------------------------------
# Domain types.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SystemModel:
    """Control-affine plant ``xdot = f(x) + g(x) u`` with a box input set.

    ``df_dx(x)`` has shape ``(..., n, n)``; ``dg_dx(x)`` has shape
    ``(..., n, m, n)`` with entry ``[i, j, k] = d g[i, j] / d x[k]``.
    ``dg_dx = None`` declares the input matrix state-independent.
    """

    state_dim: int
    input_dim: int
    f_eval: Callable[[Array], Array]
    g_eval: Callable[[Array], Array]
    df_dx: Callable[[Array], Array]
    dg_dx: Callable[[Array], Array] | None
    input_lower: Array
    input_upper: Array
    state_names: tuple[str, ...] = ()
    input_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.state_dim < 1 or self.input_dim < 1:
            raise ValidationError("state_dim and input_dim must be positive")
        lo = np.asarray(self.input_lower, dtype=float)
        hi = np.asarray(self.input_upper, dtype=float)
        if lo.shape != (self.input_dim,) or hi.shape != (self.input_dim,):
            raise ValidationError("input bounds must have shape (input_dim,)")
        if not np.all(lo < hi):
            raise ValidationError("input_lower must be < input_upper componentwise")
        object.__setattr__(self, "input_lower", lo)
        object.__setattr__(self, "input_upper", hi)
        if not self.state_names:
            object.__setattr__(self, "state_names",
                               tuple(f"x{i}" for i in range(self.state_dim)))
        if not self.input_names:
            object.__setattr__(self, "input_names",
                               tuple(f"u{j}" for j in range(self.input_dim)))


@dataclass(frozen=True)
class BackupPolicy:
    """Feedback law ``u = pi(x)`` with its state Jacobian.

    ``smoothing_eps`` is the width of the C1 blends inside the policy;
    ``0.0`` marks the hard (test-only) variant whose Jacobian is zero in
    saturated regions.
    """

    pi_eval: Callable[[Array], Array]
    dpi_dx: Callable[[Array], Array]
    smoothing_eps: float

    def __post_init__(self):
        if self.smoothing_eps < 0.0:
            raise ValidationError("smoothing_eps must be >= 0")


@dataclass(frozen=True)
class ScalarConstraint:
    """One scalar safety function with its gradient, ``h(x) >= 0`` is safe."""

    h_eval: Callable[[Array], Array]
    grad_eval: Callable[[Array], Array]
    name: str = ""


@dataclass(frozen=True)
class SafetySpec:
    """Path constraints, terminal function, and the linear class-K gain."""

    constraints: tuple[ScalarConstraint, ...]
    terminal: ScalarConstraint
    alpha_gain: float

    def __post_init__(self):
        if self.alpha_gain <= 0.0:
            raise ValidationError("alpha_gain must be > 0")
        if len(self.constraints) == 0:
            raise ValidationError("at least one path constraint is required")
        object.__setattr__(self, "constraints", tuple(self.constraints))

    def alpha(self, h: Array | float) -> Array:
        return self.alpha_gain * np.asarray(h, dtype=float)


# ---------------------------------------------------------------------------
# Closed-loop evaluations.
# ---------------------------------------------------------------------------


def _check_finite(value: Array, what: str) -> Array:
    if not np.all(np.isfinite(value)):
        bad = np.argwhere(~np.isfinite(np.asarray(value)))
        coord = tuple(int(i) for i in bad[0])
        raise EvaluationError(f"{what} is not finite at coordinate {coord}")
    return value


def closed_loop_rhs(model: SystemModel, policy: BackupPolicy, x: Array) -> Array:
    """Backup-loop derivative ``f(x) + g(x) pi(x)``."""
    x = _check_finite(np.asarray(x, dtype=float), "state")
    u = policy.pi_eval(x)
    out = model.f_eval(x) + np.matmul(model.g_eval(x), u[..., None])[..., 0]
    return _check_finite(out, "closed-loop derivative")


def closed_loop_jacobian(model: SystemModel, policy: BackupPolicy, x: Array) -> Array:
    """State Jacobian of the backup loop:
    ``df/dx + sum_j pi_j dg_j/dx + g dpi/dx``."""
    x = _check_finite(np.asarray(x, dtype=float), "state")
    u = policy.pi_eval(x)
    jac = model.df_dx(x)
    if model.dg_dx is not None:
        jac = jac + np.einsum("...imk,...m->...ik", model.dg_dx(x), u)
    jac = jac + np.matmul(model.g_eval(x), policy.dpi_dx(x))
    return _check_finite(jac, "closed-loop Jacobian")


def di_closed_form_h(x: Array, c_limit: float, u_max: float) -> Array:
    """Stopping-distance barrier for the double integrator:
    ``c_limit - s - 1{v>0} v^2 / (2 u_max)``.

    Serves as the independent oracle for the implicitly defined set.
    """
    if u_max <= 0.0:
        raise ValidationError("u_max must be > 0")
    x = np.asarray(x, dtype=float)
    s, v = x[..., 0], x[..., 1]
    return c_limit - s - (v > 0.0) * v * v / (2.0 * u_max)


# ---------------------------------------------------------------------------
# Parameter plumbing.
# ---------------------------------------------------------------------------


def _take(params: dict, *keys: str, default):
    """Pop a parameter under any of its aliases."""
    found = [k for k in keys if k in params]
    if len(found) > 1:
        raise ValidationError(f"parameter given under multiple aliases: {found}")
    if found:
        return params.pop(found[0])
    return default


def _reject_unknown(params: dict, name: str):
    if params:
        raise ValidationError(f"unknown parameters for benchmark {name!r}: "
                              f"{sorted(params)}")


def _mode_eps(params: dict, default_eps: float) -> float:
    mode = _take(params, "mode", default="smooth")
    if mode not in ("smooth", "hard"):
        raise ValidationError(f"mode must be 'smooth' or 'hard', got {mode!r}")
    eps = float(_take(params, "smoothing_eps", "eps", default=default_eps))
    if eps < 0.0:
        raise ValidationError("smoothing_eps must be >= 0")
    return 0.0 if mode == "hard" else eps


# ---------------------------------------------------------------------------
# toy1d: xdot = u, backup u = sat(-k x).
# ---------------------------------------------------------------------------


def _build_toy1d(params: dict):
    u_max = float(_take(params, "u_max", default=5.0))
    gain = float(_take(params, "gain_k", "k", default=1.0))
    c_level = float(_take(params, "c_level", default=4.0))
    s_level = float(_take(params, "s_level", default=1.0))
    alpha = float(_take(params, "alpha_gain_per_s", "alpha", default=1.0))
    eps = _mode_eps(params, 0.05 * u_max)
    _reject_unknown(params, "toy1d")
    if u_max <= 0.0 or gain <= 0.0:
        raise ValidationError("toy1d needs u_max > 0 and gain_k > 0")

    def f(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1] + (1, 1))

    def df(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (1, 1))

    def pi(x):
        x = np.asarray(x, dtype=float)
        return smooth_saturate(-gain * x[..., 0], -u_max, u_max, eps)[..., None]

    def dpi(x):
        x = np.asarray(x, dtype=float)
        d = smooth_saturate_deriv(-gain * x[..., 0], -u_max, u_max, eps)
        return (-gain * d)[..., None, None]

    model = SystemModel(1, 1, f, g, df, None,
                        np.array([-u_max]), np.array([u_max]),
                        state_names=("x",), input_names=("u",))
    policy = BackupPolicy(pi, dpi, eps)

    spec = SafetySpec(
        constraints=(ScalarConstraint(
            lambda x: c_level - np.asarray(x, dtype=float)[..., 0] ** 2,
            lambda x: -2.0 * np.asarray(x, dtype=float)[..., :1],
            name="level"),),
        terminal=ScalarConstraint(
            lambda x: s_level - np.asarray(x, dtype=float)[..., 0] ** 2,
            lambda x: -2.0 * np.asarray(x, dtype=float)[..., :1],
            name="terminal_level"),
        alpha_gain=alpha)
    return model, policy, spec


# ---------------------------------------------------------------------------
# double_integrator: sdot = v, vdot = u, backup brakes while moving forward.
# ---------------------------------------------------------------------------


def _build_double_integrator(params: dict):
    c_limit = float(_take(params, "c_limit_m", "c_limit", "C", default=10.0))
    u_max = float(_take(params, "u_max_mps2", "u_max", default=1.0))
    v_scale = float(_take(params, "v_scale_mps", "v_max", default=5.0))
    alpha = float(_take(params, "alpha_gain_per_s", "alpha", default=1.0))
    eps = _mode_eps(params, 0.05 * v_scale)
    _reject_unknown(params, "double_integrator")
    if u_max <= 0.0 or v_scale <= 0.0:
        raise ValidationError("double_integrator needs u_max > 0, v_scale > 0")

    g_one = np.array([[0.0], [1.0]])
    g_one.flags.writeable = False
    df_one = np.array([[0.0, 1.0], [0.0, 0.0]])
    df_one.flags.writeable = False

    def f(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.array([x[1], 0.0])
        out = np.zeros_like(x)
        out[..., 0] = x[..., 1]
        return out

    def g(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return g_one
        out = np.zeros(x.shape[:-1] + (2, 1))
        out[..., 1, 0] = 1.0
        return out

    def df(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return df_one
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 1] = 1.0
        return out

    def pi(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.array([-u_max * smooth_positive_indicator(x[1], eps)])
        return (-u_max * smooth_positive_indicator(x[..., 1], eps))[..., None]

    def dpi(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            d = smooth_positive_indicator_deriv(x[1], eps)
            return np.array([[0.0, -u_max * d]])
        d = smooth_positive_indicator_deriv(x[..., 1], eps)
        out = np.zeros(x.shape[:-1] + (1, 2))
        out[..., 0, 1] = -u_max * d
        return out

    model = SystemModel(2, 1, f, g, df, None,
                        np.array([-u_max]), np.array([u_max]),
                        state_names=("s", "v"), input_names=("u",))
    policy = BackupPolicy(pi, dpi, eps)

    spec = SafetySpec(
        constraints=(ScalarConstraint(
            lambda x: c_limit - np.asarray(x, dtype=float)[..., 0],
            lambda x: np.broadcast_to(
                np.array([-1.0, 0.0]),
                np.asarray(x, dtype=float).shape).copy(),
            name="position_limit"),),
        terminal=ScalarConstraint(
            lambda x: -np.asarray(x, dtype=float)[..., 1],
            lambda x: np.broadcast_to(
                np.array([0.0, -1.0]),
                np.asarray(x, dtype=float).shape).copy(),
            name="at_rest"),
        alpha_gain=alpha)
    return model, policy, spec


# ---------------------------------------------------------------------------
# dubins: lane keeping, states (Y, v, psi), inputs (a, r).
# ---------------------------------------------------------------------------

# Steering gain of the cruise-holding profile: r = k_y . [Y; psi] with
# k_y = -(0.1, sqrt(26)/5), the infinite-horizon quadratic-regulator gain of
# the lateral subsystem linearized at 5 m/s (weights diag(0.25, 1), effort 25).
_DUBINS_KY_CONSERVATIVE = (-0.1, -1.0198039027185569)
_DUBINS_KY_AGGRESSIVE = (0.0, -3.0)
_DUBINS_P_AGGRESSIVE = ((0.2, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


def _lyapunov_3x3(a_cl: Array) -> Array:
    """Solve A^T P + P A = -I for the 3x3 closed-loop linearization."""
    n = a_cl.shape[0]
    lhs = np.kron(np.eye(n), a_cl.T) + np.kron(a_cl.T, np.eye(n))
    p = np.linalg.solve(lhs, -np.eye(n).flatten()).reshape(n, n)
    return 0.5 * (p + p.T)


def _build_dubins(params: dict):
    y_max = float(_take(params, "y_max_m", "y_max", default=1.8))
    psi_max = float(_take(params, "psi_max_rad", "psi_max", default=np.pi / 3))
    a_max = float(_take(params, "a_max_mps2", "a_max", default=3.0))
    r_max = float(_take(params, "r_max_radps", "r_max", default=0.5))
    k_v = float(_take(params, "k_v_per_s", "k_v", default=1.0))
    profile = _take(params, "profile", default="conservative")
    if profile not in ("conservative", "aggressive"):
        raise ValidationError(f"unknown dubins profile {profile!r}")
    aggressive = profile == "aggressive"
    v_des = float(_take(params, "v_des_mps", "v_des",
                        default=0.0 if aggressive else 5.0))
    k_y = _take(params, "k_y", default=_DUBINS_KY_AGGRESSIVE if aggressive
                else _DUBINS_KY_CONSERVATIVE)
    k_y = np.asarray(k_y, dtype=float)
    if k_y.shape != (2,):
        raise ValidationError("k_y must be a 2-vector acting on [Y; psi]")
    terminal_p = _take(params, "terminal_p", default=None)
    terminal_c = _take(params, "terminal_c",
                       default=0.5 if aggressive else 1.0)
    alpha = float(_take(params, "alpha_gain_per_s", "alpha", default=1.0))
    eps_frac = float(_take(params, "eps_frac", default=0.05))
    mode = _take(params, "mode", default="smooth")
    if mode not in ("smooth", "hard"):
        raise ValidationError(f"mode must be 'smooth' or 'hard', got {mode!r}")
    _reject_unknown(params, "dubins")
    if min(y_max, psi_max, a_max, r_max, k_v) <= 0.0:
        raise ValidationError("dubins box parameters must be > 0")

    eps_a = 0.0 if mode == "hard" else eps_frac * a_max
    eps_r = 0.0 if mode == "hard" else eps_frac * r_max

    if terminal_p is None:
        if aggressive:
            # v_des = 0 makes the lateral linearization marginal in Y; use a
            # fixed diagonal form, validated in the test suite.
            p_mat = np.asarray(_DUBINS_P_AGGRESSIVE, dtype=float)
        else:
            a_cl = np.array([[0.0, 0.0, v_des],
                             [0.0, -k_v, 0.0],
                             [k_y[0], 0.0, k_y[1]]])
            p_mat = _lyapunov_3x3(a_cl)
    else:
        p_mat = np.asarray(terminal_p, dtype=float)
    if p_mat.shape != (3, 3) or not np.allclose(p_mat, p_mat.T):
        raise ValidationError("terminal_p must be a symmetric 3x3 matrix")
    if np.any(np.linalg.eigvalsh(p_mat) <= 0.0):
        raise ValidationError("terminal_p must be positive definite")
    c_level = float(terminal_c)
    if c_level <= 0.0:
        raise ValidationError("terminal_c must be > 0")

    g_one = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    g_one.flags.writeable = False
    ky0, ky1 = float(k_y[0]), float(k_y[1])

    def f(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.array([x[1] * math.sin(x[2]), 0.0, 0.0])
        out = np.zeros_like(x)
        out[..., 0] = x[..., 1] * np.sin(x[..., 2])
        return out

    def g(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return g_one
        out = np.zeros(x.shape[:-1] + (3, 2))
        out[..., 1, 0] = 1.0
        out[..., 2, 1] = 1.0
        return out

    def df(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.array([[0.0, math.sin(x[2]), x[1] * math.cos(x[2])],
                             [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        out = np.zeros(x.shape[:-1] + (3, 3))
        out[..., 0, 1] = np.sin(x[..., 2])
        out[..., 0, 2] = x[..., 1] * np.cos(x[..., 2])
        return out

    def pi(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            a_cmd = smooth_saturate(k_v * (v_des - x[1]), -a_max, a_max, eps_a)
            r_cmd = smooth_saturate(ky0 * x[0] + ky1 * x[2], -r_max, r_max, eps_r)
            return np.array([a_cmd, r_cmd])
        a_cmd = smooth_saturate(k_v * (v_des - x[..., 1]), -a_max, a_max, eps_a)
        r_raw = k_y[0] * x[..., 0] + k_y[1] * x[..., 2]
        r_cmd = smooth_saturate(r_raw, -r_max, r_max, eps_r)
        return np.stack([a_cmd, r_cmd], axis=-1)

    def dpi(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            da = smooth_saturate_deriv(k_v * (v_des - x[1]), -a_max, a_max, eps_a)
            dr = smooth_saturate_deriv(ky0 * x[0] + ky1 * x[2],
                                       -r_max, r_max, eps_r)
            return np.array([[0.0, -k_v * da, 0.0],
                             [ky0 * dr, 0.0, ky1 * dr]])
        out = np.zeros(x.shape[:-1] + (2, 3))
        da = smooth_saturate_deriv(k_v * (v_des - x[..., 1]), -a_max, a_max, eps_a)
        out[..., 0, 1] = -k_v * da
        r_raw = k_y[0] * x[..., 0] + k_y[1] * x[..., 2]
        dr = smooth_saturate_deriv(r_raw, -r_max, r_max, eps_r)
        out[..., 1, 0] = k_y[0] * dr
        out[..., 1, 2] = k_y[1] * dr
        return out

    model = SystemModel(3, 2, f, g, df, None,
                        np.array([-a_max, -r_max]), np.array([a_max, r_max]),
                        state_names=("Y", "v", "psi"), input_names=("a", "r"))
    policy = BackupPolicy(pi, dpi, max(eps_a, eps_r))

    offset = np.array([0.0, v_des, 0.0])

    def h_terminal(x):
        xh = np.asarray(x, dtype=float) - offset
        return c_level - np.einsum("...i,ij,...j->...", xh, p_mat, xh)

    def grad_terminal(x):
        xh = np.asarray(x, dtype=float) - offset
        return -2.0 * np.einsum("ij,...j->...i", p_mat, xh)

    def bound(idx: int, limit: float, sign: float, name: str) -> ScalarConstraint:
        grad_vec = np.zeros(3)
        grad_vec[idx] = -sign

        def h(x, idx=idx, limit=limit, sign=sign):
            return limit - sign * np.asarray(x, dtype=float)[..., idx]

        def grad(x, grad_vec=grad_vec):
            return np.broadcast_to(grad_vec,
                                   np.asarray(x, dtype=float).shape).copy()

        return ScalarConstraint(h, grad, name=name)

    spec = SafetySpec(
        constraints=(bound(0, y_max, +1.0, "lane_left"),
                     bound(0, y_max, -1.0, "lane_right"),
                     bound(2, psi_max, +1.0, "heading_left"),
                     bound(2, psi_max, -1.0, "heading_right")),
        terminal=ScalarConstraint(h_terminal, grad_terminal, name="settle_ellipsoid"),
        alpha_gain=alpha)
    return model, policy, spec


# ---------------------------------------------------------------------------
# aeroplane: relative coordinates (dx, dy, dpsi), scalar turn-rate input.
# ---------------------------------------------------------------------------


def _build_aeroplane(params: dict):
    v_a = float(_take(params, "v_a_mps", "v_a", default=1.0))
    v_b = float(_take(params, "v_b_mps", "v_b", default=1.0))
    u_max = float(_take(params, "u_max_radps", "u_max", default=1.0))
    r_min = float(_take(params, "r_min_m", "R", "r_min", default=1.0))
    r_term = float(_take(params, "r_terminal_m", "r_terminal",
                         default=1.2 * r_min))
    alpha = float(_take(params, "alpha_gain_per_s", "alpha", default=1.0))
    # The turn-away policy slides along dy = 0 once the opponent falls
    # behind; the blend slope (2/eps) times |dx| sets the stiffness of the
    # variational equation, so the band is kept wide enough for the default
    # integration grid to resolve it.
    eps = _mode_eps(params, 0.25 * r_min)
    _reject_unknown(params, "aeroplane")
    if min(v_a, v_b, u_max, r_min) <= 0.0 or r_term <= r_min:
        raise ValidationError(
            "aeroplane needs positive speeds, u_max, r_min and r_terminal > r_min")

    dg_one = np.zeros((3, 1, 3))
    dg_one[0, 0, 1] = 1.0
    dg_one[1, 0, 0] = -1.0
    dg_one.flags.writeable = False

    def f(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.array([-v_a + v_b * math.cos(x[2]),
                             v_b * math.sin(x[2]), 0.0])
        out = np.empty_like(x)
        out[..., 0] = -v_a + v_b * np.cos(x[..., 2])
        out[..., 1] = v_b * np.sin(x[..., 2])
        out[..., 2] = 0.0
        return out

    def g(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.array([[x[1]], [-x[0]], [-1.0]])
        out = np.empty(x.shape[:-1] + (3, 1))
        out[..., 0, 0] = x[..., 1]
        out[..., 1, 0] = -x[..., 0]
        out[..., 2, 0] = -1.0
        return out

    def df(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.array([[0.0, 0.0, -v_b * math.sin(x[2])],
                             [0.0, 0.0, v_b * math.cos(x[2])],
                             [0.0, 0.0, 0.0]])
        out = np.zeros(x.shape[:-1] + (3, 3))
        out[..., 0, 2] = -v_b * np.sin(x[..., 2])
        out[..., 1, 2] = v_b * np.cos(x[..., 2])
        return out

    def dg(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return dg_one
        out = np.zeros(x.shape[:-1] + (3, 1, 3))
        out[..., 0, 0, 1] = 1.0
        out[..., 1, 0, 0] = -1.0
        return out

    def pi(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.array([-u_max * smooth_sign(x[1], eps)])
        return (-u_max * smooth_sign(x[..., 1], eps))[..., None]

    def dpi(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.array([[0.0, -u_max * smooth_sign_deriv(x[1], eps), 0.0]])
        out = np.zeros(x.shape[:-1] + (1, 3))
        out[..., 0, 1] = -u_max * smooth_sign_deriv(x[..., 1], eps)
        return out

    model = SystemModel(3, 1, f, g, df, dg,
                        np.array([-u_max]), np.array([u_max]),
                        state_names=("dx", "dy", "dpsi"), input_names=("u",))
    policy = BackupPolicy(pi, dpi, eps)

    def separation(x):
        x = np.asarray(x, dtype=float)
        return x[..., 0] ** 2 + x[..., 1] ** 2 - r_min ** 2

    def grad_separation(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 0] = 2.0 * x[..., 0]
        out[..., 1] = 2.0 * x[..., 1]
        return out

    def divergence(x):
        # Radial rate of the squared separation / 2; independent of u since
        # the input only rotates the relative frame.
        x = np.asarray(x, dtype=float)
        return (x[..., 0] * (-v_a + v_b * np.cos(x[..., 2]))
                + x[..., 1] * v_b * np.sin(x[..., 2]))

    def grad_divergence(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., 0] = -v_a + v_b * np.cos(x[..., 2])
        out[..., 1] = v_b * np.sin(x[..., 2])
        out[..., 2] = (-x[..., 0] * v_b * np.sin(x[..., 2])
                       + x[..., 1] * v_b * np.cos(x[..., 2]))
        return out

    def h_terminal(x):
        x = np.asarray(x, dtype=float)
        sep = x[..., 0] ** 2 + x[..., 1] ** 2 - r_term ** 2
        return np.minimum(sep, divergence(x))

    def grad_terminal(x):
        # Gradient of the active min branch; separation wins ties.
        x = np.asarray(x, dtype=float)
        sep = x[..., 0] ** 2 + x[..., 1] ** 2 - r_term ** 2
        use_sep = sep <= divergence(x)
        g_sep = np.zeros_like(x)
        g_sep[..., 0] = 2.0 * x[..., 0]
        g_sep[..., 1] = 2.0 * x[..., 1]
        return np.where(use_sep[..., None], g_sep, grad_divergence(x))

    spec = SafetySpec(
        constraints=(ScalarConstraint(separation, grad_separation,
                                      name="separation"),),
        terminal=ScalarConstraint(h_terminal, grad_terminal,
                                  name="separated_diverging"),
        alpha_gain=alpha)
    return model, policy, spec


# ---------------------------------------------------------------------------
# Registry.
# ---------------------------------------------------------------------------

_BUILDERS = {
    "toy1d": _build_toy1d,
    "double_integrator": _build_double_integrator,
    "dubins": _build_dubins,
    "aeroplane": _build_aeroplane,
}

BENCHMARK_NAMES = tuple(_BUILDERS)

# Default horizons, flow-grid sizes, and sampling boxes used by the
# simulation harness and the test suite.  The boxes bound the region of
# state space each benchmark is exercised on; they are not constraints.
BENCHMARK_DEFAULTS: Mapping[str, dict] = {
    "toy1d": dict(t_horizon_s=1.0, n_flow_steps=100,
                  sample_lower=(-2.0,), sample_upper=(2.0,)),
    "double_integrator": dict(t_horizon_s=10.0, n_flow_steps=100,
                              sample_lower=(-10.0, -5.0),
                              sample_upper=(12.0, 5.0)),
    "dubins": dict(t_horizon_s=8.0, n_flow_steps=100,
                   sample_lower=(-1.8, 2.0, -np.pi / 3),
                   sample_upper=(1.8, 8.0, np.pi / 3)),
    "aeroplane": dict(t_horizon_s=4.0, n_flow_steps=200,
                      sample_lower=(-6.0, -6.0, -np.pi),
                      sample_upper=(6.0, 6.0, np.pi)),
}


def make_benchmark(name: str, params: Mapping | None = None
                   ) -> tuple[SystemModel, BackupPolicy, SafetySpec]:
    """Build a named benchmark triple, applying documented defaults for any
    parameter not supplied.  Unknown names or parameters raise
    `ValidationError`."""
    if name not in _BUILDERS:
        raise ValidationError(
            f"unknown benchmark {name!r}; available: {sorted(_BUILDERS)}")
    return _BUILDERS[name](dict(params or {}))
