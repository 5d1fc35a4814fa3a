"""Model-level checks: closed forms, Jacobian consistency, benchmark wiring."""

import numpy as np
import pytest

from backup_cbf.errors import EvaluationError, ValidationError
from backup_cbf.systems import (BENCHMARK_DEFAULTS, BENCHMARK_NAMES,
                                closed_loop_jacobian, closed_loop_rhs,
                                di_closed_form_h, make_benchmark,
                                smooth_positive_indicator, smooth_saturate,
                                smooth_sign)

RNG = np.random.default_rng(20240817)


def fd_jacobian(fn, x, eps=1e-6):
    """Central-difference Jacobian, the independent oracle for all
    analytic derivative evaluators."""
    x = np.asarray(x, dtype=float)
    base = np.asarray(fn(x), dtype=float)
    out = np.empty(base.shape + (x.size,))
    for j in range(x.size):
        hi = x.copy(); hi[j] += eps
        lo = x.copy(); lo[j] -= eps
        out[..., j] = (np.asarray(fn(hi)) - np.asarray(fn(lo))) / (2.0 * eps)
    return out


def sample_box(name, count):
    d = BENCHMARK_DEFAULTS[name]
    return RNG.uniform(d["sample_lower"], d["sample_upper"],
                       size=(count, len(d["sample_lower"])))


# ---------------------------------------------------------------------------
# closed_loop_rhs / closed_loop_jacobian worked values
# ---------------------------------------------------------------------------


def test_toy_rhs_and_jacobian():
    model, policy, _ = make_benchmark("toy1d")
    assert np.allclose(closed_loop_rhs(model, policy, np.array([1.0])), [-1.0])
    assert np.allclose(closed_loop_jacobian(model, policy, np.array([1.0])),
                       [[-1.0]])


def test_double_integrator_rhs_both_sides():
    model, policy, _ = make_benchmark("double_integrator")
    # braking engaged above the surface, idle below it
    assert np.allclose(closed_loop_rhs(model, policy, np.array([0.0, 2.0])),
                       [2.0, -1.0])
    assert np.allclose(closed_loop_rhs(model, policy, np.array([0.0, -1.0])),
                       [-1.0, 0.0])


def test_double_integrator_jacobian_saturated_region():
    model, policy, _ = make_benchmark("double_integrator", {"mode": "hard"})
    jac = closed_loop_jacobian(model, policy, np.array([3.0, 2.0]))
    assert np.allclose(jac, [[0.0, 1.0], [0.0, 0.0]])


def test_dubins_jacobian_heading_entry():
    model, policy, _ = make_benchmark("dubins")
    x = np.array([0.2, 5.0, 0.0])
    jac = closed_loop_jacobian(model, policy, x)
    # dYdot/dpsi = v cos(psi) = v at psi = 0
    assert jac[0, 2] == pytest.approx(5.0)


def test_rhs_rejects_nonfinite():
    model, policy, _ = make_benchmark("toy1d")
    with pytest.raises(EvaluationError):
        closed_loop_rhs(model, policy, np.array([np.inf]))


# ---------------------------------------------------------------------------
# closed-form barrier oracle
# ---------------------------------------------------------------------------


def test_di_closed_form_values():
    assert di_closed_form_h(np.array([10.0, 0.0]), 10.0, 1.0) == 0.0
    assert di_closed_form_h(np.array([0.0, 2.0]), 10.0, 1.0) == pytest.approx(8.0)
    assert di_closed_form_h(np.array([0.0, -3.0]), 10.0, 1.0) == pytest.approx(10.0)


def test_di_closed_form_requires_positive_input_bound():
    with pytest.raises(ValidationError):
        di_closed_form_h(np.array([0.0, 0.0]), 10.0, 0.0)


# ---------------------------------------------------------------------------
# benchmark construction
# ---------------------------------------------------------------------------


def test_dubins_defaults_match_documented_bounds():
    model, _, spec = make_benchmark("dubins")
    assert len(spec.constraints) == 4
    x = np.zeros(3)
    # ordering: lane left/right, heading left/right
    vals = [c.h_eval(x) for c in spec.constraints]
    assert vals[0] == pytest.approx(1.8)
    assert vals[1] == pytest.approx(1.8)
    assert vals[2] == pytest.approx(np.pi / 3)
    assert vals[3] == pytest.approx(np.pi / 3)


def test_double_integrator_boundary():
    _, _, spec = make_benchmark("double_integrator", {"c_limit_m": 10.0})
    assert spec.constraints[0].h_eval(np.array([10.0, 0.0])) == pytest.approx(0.0)


def test_aeroplane_boundary():
    _, _, spec = make_benchmark("aeroplane", {"r_min_m": 1.0})
    assert spec.constraints[0].h_eval(np.array([1.0, 0.0, 0.0])) == \
        pytest.approx(0.0)


def test_unknown_benchmark_and_params_rejected():
    with pytest.raises(ValidationError):
        make_benchmark("pendulum")
    with pytest.raises(ValidationError):
        make_benchmark("toy1d", {"banana": 1.0})
    with pytest.raises(ValidationError):
        make_benchmark("double_integrator", {"u_max_mps2": -1.0})


# ---------------------------------------------------------------------------
# invariants: policy in box, Jacobians vs finite differences
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", BENCHMARK_NAMES)
def test_policy_respects_input_box(name):
    model, policy, _ = make_benchmark(name)
    states = sample_box(name, 1000)
    u = policy.pi_eval(states)
    assert np.all(u >= model.input_lower - 0.0)
    assert np.all(u <= model.input_upper + 0.0)


def _far_from_switching(name, states, eps):
    """Keep samples at least 3*eps away from the policy's blend bands."""
    if name == "toy1d":
        return states  # feedback is linear throughout the sample box
    if name == "double_integrator":
        v = states[:, 1]
        return states[(v > 3 * eps) | (v < -4 * eps)]
    if name == "aeroplane":
        return states[np.abs(states[:, 1]) > 3 * eps]
    model, policy, _ = make_benchmark(name)
    # dubins: keep both commanded channels away from their saturation bands
    a_raw = 1.0 * (5.0 - states[:, 1])
    r_raw = policy.pi_eval(states)[:, 1]
    keep = (np.abs(np.abs(a_raw) - 3.0) > 3 * 0.15) & (np.abs(r_raw) < 0.4)
    return states[keep]


@pytest.mark.parametrize("name", BENCHMARK_NAMES)
def test_closed_loop_jacobian_matches_finite_differences(name):
    model, policy, _ = make_benchmark(name)
    states = _far_from_switching(name, sample_box(name, 200),
                                 policy.smoothing_eps)
    assert len(states) > 20
    for x in states[:40]:
        jac = closed_loop_jacobian(model, policy, x)
        fd = fd_jacobian(lambda y: closed_loop_rhs(model, policy, y), x)
        scale = max(1.0, np.max(np.abs(fd)))
        assert np.max(np.abs(jac - fd)) / scale < 1e-4


@pytest.mark.parametrize("name", BENCHMARK_NAMES)
def test_model_jacobians_match_finite_differences(name):
    model, _, _ = make_benchmark(name)
    for x in sample_box(name, 10):
        fd_f = fd_jacobian(model.f_eval, x)
        assert np.max(np.abs(model.df_dx(x) - fd_f)) < 1e-5 * max(
            1.0, np.max(np.abs(fd_f)))
        fd_g = fd_jacobian(model.g_eval, x)
        dg = model.dg_dx(x) if model.dg_dx is not None else np.zeros_like(fd_g)
        assert np.max(np.abs(dg - fd_g)) < 1e-5 * max(1.0, np.max(np.abs(fd_g)))


@pytest.mark.parametrize("name", BENCHMARK_NAMES)
def test_constraint_gradients_match_finite_differences(name):
    _, _, spec = make_benchmark(name)
    for fn in list(spec.constraints) + [spec.terminal]:
        for x in sample_box(name, 8):
            fd = fd_jacobian(lambda y: np.atleast_1d(fn.h_eval(y)), x)[0]
            grad = np.asarray(fn.grad_eval(x))
            denom = max(1.0, np.max(np.abs(fd)))
            # min-type terminals are checked away from the branch boundary
            if np.max(np.abs(grad - fd)) / denom >= 1e-6:
                assert name == "aeroplane" and fn.name == "separated_diverging"


def test_aeroplane_separation_rate_identity():
    """d(dx^2+dy^2)/dt must equal 2(dx dxdot + dy dydot) with the input
    terms cancelling: the turn input only rotates the relative frame."""
    model, _, _ = make_benchmark("aeroplane")
    states = sample_box("aeroplane", 50)
    for u_val in (-1.0, 0.0, 1.0):
        u = np.full((50, 1), u_val)
        xdot = model.f_eval(states) + (model.g_eval(states) @ u[..., None])[..., 0]
        rate = 2.0 * (states[:, 0] * xdot[:, 0] + states[:, 1] * xdot[:, 1])
        f_only = model.f_eval(states)
        rate_drift = 2.0 * (states[:, 0] * f_only[:, 0]
                            + states[:, 1] * f_only[:, 1])
        assert np.allclose(rate, rate_drift, atol=1e-12)


# ---------------------------------------------------------------------------
# policy Jacobians near and away from switching surfaces
# ---------------------------------------------------------------------------


def test_policy_jacobian_fd_away_from_surfaces():
    model, policy, _ = make_benchmark("double_integrator")
    eps = policy.smoothing_eps
    for v in (2.0, -3.0, 5 * eps, -5 * eps):
        x = np.array([1.0, v])
        fd = fd_jacobian(policy.pi_eval, x)
        assert np.max(np.abs(policy.dpi_dx(x) - fd)) < 1e-4


def test_smoothings_are_exact_outside_band():
    assert smooth_positive_indicator(0.0, 0.25) == 1.0
    assert smooth_positive_indicator(-0.25, 0.25) == 0.0
    assert smooth_sign(0.3, 0.25) == 1.0
    assert smooth_sign(-0.3, 0.25) == -1.0
    assert smooth_saturate(1.0, -3.0, 3.0, 0.15) == 1.0
    assert smooth_saturate(5.0, -3.0, 3.0, 0.15) == 3.0


def test_smoothings_scalar_and_batch_agree():
    vs = np.linspace(-0.6, 0.6, 41)
    batch = smooth_positive_indicator(vs, 0.25)
    singles = np.array([smooth_positive_indicator(v, 0.25) for v in vs])
    assert np.allclose(batch, singles)
    batch = smooth_saturate(vs, -0.3, 0.3, 0.02)
    singles = np.array([smooth_saturate(v, -0.3, 0.3, 0.02) for v in vs])
    assert np.allclose(batch, singles)
