"""Flow integration: closed-form anchors, order of accuracy, sensitivities."""

import math

import numpy as np
import pytest

from backup_cbf.errors import FlowDivergenceError, ValidationError
from backup_cbf.flow import (integrate_flow, integrate_flow_batch,
                             sensitivity_fd_check)
from backup_cbf.systems import (BackupPolicy, SafetySpec, ScalarConstraint,
                                SystemModel, make_benchmark)


def linear_system(a_mat):
    """xdot = A x realized as drift-only plant with an idle backup."""
    a_mat = np.asarray(a_mat, dtype=float)
    n = a_mat.shape[0]

    def f(x):
        x = np.asarray(x, dtype=float)
        return x @ a_mat.T

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (n, 1))

    def df(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(a_mat, x.shape[:-1] + (n, n)).copy()

    model = SystemModel(n, 1, f, g, df, None,
                        np.array([-1.0]), np.array([1.0]))
    policy = BackupPolicy(lambda x: np.zeros(np.asarray(x).shape[:-1] + (1,)),
                          lambda x: np.zeros(np.asarray(x).shape[:-1] + (1, n)),
                          smoothing_eps=0.01)
    return model, policy


def expm_series(a_mat, terms=30):
    """Truncated exponential series, the independent matrix-flow oracle."""
    out = np.eye(a_mat.shape[0])
    term = np.eye(a_mat.shape[0])
    for k in range(1, terms):
        term = term @ a_mat / k
        out = out + term
    return out


def test_small_horizon_is_identity_like():
    model, policy, _ = make_benchmark("dubins")
    x0 = np.array([0.3, 5.0, 0.1])
    traj = integrate_flow(model, policy, x0, 1e-9, 1)
    assert np.allclose(traj.states[-1], x0, atol=1e-7)
    assert np.allclose(traj.sensitivities[-1], np.eye(3), atol=1e-7)


def test_toy_flow_matches_exponential():
    model, policy, _ = make_benchmark("toy1d")
    traj = integrate_flow(model, policy, np.array([1.0]), 1.0, 100)
    assert traj.states[0] == pytest.approx(1.0)
    assert np.allclose(traj.sensitivities[0], np.eye(1))
    assert traj.states[-1][0] == pytest.approx(math.exp(-1.0), abs=1e-9)
    assert traj.sensitivities[-1][0, 0] == pytest.approx(math.exp(-1.0), abs=1e-9)


def test_double_integrator_hard_braking_arc():
    model, policy, _ = make_benchmark("double_integrator", {"mode": "hard"})
    traj = integrate_flow(model, policy, np.array([0.0, 2.0]), 1.0, 10)
    # no switching crossed before t=1, so the arc and its sensitivity are exact
    assert np.allclose(traj.states[-1], [1.5, 1.0], atol=1e-12)
    assert np.allclose(traj.sensitivities[-1], [[1.0, 1.0], [0.0, 1.0]],
                       atol=1e-12)


def test_linear_rotation_sensitivity_matches_series():
    model, policy = linear_system([[0.0, 1.0], [-1.0, 0.0]])
    traj = integrate_flow(model, policy, np.array([1.0, 0.0]), 1.0, 100)
    q_ref = expm_series(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    assert np.max(np.abs(traj.sensitivities[-1] - q_ref)) < 1e-9
    err = sensitivity_fd_check(model, policy, np.array([1.0, 0.0]),
                               1.0, 100, 1e-6)
    assert err < 1e-6


def test_sensitivity_fd_toy():
    model, policy, _ = make_benchmark("toy1d")
    err = sensitivity_fd_check(model, policy, np.array([1.0]), 1.0, 100, 1e-5)
    assert err < 1e-6


def test_sensitivity_fd_double_integrator_smooth():
    model, policy, _ = make_benchmark("double_integrator")
    err = sensitivity_fd_check(model, policy, np.array([0.0, 2.0]),
                               10.0, 100, 1e-5)
    assert err < 1e-3


@pytest.mark.parametrize("which", ["toy", "rotation"])
def test_rk4_order_convergence(which):
    """Halving the step should cut the endpoint error ~16x on smooth
    closed-form systems."""
    if which == "toy":
        model, policy, _ = make_benchmark("toy1d")
        x0, exact = np.array([1.0]), np.array([math.exp(-1.0)])
    else:
        model, policy = linear_system([[0.0, 1.0], [-1.0, 0.0]])
        x0 = np.array([1.0, 0.0])
        exact = expm_series(np.array([[0.0, 1.0], [-1.0, 0.0]])) @ x0
    errs = []
    for steps in (8, 16, 32):
        traj = integrate_flow(model, policy, x0, 1.0, steps)
        errs.append(np.max(np.abs(traj.states[-1] - exact)))
    assert errs[0] / errs[1] > 15.0
    assert errs[1] / errs[2] > 15.0


def test_semigroup_and_cocycle():
    """Restarting the integration midway reproduces both the flow and the
    sensitivity by composition."""
    model, policy, _ = make_benchmark("dubins")
    x0 = np.array([0.8, 4.0, -0.2])
    full = integrate_flow(model, policy, x0, 4.0, 200)
    half = 100
    mid = full.states[half]
    rest = integrate_flow(model, policy, mid, 2.0, 100)
    assert np.max(np.abs(rest.states[-1] - full.states[-1])) < 1e-8
    q_comp = rest.sensitivities[-1] @ full.sensitivities[half]
    assert np.max(np.abs(q_comp - full.sensitivities[-1])) < 1e-6


def test_flow_restart_invariance():
    """The flow endpoint at a fixed absolute time does not change when the
    state advances under the backup policy itself."""
    model, policy, _ = make_benchmark("double_integrator")
    x0 = np.array([0.0, 2.0])
    tau = 5.0
    endpoint = integrate_flow(model, policy, x0, tau, 250).states[-1]
    for t_restart in (1.0, 2.5, 4.0):
        steps = int(round(t_restart / 0.02))
        x_t = integrate_flow(model, policy, x0, t_restart, steps).states[-1]
        rest_steps = int(round((tau - t_restart) / 0.02))
        again = integrate_flow(model, policy, x_t, tau - t_restart,
                               rest_steps).states[-1]
        assert np.max(np.abs(again - endpoint)) < 1e-7


def test_batch_matches_single():
    model, policy, _ = make_benchmark("aeroplane")
    x0s = np.array([[4.0, 0.3, np.pi], [-2.0, 1.0, 0.5], [1.0, -3.0, -1.0]])
    times, ends, q_end = integrate_flow_batch(model, policy, x0s, 2.0, 50)
    for i, x0 in enumerate(x0s):
        traj = integrate_flow(model, policy, x0, 2.0, 50)
        assert np.allclose(ends[i], traj.states[-1], atol=1e-12)
        assert np.allclose(q_end[i], traj.sensitivities[-1], atol=1e-12)


def test_divergence_reports_step():
    model, policy = linear_system([[200.0]])   # violently unstable for dt=1
    with pytest.raises(FlowDivergenceError) as err:
        integrate_flow(model, policy, np.array([1.0]), 50.0, 50)
    assert err.value.step >= 1


def test_argument_validation():
    model, policy, _ = make_benchmark("toy1d")
    with pytest.raises(ValidationError):
        integrate_flow(model, policy, np.array([1.0]), -1.0, 10)
    with pytest.raises(ValidationError):
        integrate_flow(model, policy, np.array([1.0]), 1.0, 0)
    with pytest.raises(ValidationError):
        integrate_flow(model, policy, np.array([np.nan]), 1.0, 10)
    with pytest.raises(ValidationError):
        sensitivity_fd_check(model, policy, np.array([1.0]), 1.0, 10, 0.0)
