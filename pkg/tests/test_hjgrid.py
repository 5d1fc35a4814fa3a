"""Grid baseline: closed-form Hamiltonian, value iteration, comparisons, IO."""

import numpy as np
import pytest

from backup_cbf.barrier import eval_h_batch
from backup_cbf.errors import GeometryError, ValidationError
from backup_cbf.hjgrid import (GridGeometry, LevelGrid, compare_sets,
                               constraint_grid, dilate_set, grid_from_json_dict,
                               grid_to_json_dict, hamiltonian, read_grid,
                               read_grid_csv, solve_invariant, sweep_backup_h,
                               write_grid_csv, write_grid_json)
from backup_cbf.systems import (BackupPolicy, SafetySpec, ScalarConstraint,
                                SystemModel, di_closed_form_h, make_benchmark)


def single_integrator_2d():
    """xdot = u (u in [-1,1]), ydot = 0: a 1-D plant embedded in two axes so
    it fits the grid contract."""

    def f(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 1))
        out[..., 0, 0] = 1.0
        return out

    def df(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (2, 2))

    model = SystemModel(2, 1, f, g, df, None, np.array([-1.0]), np.array([1.0]))

    def h(x):
        return 1.0 - np.abs(np.asarray(x, dtype=float)[..., 0])

    def grad(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 0] = -np.sign(x[..., 0])
        return out

    spec = SafetySpec(constraints=(ScalarConstraint(h, grad, "band"),),
                      terminal=ScalarConstraint(h, grad, "band"),
                      alpha_gain=1.0)
    return model, spec


# ---------------------------------------------------------------------------
# Hamiltonian
# ---------------------------------------------------------------------------


def test_hamiltonian_double_integrator():
    model, _, _ = make_benchmark("double_integrator")
    x = np.array([0.0, 3.0])
    assert hamiltonian(model, x, np.array([0.0, 1.0])) == pytest.approx(1.0)
    assert hamiltonian(model, x, np.array([1.0, 0.0])) == pytest.approx(3.0)
    assert hamiltonian(model, x, np.zeros(2)) == pytest.approx(0.0)


def test_hamiltonian_is_box_maximum():
    """Closed form must equal a dense maximization over the input box."""
    model, _, _ = make_benchmark("dubins")
    rng = np.random.default_rng(5)
    us = np.stack(np.meshgrid(np.linspace(-3, 3, 41), np.linspace(-0.5, 0.5, 41),
                              indexing="ij"), axis=-1).reshape(-1, 2)
    for _ in range(20):
        x = rng.uniform([-1.8, 0.0, -1.0], [1.8, 8.0, 1.0])
        p = rng.normal(size=3)
        vals = (model.f_eval(x) @ p) + (model.g_eval(x) @ us.T).T @ p
        assert hamiltonian(model, x, p) == pytest.approx(vals.max(), abs=1e-9)


# ---------------------------------------------------------------------------
# value iteration
# ---------------------------------------------------------------------------


def test_invariant_set_single_integrator_band():
    model, spec = single_integrator_2d()
    geom = GridGeometry((-2.0, -1.0), (2.0, 1.0), (81, 5), (False, False))
    out = solve_invariant(constraint_grid(geom, spec), model)
    xs = geom.axis_coordinates(0)
    members = out.values[:, 2] >= 0.0
    cell = xs[1] - xs[0]
    assert abs(xs[members].min() - (-1.0)) <= cell
    assert abs(xs[members].max() - 1.0) <= cell
    # monotone nonincreasing against the initial field
    assert np.all(out.values <= constraint_grid(geom, spec).values + 1e-12)


def test_invariant_set_double_integrator_matches_closed_form():
    model, _, spec = make_benchmark("double_integrator")
    geom = GridGeometry((-10.0, -5.0), (12.0, 5.0), (101, 101), (False, False))
    out = solve_invariant(constraint_grid(geom, spec), model, tol=1e-4,
                          max_steps=20000)
    oracle = di_closed_form_h(geom.nodes(), 10.0, 1.0).reshape(geom.counts)
    got = out.membership()
    oracle_grid = LevelGrid(geom, oracle.ravel())
    inflated = dilate_set(oracle_grid)
    deflated = ~dilate_set(LevelGrid(geom, -oracle.ravel()))
    ok = (got <= inflated) & (deflated <= got)
    # one-cell agreement away from the domain boundary
    interior = np.zeros(geom.counts, dtype=bool)
    interior[1:-1, 1:-1] = True
    assert np.all(ok[interior])


def test_refinement_volume_stability():
    model, _, spec = make_benchmark("double_integrator")
    vols = []
    for n in (51, 101):
        geom = GridGeometry((-10.0, -5.0), (12.0, 5.0), (n, n), (False, False))
        out = solve_invariant(constraint_grid(geom, spec), model, tol=1e-4,
                              max_steps=20000)
        vols.append(out.membership().mean())
    assert abs(vols[1] - vols[0]) / vols[1] < 0.05


def test_cfl_validation():
    model, spec = single_integrator_2d()
    geom = GridGeometry((-2.0, -1.0), (2.0, 1.0), (41, 5), (False, False))
    grid0 = constraint_grid(geom, spec)
    with pytest.raises(ValidationError):
        solve_invariant(grid0, model, dt=10.0)
    with pytest.raises(ValidationError):
        solve_invariant(grid0, model, dt=-0.1)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def test_sweep_matches_pointwise_evaluation():
    model, policy, spec = make_benchmark("double_integrator")
    geom = GridGeometry((-10.0, -5.0), (12.0, 5.0), (11, 9), (False, False))
    grid = sweep_backup_h(model, policy, spec, geom, 10.0, 100)
    pts = geom.nodes()
    direct = eval_h_batch(model, policy, spec, pts, 10.0, 100).h
    assert np.allclose(grid.values.ravel(), direct, atol=1e-12)


def test_sweep_zero_horizon_returns_constraint_field():
    model, policy, spec = make_benchmark("double_integrator")
    # terminal tied to the path constraint: the zero-horizon field is then
    # exactly min_k hC_k
    spec0 = SafetySpec(constraints=spec.constraints,
                       terminal=spec.constraints[0], alpha_gain=1.0)
    geom = GridGeometry((-10.0, -5.0), (12.0, 5.0), (11, 9), (False, False))
    grid = sweep_backup_h(model, policy, spec0, geom, 1e-12, 1)
    expect = constraint_grid(geom, spec0)
    assert np.allclose(grid.values, expect.values, atol=1e-9)


def test_sweep_respects_thread_env(monkeypatch):
    model, policy, spec = make_benchmark("double_integrator")
    geom = GridGeometry((-10.0, -5.0), (12.0, 5.0), (11, 9), (False, False))
    base = sweep_backup_h(model, policy, spec, geom, 10.0, 50)
    monkeypatch.setenv("BCBF_THREADS", "4")
    threaded = sweep_backup_h(model, policy, spec, geom, 10.0, 50, chunk=16)
    assert np.array_equal(base.values, threaded.values)


# ---------------------------------------------------------------------------
# comparisons
# ---------------------------------------------------------------------------


def _band_grid(values):
    geom = GridGeometry((-1.0, -1.0), (1.0, 1.0), (5, 5), (False, False))
    return LevelGrid(geom, np.asarray(values, dtype=float))


def test_compare_identical():
    grid = _band_grid(np.linspace(-1, 1, 25))
    metrics = compare_sets(grid, grid)
    assert metrics["jaccard"] == 1.0
    assert metrics["fraction_a_not_b"] == 0.0


def test_compare_disjoint():
    a = _band_grid(np.r_[np.ones(10), -np.ones(15)])
    b = _band_grid(np.r_[-np.ones(10), np.ones(15)])
    metrics = compare_sets(a, b)
    assert metrics["jaccard"] == 0.0
    assert metrics["fraction_a_not_b"] == 1.0


def test_compare_halfspace_against_everything():
    geom = GridGeometry((-1.0, -1.0), (1.0, 1.0), (40, 11), (False, False))
    xs = geom.nodes()[:, 0].reshape(geom.counts)
    half = LevelGrid(geom, np.where(xs >= 0, 1.0, -1.0).ravel())
    full = LevelGrid(geom, np.ones(40 * 11))
    metrics = compare_sets(half, full)
    assert metrics["fraction_b_not_a"] == pytest.approx(0.5, abs=0.05)
    assert metrics["fraction_a_not_b"] == 0.0
    assert metrics["cell_counts"]["total"] == 440


def test_compare_rejects_geometry_mismatch():
    a = _band_grid(np.ones(25))
    geom = GridGeometry((-1.0, -1.0), (1.0, 1.0), (5, 6), (False, False))
    b = LevelGrid(geom, np.ones(30))
    with pytest.raises(GeometryError):
        compare_sets(a, b)


def test_dilate_wraps_periodic_axis():
    geom = GridGeometry((0.0, 0.0), (1.0, 1.0), (5, 6), (False, True))
    vals = -np.ones((5, 6))
    vals[2, 5] = 1.0
    mask = dilate_set(LevelGrid(geom, vals.ravel()))
    assert mask[2, 0]        # wrapped along the periodic axis
    assert mask[1, 5] and mask[3, 5] and mask[2, 4]
    assert not mask[0, 0]


# ---------------------------------------------------------------------------
# geometry & serialization
# ---------------------------------------------------------------------------


def test_geometry_validation():
    with pytest.raises(GeometryError):
        GridGeometry((0.0,), (1.0,), (5,), (False,))          # 1-D
    with pytest.raises(GeometryError):
        GridGeometry((0.0, 0.0), (1.0, 1.0), (2, 5), (False, False))
    with pytest.raises(GeometryError):
        GridGeometry((0.0, 2.0), (1.0, 1.0), (5, 5), (False, False))


def test_periodic_axis_excludes_endpoint():
    geom = GridGeometry((0.0, -np.pi), (1.0, np.pi), (5, 8), (False, True))
    x = geom.axis_coordinates(1)
    assert x[0] == pytest.approx(-np.pi)
    assert x[-1] < np.pi
    assert geom.spacing(1) == pytest.approx(2 * np.pi / 8)


def test_grid_csv_roundtrip(tmp_path):
    model, policy, spec = make_benchmark("double_integrator")
    geom = GridGeometry((-10.0, -5.0), (12.0, 5.0), (7, 5), (False, False))
    grid = sweep_backup_h(model, policy, spec, geom, 10.0, 50)
    path = str(tmp_path / "grid.csv")
    write_grid_csv(grid, path)
    back = read_grid_csv(path)
    assert back.geometry == grid.geometry
    assert np.array_equal(back.values, grid.values)


def test_grid_json_roundtrip(tmp_path):
    geom = GridGeometry((0.0, -np.pi), (1.0, np.pi), (4, 6), (False, True))
    grid = LevelGrid(geom, np.arange(24.0))
    path = str(tmp_path / "grid.json")
    write_grid_json(grid, path)
    back = read_grid(path)
    assert back.geometry == grid.geometry
    assert np.array_equal(back.values, grid.values)
    doc = grid_to_json_dict(grid)
    again = grid_from_json_dict(doc)
    assert again.geometry == grid.geometry


def test_csv_parse_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# axis 0: 0.0 1.0 zonk\n")
    with pytest.raises(GeometryError) as err:
        read_grid_csv(str(path))
    assert ":1:" in str(err.value)

    path2 = tmp_path / "bad2.csv"
    path2.write_text("# axis 0: 0.0 1.0 3\n# axis 1: 0.0 1.0 3\n0,0,0.0,0.0\n")
    with pytest.raises(GeometryError) as err:
        read_grid_csv(str(path2))
    assert ":3:" in str(err.value)
