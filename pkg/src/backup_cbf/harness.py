"""Scenario configuration, closed-loop simulation, timing, and artifacts.

Scenarios are JSON documents with units spelled out in the field names
(``t_horizon_s``, ``dt_s``, ...).  The simulation loop applies a nominal
("legacy") controller, passes it through the safety filter, and advances
the true dynamics with the same fixed-step fourth-order integrator family
the flow module uses.  Runs are deterministic: fixed-step integration and
deterministic tie-breaking in the QP make re-runs bit-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .barrier import filter_control
from .errors import (GeometryError, NumericalError, ScenarioError,
                     ValidationError)
from .hjgrid import (GridGeometry, LevelGrid, compare_sets, constraint_grid,
                     read_grid, solve_invariant, sweep_backup_h, write_grid_csv,
                     write_grid_json)
from .qp import QpSolver
from .systems import (BENCHMARK_DEFAULTS, BackupPolicy, SafetySpec, SystemModel,
                      make_benchmark)

Array = np.ndarray


# ---------------------------------------------------------------------------
# Scenario.
# ---------------------------------------------------------------------------

_NOMINAL_KINDS = ("constant", "proportional", "table")


@dataclass(frozen=True)
class Scenario:
    """One closed-loop experiment: benchmark, filter settings, nominal
    controller, initial state, and simulation clock."""

    benchmark: str
    params: dict = field(default_factory=dict)
    t_horizon_s: float = 0.0          # 0 -> benchmark default
    n_flow_steps: int = 0             # 0 -> benchmark default
    alpha_gain_per_s: float = 1.0
    row_margin: float = 0.0
    nominal: dict = field(default_factory=lambda: {"kind": "constant",
                                                   "value": []})
    x0: tuple[float, ...] = ()
    duration_s: float = 10.0
    dt_s: float = 0.02
    filter_on: bool = True
    label: str = ""
    out_dir: str = ""

    def __post_init__(self):
        if self.benchmark not in BENCHMARK_DEFAULTS:
            raise ScenarioError(f"unknown benchmark {self.benchmark!r}")
        defaults = BENCHMARK_DEFAULTS[self.benchmark]
        if self.t_horizon_s == 0.0:
            object.__setattr__(self, "t_horizon_s", defaults["t_horizon_s"])
        if self.n_flow_steps == 0:
            object.__setattr__(self, "n_flow_steps", defaults["n_flow_steps"])
        if self.t_horizon_s <= 0.0 or self.n_flow_steps < 1:
            raise ScenarioError("t_horizon_s must be > 0 and n_flow_steps >= 1")
        if self.dt_s <= 0.0:
            raise ScenarioError("dt_s must be > 0")
        if self.duration_s < self.dt_s:
            raise ScenarioError("duration_s must be >= dt_s")
        if self.alpha_gain_per_s <= 0.0:
            raise ScenarioError("alpha_gain_per_s must be > 0")
        if self.row_margin < 0.0:
            raise ScenarioError("row_margin must be >= 0")
        kind = self.nominal.get("kind")
        if kind not in _NOMINAL_KINDS:
            raise ScenarioError(f"nominal.kind must be one of {_NOMINAL_KINDS}")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "nominal", dict(self.nominal))

    def build(self) -> tuple[SystemModel, BackupPolicy, SafetySpec]:
        params = dict(self.params)
        params.setdefault("alpha_gain_per_s", self.alpha_gain_per_s)
        triple = make_benchmark(self.benchmark, params)
        model = triple[0]
        if len(self.x0) != model.state_dim:
            raise ScenarioError(f"x0 must have {model.state_dim} entries")
        return triple

    def to_json_dict(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "params": dict(self.params),
            "t_horizon_s": self.t_horizon_s,
            "n_flow_steps": self.n_flow_steps,
            "alpha_gain_per_s": self.alpha_gain_per_s,
            "row_margin": self.row_margin,
            "nominal": dict(self.nominal),
            "x0": list(self.x0),
            "duration_s": self.duration_s,
            "dt_s": self.dt_s,
            "filter_on": self.filter_on,
            "label": self.label,
            "out_dir": self.out_dir,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "Scenario":
        if not isinstance(doc, dict):
            raise ScenarioError("scenario document must be a JSON object")
        known = {"benchmark", "params", "t_horizon_s", "n_flow_steps",
                 "alpha_gain_per_s", "row_margin", "nominal", "x0",
                 "duration_s", "dt_s", "filter_on", "label", "out_dir"}
        unknown = set(doc) - known
        if unknown:
            raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")
        if "benchmark" not in doc or "x0" not in doc:
            raise ScenarioError("scenario requires 'benchmark' and 'x0'")
        try:
            return Scenario(**doc)
        except TypeError as exc:
            raise ScenarioError(str(exc)) from exc


def load_scenario(path: str) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}:{exc.lineno}: invalid JSON") from exc
    return Scenario.from_json_dict(doc)


def _nominal_controller(scenario: Scenario, model: SystemModel
                        ) -> Callable[[float, Array], Array]:
    spec = scenario.nominal
    kind = spec["kind"]
    m = model.input_dim
    if kind == "constant":
        value = np.asarray(spec.get("value", []), dtype=float)
        if value.shape != (m,):
            raise ScenarioError(f"nominal.value must have {m} entries")
        return lambda t, x: value
    if kind == "proportional":
        gain = np.asarray(spec.get("gain", []), dtype=float)
        ref = np.asarray(spec.get("reference", []), dtype=float)
        if gain.shape != (m, model.state_dim) or ref.shape != (model.state_dim,):
            raise ScenarioError("nominal.gain must be (input_dim x state_dim) "
                                "and nominal.reference a state vector")
        return lambda t, x: gain @ (ref - x)
    times = np.asarray(spec.get("times_s", []), dtype=float)
    values = np.asarray(spec.get("values", []), dtype=float)
    if times.ndim != 1 or times.size == 0 or values.shape != (times.size, m):
        raise ScenarioError("nominal table needs times_s (T,) and values (T, m)")
    if np.any(np.diff(times) <= 0.0):
        raise ScenarioError("nominal table times must be strictly increasing")

    def lookup(t: float, x: Array) -> Array:
        idx = int(np.searchsorted(times, t, side="right") - 1)
        return values[max(idx, 0)]

    return lookup


# ---------------------------------------------------------------------------
# Simulation.
# ---------------------------------------------------------------------------


def _rk4_true_step(model: SystemModel, x: Array, u: Array, dt: float) -> Array:
    def rhs(xs):
        return model.f_eval(xs) + model.g_eval(xs) @ u

    k1 = rhs(x)
    k2 = rhs(x + 0.5 * dt * k1)
    k3 = rhs(x + 0.5 * dt * k2)
    k4 = rhs(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True)
class SimLog:
    """Column-oriented record of one simulation run."""

    scenario: Scenario
    times: Array
    states: Array
    u_nominal: Array
    u_star: Array
    h_values: Array
    constraint_values: Array      # hC_k at the current state
    flow_minima: Array            # min over the flow grid, per constraint
    qp_status: tuple[str, ...]
    active_counts: Array
    fallbacks: Array
    timings_us: Array             # columns: integrate, rows, qp
    state_names: tuple[str, ...]
    input_names: tuple[str, ...]
    constraint_names: tuple[str, ...]

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0.0):
            raise ValidationError("log times must be strictly increasing")

    def min_constraint_value(self) -> float:
        return float(self.constraint_values.min())

    def summary(self) -> dict:
        return {
            "label": self.scenario.label,
            "benchmark": self.scenario.benchmark,
            "filter_on": self.scenario.filter_on,
            "steps": int(self.times.size),
            "min_h": float(self.h_values.min()) if self.h_values.size else None,
            "min_constraint": self.min_constraint_value(),
            "fallback_steps": int(self.fallbacks.sum()),
        }

    def to_csv(self, path: str, include_timings: bool = True) -> None:
        """Write the log; timing columns are wall-clock measurements and can
        be dropped when byte-stable output is wanted."""
        cols = (["t_s"]
                + [f"x_{n}" for n in self.state_names]
                + [f"u0_{n}" for n in self.input_names]
                + [f"ustar_{n}" for n in self.input_names]
                + ["h_value"]
                + [f"hC_{n}" for n in self.constraint_names]
                + [f"flowmin_{n}" for n in self.constraint_names]
                + ["qp_status", "n_active", "fallback"])
        if include_timings:
            cols += ["t_integrate_us", "t_rows_us", "t_qp_us"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(self.times.size):
                row = ([repr(float(self.times[i]))]
                       + [repr(float(v)) for v in self.states[i]]
                       + [repr(float(v)) for v in self.u_nominal[i]]
                       + [repr(float(v)) for v in self.u_star[i]]
                       + [repr(float(self.h_values[i]))]
                       + [repr(float(v)) for v in self.constraint_values[i]]
                       + [repr(float(v)) for v in self.flow_minima[i]]
                       + [self.qp_status[i], str(int(self.active_counts[i])),
                          str(int(self.fallbacks[i]))])
                if include_timings:
                    row += [str(int(v)) for v in self.timings_us[i]]
                fh.write(",".join(row) + "\n")


def simulate(scenario: Scenario) -> SimLog:
    """Run the closed loop for ``duration_s`` at ``dt_s``, filtering the
    nominal input at every step when the filter is on."""
    model, policy, spec = scenario.build()
    nominal = _nominal_controller(scenario, model)
    n_steps = int(round(scenario.duration_s / scenario.dt_s))
    solver = QpSolver()

    x = np.asarray(scenario.x0, dtype=float)
    times = np.empty(n_steps)
    states = np.empty((n_steps, model.state_dim))
    u_nom = np.empty((n_steps, model.input_dim))
    u_out = np.empty((n_steps, model.input_dim))
    h_vals = np.empty(n_steps)
    con_vals = np.empty((n_steps, len(spec.constraints)))
    flow_mins = np.empty((n_steps, len(spec.constraints)))
    statuses: list[str] = []
    actives = np.zeros(n_steps, dtype=int)
    fallbacks = np.zeros(n_steps, dtype=bool)
    timings = np.zeros((n_steps, 3), dtype=int)

    for k in range(n_steps):
        t = k * scenario.dt_s
        u0 = np.asarray(nominal(t, x), dtype=float)
        if scenario.filter_on:
            try:
                u_star, diag = filter_control(
                    model, policy, spec, x, u0,
                    scenario.t_horizon_s, scenario.n_flow_steps,
                    solver=solver, margin=scenario.row_margin)
            except NumericalError as exc:
                raise NumericalError(f"step {k} (t = {t:.4g} s): {exc}") from exc
            except ValidationError as exc:
                raise ValidationError(f"step {k} (t = {t:.4g} s): {exc}") from exc
            h_vals[k] = diag.h_value
            flow_mins[k] = diag.flow_minima
            statuses.append(diag.qp_status)
            actives[k] = len(diag.active_rows)
            fallbacks[k] = diag.used_fallback
            timings[k] = (diag.timings_us["integrate"], diag.timings_us["rows"],
                          diag.timings_us["qp"])
        else:
            u_star = np.clip(u0, model.input_lower, model.input_upper)
            h_vals[k] = np.nan
            flow_mins[k] = np.nan
            statuses.append("off")
        times[k] = t
        states[k] = x
        u_nom[k] = u0
        u_out[k] = u_star
        con_vals[k] = [c.h_eval(x) for c in spec.constraints]
        x = _rk4_true_step(model, x, u_star, scenario.dt_s)

    if scenario.filter_on:
        # every applied input must respect the box
        if np.any(u_out < model.input_lower - 1e-9) or \
           np.any(u_out > model.input_upper + 1e-9):
            raise ValidationError("filtered input left the input box")

    # flow minima per constraint are not exposed by FilterDiagnostics in
    # filter-off runs; replace NaN blocks with current-state values there.
    if not scenario.filter_on:
        flow_mins = con_vals.copy()
        h_vals = con_vals.min(axis=1)

    return SimLog(scenario=scenario, times=times, states=states,
                  u_nominal=u_nom, u_star=u_out, h_values=h_vals,
                  constraint_values=con_vals, flow_minima=flow_mins,
                  qp_status=tuple(statuses), active_counts=actives,
                  fallbacks=fallbacks, timings_us=timings,
                  state_names=model.state_names,
                  input_names=model.input_names,
                  constraint_names=tuple(c.name or f"c{k}" for k, c in
                                         enumerate(spec.constraints)))


# ---------------------------------------------------------------------------
# Benchmarking.
# ---------------------------------------------------------------------------


def bench(scenario: Scenario, repetitions: int) -> dict:
    """Repeated filter calls at the scenario's initial state; reports median
    and p95 wall time of the online integration and of the QP solve."""
    if repetitions < 10:
        raise ScenarioError("repetitions must be >= 10")
    model, policy, spec = scenario.build()
    nominal = _nominal_controller(scenario, model)
    x = np.asarray(scenario.x0, dtype=float)
    u0 = np.asarray(nominal(0.0, x), dtype=float)
    solver = QpSolver()

    rows = np.zeros((repetitions, 3))
    for i in range(repetitions):
        _, diag = filter_control(model, policy, spec, x, u0,
                                 scenario.t_horizon_s, scenario.n_flow_steps,
                                 solver=solver, margin=scenario.row_margin)
        rows[i] = (diag.timings_us["integrate"], diag.timings_us["rows"],
                   diag.timings_us["qp"])

    def stats(col: Array) -> dict:
        return {"median_us": float(np.median(col)),
                "p95_us": float(np.percentile(col, 95))}

    report = {
        "benchmark": scenario.benchmark,
        "label": scenario.label,
        "repetitions": repetitions,
        "n_flow_steps": scenario.n_flow_steps,
        "integration": stats(rows[:, 0]),
        "rows": stats(rows[:, 1]),
        "qp": stats(rows[:, 2]),
        "total": stats(rows.sum(axis=1)),
    }
    report["qp_dominates"] = report["qp"]["median_us"] > \
        report["integration"]["median_us"]
    return report


# ---------------------------------------------------------------------------
# Level-set artifacts.
# ---------------------------------------------------------------------------


def slice_grid(grid: LevelGrid, axis: int, value: float) -> LevelGrid:
    """Fix one axis at the node nearest ``value``; the result must still be
    a valid 2- or 3-axis grid."""
    geom = grid.geometry
    if geom.dims - 1 < 2:
        raise GeometryError("slice would leave fewer than 2 axes")
    if not 0 <= axis < geom.dims:
        raise GeometryError(f"axis {axis} out of range")
    coords = geom.axis_coordinates(axis)
    idx = int(np.argmin(np.abs(coords - value)))
    keep = [i for i in range(geom.dims) if i != axis]
    sub = GridGeometry(tuple(geom.lower[i] for i in keep),
                       tuple(geom.upper[i] for i in keep),
                       tuple(geom.counts[i] for i in keep),
                       tuple(geom.periodic_axes[i] for i in keep))
    values = np.take(grid.values, idx, axis=axis)
    return LevelGrid(sub, values)


def resolve_axis(model: SystemModel, name_or_index: str | int) -> int:
    if isinstance(name_or_index, int):
        return name_or_index
    if name_or_index in model.state_names:
        return model.state_names.index(name_or_index)
    try:
        return int(name_or_index)
    except ValueError:
        raise GeometryError(f"unknown axis {name_or_index!r}; state axes are "
                            f"{model.state_names}") from None


def run_levelset(scenario: Scenario, geometry: GridGeometry,
                 slices: Sequence[tuple[str | int, float]] = (),
                 out_dir: str = ".", include_hj: bool = False,
                 hj_tol: float = 1e-3, hj_max_steps: int = 5000) -> dict:
    """Sweep the implicit barrier over the grid (optionally also the
    baseline invariant-set field) and write everything as CSV; returns the
    map of written paths."""
    model, policy, spec = scenario.build()
    os.makedirs(out_dir, exist_ok=True)
    written: dict[str, str] = {}

    backup = sweep_backup_h(model, policy, spec, geometry,
                            scenario.t_horizon_s, scenario.n_flow_steps)
    path = os.path.join(out_dir, "backup_grid.csv")
    write_grid_csv(backup, path)
    written["backup_grid"] = path
    write_grid_json(backup, os.path.join(out_dir, "backup_grid.json"))
    written["backup_grid_json"] = os.path.join(out_dir, "backup_grid.json")

    hj = None
    if include_hj:
        hj = solve_invariant(constraint_grid(geometry, spec), model,
                             tol=hj_tol, max_steps=hj_max_steps)
        path = os.path.join(out_dir, "hj_grid.csv")
        write_grid_csv(hj, path)
        written["hj_grid"] = path
        write_grid_json(hj, os.path.join(out_dir, "hj_grid.json"))
        written["hj_grid_json"] = os.path.join(out_dir, "hj_grid.json")

    for name_or_index, value in slices:
        axis = resolve_axis(model, name_or_index)
        tag = f"{model.state_names[axis]}_{value:g}"
        sliced = slice_grid(backup, axis, value)
        path = os.path.join(out_dir, f"backup_slice_{tag}.csv")
        write_grid_csv(sliced, path)
        written[f"backup_slice_{tag}"] = path
        if hj is not None:
            path = os.path.join(out_dir, f"hj_slice_{tag}.csv")
            write_grid_csv(slice_grid(hj, axis, value), path)
            written[f"hj_slice_{tag}"] = path
    return written


def run_compare(path_a: str, path_b: str, threshold: float = 0.0,
                out_path: str | None = None) -> dict:
    """Compare two on-disk grids; optionally write the metrics JSON."""
    metrics = compare_sets(read_grid(path_a), read_grid(path_b), threshold)
    metrics["grid_a"] = path_a
    metrics["grid_b"] = path_b
    metrics["threshold"] = threshold
    if out_path:
        with open(out_path, "w") as fh:
            json.dump(metrics, fh, indent=2)
    return metrics
