"""Acceptance suite: one test per criterion, summarized at the end of the run."""
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from _instances import bounded_instance, proportional_instance, random_feasible_points
from _runs import FixedEnergy, config
from thinlattice.driver import run
from thinlattice.evaluator import format_solver_input, run_external, write_solver_input
from thinlattice.lattice import build_design_space, generate_mesh
from thinlattice.optimizer import brute_force_oracle, project_box_hyperplane, solve_update
from thinlattice.periodic import aggregate_energy, build_periodic_map
from thinlattice.schemes import (KILLED_THICKNESS, scheme1_gradient, scheme1_objective,
                                 scheme2_gradient, scheme2_objective)

FIXTURES = Path(__file__).parent / "fixtures"
STUB = f'"{sys.executable}" "{FIXTURES / "stub_solver.py"}"'


@pytest.mark.criterion(1, "wall-count fidelity")
def test_c01_wall_counts(record_property):
    start = time.perf_counter()
    small = build_design_space(80, 100, 400, 4, 5, 10, boundary_thickness=1.5)
    large = build_design_space(140, 140, 400, 14, 14, 10, boundary_thickness=1.5)
    pm = build_periodic_map(large, 2, 2)
    counts = (int(small.designable.sum()), int(large.designable.sum()),
              pm.class_count, int(pm.class_designable.sum()))
    elapsed = time.perf_counter() - start
    record_property("counts", counts)
    record_property("seconds", f"{elapsed:.3f}")
    assert counts == (31, 364, 98, 84)
    assert elapsed < 1.0


@pytest.mark.criterion(2, "proportional-allocation optimum")
def test_c02_proportional_allocation(record_property):
    rng = np.random.default_rng(20260101)
    worst_dev = worst_obj = 0.0
    start = time.perf_counter()
    for scheme in (1, 2):
        for _ in range(100):
            p, t_star = proportional_instance(rng, scheme, int(rng.integers(1, 21)))
            r = solve_update(p)
            worst_dev = max(worst_dev, float(np.max(np.abs(r.t_next - t_star) / t_star)))
            worst_obj = max(worst_obj, r.objective_final)
    elapsed = time.perf_counter() - start
    record_property("max_rel_dev", f"{worst_dev:.2e}")
    record_property("max_objective", f"{worst_obj:.2e}")
    record_property("seconds", f"{elapsed:.2f}")
    assert worst_dev <= 1e-6
    assert worst_obj <= 1e-10
    assert elapsed < 10.0


def grid_resolution_term(p, t, h):
    """Bound on how much the objective can change between the solver point and
    the nearest oracle grid point.

    The oracle grids n-1 coordinates at spacing h and solves the last one from
    the volume equality, so each coordinate moves by at most
    ``d = h * max(1, (n-1) max(w) / min(w))``. Population std is Lipschitz
    with constant 1/sqrt(n) in the 2-norm of its argument; the argument moves
    by at most ``E d / (L (t-d)^2)`` per wall for the first scheme and by
    ``2 sum(L d) / sum(L (t-d))`` in total for the second.
    """
    n = len(t)
    w = p.lengths
    d = h * max(1.0, (n - 1) * w.max() / w.min())
    t_low = np.maximum(t - d, 1e-9)
    if p.scheme.value == 1:
        dx = p.energy_prev * d / (w * t_low ** 2)
        return float(np.linalg.norm(dx)) / np.sqrt(n)
    return 2.0 * float(np.sum(w * d)) / float(np.sum(w * t_low)) / np.sqrt(n)


@pytest.mark.criterion(3, "oracle equivalence")
def test_c03_oracle_equivalence(record_property):
    rng = np.random.default_rng(33)
    h = 1e-3
    worst_gap, worst_excess, worst_lead = 0.0, -np.inf, -np.inf
    start = time.perf_counter()
    for scheme in (1, 2):
        for _ in range(50):
            p = bounded_instance(rng, scheme)
            r = solve_update(p)
            oracle = p.objective(brute_force_oracle(p, h))
            gap = abs(r.objective_final - oracle)
            worst_lead = max(worst_lead, r.objective_final - oracle)
            worst_gap = max(worst_gap, gap)
            worst_excess = max(worst_excess, gap - (1e-3 + grid_resolution_term(p, r.t_next, h)))
    elapsed = time.perf_counter() - start
    record_property("max_gap", f"{worst_gap:.2e}")
    record_property("max_excess_over_bound", f"{worst_excess:.2e}")
    record_property("seconds", f"{elapsed:.1f}")
    assert worst_excess <= 0
    # the continuous solver is never worse than the grid
    assert worst_lead <= 1e-9
    assert elapsed < 60.0


def central_difference(f, t):
    g = np.empty_like(t)
    for j in range(len(t)):
        step = 1e-6 * max(t[j], 1.0)
        tp, tm = t.copy(), t.copy()
        tp[j] += step
        tm[j] -= step
        g[j] = (f(tp) - f(tm)) / (2 * step)
    return g


@pytest.mark.criterion(4, "gradient correctness")
def test_c04_gradients(record_property):
    rng = np.random.default_rng(44)
    worst = 0.0
    for obj, grad in ((scheme1_objective, scheme1_gradient), (scheme2_objective, scheme2_gradient)):
        for _ in range(100):
            n = int(rng.integers(2, 21))
            t, E, L = rng.uniform(0.1, 3, n), rng.uniform(0.1, 5, n), rng.uniform(0.5, 20, n)
            fd = central_difference(lambda x: obj(x, E, L), t)
            worst = max(worst, float(np.linalg.norm(grad(t, E, L) - fd) / np.linalg.norm(fd)))
    record_property("max_rel_err", f"{worst:.2e}")
    assert worst < 1e-5


@pytest.mark.criterion(5, "projection correctness")
def test_c05_projection(record_property):
    rng = np.random.default_rng(55)
    worst_idem = worst_res = 0.0
    violations = 0
    for _ in range(50):
        n = int(rng.integers(2, 11))
        lo = rng.uniform(0, 1, n)
        up = lo + rng.uniform(0.05, 2, n)
        w = rng.uniform(0.5, 20, n)
        c = rng.uniform(w @ lo, w @ up)
        y = rng.normal(1, 2, n)
        x = project_box_hyperplane(y, lo, up, w, c)
        worst_res = max(worst_res, abs(float(w @ x) - c))
        worst_idem = max(worst_idem, float(np.max(np.abs(project_box_hyperplane(x, lo, up, w, c) - x))))
        z = random_feasible_points(rng, lo, up, w, c, 1000)
        violations += int(np.sum(np.linalg.norm(z - y, axis=1) < np.linalg.norm(x - y) - 1e-12))
    record_property("idempotence", f"{worst_idem:.1e}")
    record_property("residual", f"{worst_res:.1e}")
    record_property("closer_points", violations)
    assert worst_idem <= 1e-12
    assert worst_res <= 1e-10
    assert violations == 0


def designable_volume(ds, rec):
    mask = ds.designable & rec.alive_after
    return ds.height_H * float(np.sum(ds.lengths[mask] * rec.t_after[mask]))


@pytest.mark.criterion(6, "design-loop conformance")
def test_c06_loop_conformance(record_property):
    worst_vol = 0.0
    for scheme in (1, 2):
        for mode in ("fixed_displacement", "fixed_load"):
            cfg = config(scheme=scheme, mode=mode, t_min=0.6)
            hist = run(cfg)
            ds = build_design_space(60, 60, 10, 6, 6, 5, 1.0)
            v_star = ds.height_H * float(np.sum(ds.lengths[ds.designable]))
            assert [r.iteration for r in hist.records] == list(range(len(hist.records)))
            prev_alive = np.ones(ds.n_walls, bool)
            for r in hist.records:
                worst_vol = max(worst_vol, abs(designable_volume(ds, r) - v_star) / v_star)
                assert np.all(r.alive_after <= prev_alive)
                assert np.all(r.t_after[~r.alive_after] == KILLED_THICKNESS)
                assert r.max_solver_change <= cfg["dt_max"] + 1e-12
                prev_alive = r.alive_after
    record_property("max_volume_rel_err", f"{worst_vol:.1e}")
    assert worst_vol <= 1e-9

    # largest change is exactly dt_max on this 1x1 instance; tolerance 1e-2
    base = {"geometry": {"length": 10.0, "width": 10.0, "height": 1.0, "cells_x": 1, "cells_y": 1},
            "t0": 1.0, "t_min": 0.1, "t_max": 5.0, "max_design_iterations": 3, "convergence_tol": 1e-2}
    below = run({**base, "dt_max": 1e-2 - 1e-6}, evaluator=FixedEnergy([10, 1, 1, 1])).records[0]
    above = run({**base, "dt_max": 1e-2 + 1e-6}, evaluator=FixedEnergy([10, 1, 1, 1])).records[0]
    record_property("boundary_changes", f"{below.max_thickness_change:.7g}/{above.max_thickness_change:.7g}")
    assert below.converged and not above.converged


@pytest.mark.criterion(7, "periodicity")
def test_c07_periodicity(record_property):
    cfg = config(periodic={"units_x": 2, "units_y": 2}, t_min=0.6)
    hist = run(cfg)
    ds = build_design_space(60, 60, 10, 6, 6, 5, 1.0)
    pm = build_periodic_map(ds, 2, 2)
    for r in hist.records:
        for field in (r.t_before, r.t_after):
            for im in pm.images_per_class:
                assert np.all(field[list(im)] == field[im[0]])
    rng = np.random.default_rng(77)
    dyadic = rng.integers(0, 2**30, ds.n_walls) / 2.0**12
    assert aggregate_energy(pm, dyadic).sum() == dyadic.sum()
    for r in hist.records:
        assert abs(aggregate_energy(pm, r.E_raw).sum() - r.E_raw.sum()) <= 1e-12 * r.E_raw.sum()
    record_property("iterations", len(hist.records))


_DIRECTIONAL = {}


def directional_runs():
    if not _DIRECTIONAL:
        start = time.perf_counter()
        _DIRECTIONAL["displacement"] = run(config(mode="fixed_displacement"))
        _DIRECTIONAL["load"] = run(config(mode="fixed_load"))
        _DIRECTIONAL["seconds"] = time.perf_counter() - start
    return _DIRECTIONAL


@pytest.mark.criterion(8, "directional behavior on the surrogate")
def test_c08_directional(record_property):
    runs = directional_runs()
    disp, load = runs["displacement"].records, runs["load"].records
    sea_ratio = max(r.metrics.sea_per_volume for r in disp) / disp[0].metrics.sea_per_volume
    dmg_ratio = min(r.metrics.damage_dissipation for r in load) / load[0].metrics.damage_dissipation
    record_property("sea_ratio", f"{sea_ratio:.3f}")
    record_property("damage_ratio", f"{dmg_ratio:.3f}")
    record_property("seconds", f"{runs['seconds']:.1f}")
    assert sea_ratio >= 1.05
    assert dmg_ratio <= 0.95
    assert runs["seconds"] < 120.0


@pytest.mark.criterion(9, "iteration budget")
def test_c09_iteration_budget(record_property):
    runs = directional_runs()
    n_disp, n_load = len(runs["displacement"].records), len(runs["load"].records)
    record_property("iterations", f"{n_disp}/{n_load}")
    record_property("terminated_by", f"{runs['displacement'].terminated_by}/{runs['load'].terminated_by}")
    assert n_disp <= 25 and n_load <= 25


@pytest.mark.criterion(10, "external adapter")
def test_c10_external_adapter(tmp_path, record_property):
    ds = build_design_space(20, 10, 5, 2, 1, layers_z=3)
    t = np.array([0.5, 1.25, 2.0, 0.75, 1.0, 1.5, 0.25])
    mesh = generate_mesh(ds, 2, thickness=t)
    inp = write_solver_input(mesh, tmp_path / "in.inp")
    again = write_solver_input(generate_mesh(ds, 2, thickness=t), tmp_path / "again.inp")
    assert inp.read_bytes() == format_solver_input(mesh).encode("utf-8") == again.read_bytes()
    assert b"\r" not in inp.read_bytes()

    rep = run_external(STUB + " echo {input} {output}", inp, tmp_path / "out.csv", ds.n_walls, 3)
    assert rep.completed
    assert rep.wall_energy.tolist() == t.tolist()

    cut = run_external(STUB + " truncate {input} {output}", inp, tmp_path / "cut.csv", ds.n_walls, 3)
    assert not cut.completed
    assert cut.wall_energy.tolist() == [0.5, 1.25, 2.0, 0.0, 0.0, 0.0, 0.0]
    record_property("input_bytes", len(inp.read_bytes()))
