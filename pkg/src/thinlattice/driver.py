"""Design-iteration loop and run history persistence.

Each design iteration evaluates the current thicknesses, smooths the wall
energies with the previous iteration's (smoothed) energies, optionally
aggregates them onto the periodic unit cell, solves the update subproblem
inside a moving box, scatters back, soft-kills walls thinner than ``t_min``
and rescales the surviving walls onto the volume budget.

Killed walls stay at ``KILLED_THICKNESS``, are never revived, and are left out
of both the optimization variables and the volume budget.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .config import RunConfig, validate_config
from .evaluator import (EnergyReport, EvaluatorError, ExternalEvaluator, SurrogateEvaluator,
                        SurrogateParams)
from .lattice import DesignSpace, build_design_space
from .metrics import PerformanceRecord, performance
from .optimizer import InfeasibleProblem, SolverSettings, solve_update
from .periodic import PeriodicMap, aggregate_energy, build_periodic_map
from .schemes import KILLED_THICKNESS, Scheme, ThicknessField, UpdateProblem, build_bounds

_log = logging.getLogger(__name__)

VOLUME_RTOL = 1e-9
MAX_RESCALE_ROUNDS = 10


class RunAborted(RuntimeError):
    """The run stopped early; ``history`` holds the iterations completed so far."""

    def __init__(self, message: str, history: "RunHistory"):
        super().__init__(message)
        self.history = history


# --------------------------------------------------------------------------
# volume scaling and thresholding
# --------------------------------------------------------------------------

def _scale_onto_budget(t, mask, L, target_area, t_max):
    t = np.array(t, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    L = np.asarray(L, dtype=float)
    if not np.any(mask):
        raise InfeasibleProblem("no live designable walls to carry the volume budget")
    if t_max is not None and target_area > float(np.sum(L[mask])) * t_max * (1 + VOLUME_RTOL):
        raise InfeasibleProblem(
            f"volume budget needs area {target_area:.6g} mm^2 but live walls at t_max "
            f"only provide {float(np.sum(L[mask])) * t_max:.6g} mm^2")
    clipped = np.zeros_like(mask)
    for _ in range(MAX_RESCALE_ROUNDS):
        free = mask & ~clipped
        current = float(np.sum(L[free] * t[free]))
        if current <= 0:
            raise InfeasibleProblem("live walls have zero area; cannot rescale")
        budget = target_area - float(np.sum(L[clipped] * t[clipped]))
        t[free] *= budget / current
        if t_max is None:
            return t
        over = free & (t > t_max)
        if not np.any(over):
            return t
        t[over] = t_max
        clipped |= over
    achieved = float(np.sum(L[mask] * t[mask]))
    if abs(achieved - target_area) <= VOLUME_RTOL * target_area:
        return t
    raise InfeasibleProblem(f"rescaling did not settle within {MAX_RESCALE_ROUNDS} rounds")


def initial_scale(t0, L, H: float, V_star: float, t_max: float | None = None) -> np.ndarray:
    """Scale ``t0`` linearly onto ``H * sum(L t) = V*``, clipping at ``t_max``."""
    t0 = np.asarray(t0, dtype=float)
    if not np.sum(np.asarray(L) * t0) > 0:
        raise ValueError("initial thickness has zero total area")
    return _scale_onto_budget(t0, np.ones(t0.shape, bool), L, V_star / H, t_max)


def rescale_to_volume(t, alive, L, H: float, V_star: float, t_max: float | None = None) -> np.ndarray:
    """Scale live walls back onto the budget; killed walls are left untouched."""
    return _scale_onto_budget(t, alive, L, V_star / H, t_max)


def threshold_and_kill(t, t_min: float, candidates=None) -> tuple[np.ndarray, list[int]]:
    """Soft-kill walls thinner than ``t_min``.

    Only indices flagged in ``candidates`` (default: all) may be killed.
    Returns the new thicknesses and the ids killed by this call.
    """
    t = np.array(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("thickness must be >= 0")
    cand = np.ones(t.shape, bool) if candidates is None else np.asarray(candidates, bool)
    kill = cand & (t < t_min)
    t[kill] = KILLED_THICKNESS
    return t, [int(i) for i in np.flatnonzero(kill)]


# --------------------------------------------------------------------------
# records
# --------------------------------------------------------------------------

def _floats(a) -> list[float]:
    return [float(v) for v in a]


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    t_before: np.ndarray
    t_after: np.ndarray
    alive_after: np.ndarray
    E_raw: np.ndarray
    E_averaged: np.ndarray
    metrics: PerformanceRecord
    solver: Optional[dict]
    walls_killed_this_iter: list[int]
    max_thickness_change: float
    max_solver_change: float
    evaluation_completed: bool
    converged: bool

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "t_before": _floats(self.t_before),
            "t_after": _floats(self.t_after),
            "alive_after": [bool(v) for v in self.alive_after],
            "E_raw": _floats(self.E_raw),
            "E_averaged": _floats(self.E_averaged),
            "metrics": self.metrics.to_dict(),
            "solver": self.solver,
            "walls_killed_this_iter": list(self.walls_killed_this_iter),
            "max_thickness_change": self.max_thickness_change,
            "max_solver_change": self.max_solver_change,
            "evaluation_completed": self.evaluation_completed,
            "converged": self.converged,
        }

    @classmethod
    def from_json(cls, d: dict) -> "IterationRecord":
        return cls(
            iteration=int(d["iteration"]),
            t_before=np.asarray(d["t_before"], float),
            t_after=np.asarray(d["t_after"], float),
            alive_after=np.asarray(d["alive_after"], bool),
            E_raw=np.asarray(d["E_raw"], float),
            E_averaged=np.asarray(d["E_averaged"], float),
            metrics=PerformanceRecord(**d["metrics"]),
            solver=d["solver"],
            walls_killed_this_iter=[int(i) for i in d["walls_killed_this_iter"]],
            max_thickness_change=float(d["max_thickness_change"]),
            max_solver_change=float(d["max_solver_change"]),
            evaluation_completed=bool(d["evaluation_completed"]),
            converged=bool(d["converged"]),
        )


def best_by_sea(records) -> int:
    return int(np.argmax([r.metrics.sea_per_volume for r in records]))


def best_by_damage(records) -> int:
    keys = [(r.metrics.damage_dissipation, -r.metrics.mwc, r.iteration) for r in records]
    return min(range(len(records)), key=keys.__getitem__)


@dataclass
class RunHistory:
    config: dict
    records: list[IterationRecord] = field(default_factory=list)
    terminated_by: str = "max_iterations"

    @property
    def best_iteration_by_sea(self) -> int:
        return best_by_sea(self.records)

    @property
    def best_iteration_by_damage(self) -> int:
        return best_by_damage(self.records)

    @property
    def final_thickness(self) -> np.ndarray:
        return self.records[-1].t_after


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

METRICS_COLUMNS = ["iteration", "sea_per_volume", "sea_per_mass", "mwc",
                   "external_work", "damage_dissipation"]


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_design_csv(path, thickness, alive) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("wall_id,thickness_mm,alive\n")
        for j, (t, a) in enumerate(zip(thickness, alive)):
            fh.write(f"{j},{_fmt(t)},{int(bool(a))}\n")


def read_design_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["wall_id", "thickness_mm", "alive"]:
            raise ValueError(f"{path}: expected header wall_id,thickness_mm,alive")
        rows = []
        for lineno, row in enumerate(reader, 2):
            try:
                rows.append((int(row["wall_id"]), float(row["thickness_mm"]), bool(int(row["alive"]))))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: wall ids must be exactly 0..{len(rows) - 1}")
    return np.array([r[1] for r in rows]), np.array([r[2] for r in rows], dtype=bool)


class HistoryWriter:
    """Flushes every record to ``out_dir`` as soon as it is produced."""

    def __init__(self, out_dir, config: dict):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        (self.out_dir / "history.jsonl").write_text("", encoding="utf-8")
        with open(self.out_dir / "metrics.csv", "w", newline="\n", encoding="utf-8") as fh:
            fh.write(",".join(METRICS_COLUMNS) + "\n")
        self._summary(status="running")

    def _summary(self, **extra):
        doc = {"config": self.config, **extra}
        (self.out_dir / "run.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    def record(self, rec: IterationRecord, alive_before) -> None:
        with open(self.out_dir / "history.jsonl", "a", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(rec.to_json()) + "\n")
        m = rec.metrics
        with open(self.out_dir / "metrics.csv", "a", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join([str(rec.iteration), _fmt(m.sea_per_volume), _fmt(m.sea_per_mass),
                               _fmt(m.mwc), _fmt(m.external_work), _fmt(m.damage_dissipation)]) + "\n")
        write_design_csv(self.out_dir / f"design_iter_{rec.iteration}.csv", rec.t_before, alive_before)

    def finish(self, history: RunHistory, status: str, error: str | None = None) -> None:
        if history.records:
            last = history.records[-1]
            write_design_csv(self.out_dir / f"design_iter_{last.iteration + 1}.csv",
                             last.t_after, last.alive_after)
        extra = {"status": status, "iterations": len(history.records)}
        if history.records:
            extra["best_iteration_by_sea"] = history.best_iteration_by_sea
            extra["best_iteration_by_damage"] = history.best_iteration_by_damage
        if error:
            extra["error"] = error
        self._summary(**extra)


class HistoryFormatError(ValueError):
    pass


def load_history(path) -> list[IterationRecord]:
    """Read ``history.jsonl``; corrupt lines raise with their line number."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(IterationRecord.from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise HistoryFormatError(f"{path}:{lineno}: corrupt history line ({exc})") from None
    if not records:
        raise HistoryFormatError(f"{path}: history is empty")
    return records


# --------------------------------------------------------------------------
# run
# --------------------------------------------------------------------------

def design_space_from_config(cfg: RunConfig) -> DesignSpace:
    g = cfg.geometry
    return build_design_space(g.length, g.width, g.height, g.cells_x, g.cells_y,
                              g.layers_z, g.boundary_thickness)


def make_evaluator(cfg: RunConfig, out_dir=None):
    ev = cfg.evaluator
    if ev.kind == "surrogate":
        s = ev.surrogate
        return SurrogateEvaluator(SurrogateParams(
            load_center=s.load_center, kernel_sigma=s.kernel_sigma, t_ref=s.t_ref,
            damage_kappa=s.damage_kappa, mode=s.mode, amplitude=s.amplitude))
    ext = ev.external
    workdir = ext.workdir or Path(out_dir or cfg.output_dir or ".") / "solver"
    return ExternalEvaluator(ext.command, workdir, ext.elems_per_wall_inplane, ext.timeout)


class _Layout:
    """Maps between full wall arrays and optimization variables."""

    def __init__(self, ds: DesignSpace, pmap: PeriodicMap | None):
        self.ds = ds
        self.pmap = pmap
        if pmap is None:
            self.var_walls = np.flatnonzero(ds.designable)
            self.var_lengths = ds.lengths[self.var_walls]
            self.fixed = ~ds.designable
            self.var_of_wall = np.full(ds.n_walls, -1)
            self.var_of_wall[self.var_walls] = np.arange(len(self.var_walls))
        else:
            classes = np.flatnonzero(pmap.class_designable)
            self.var_classes = classes
            self.var_lengths = pmap.class_lengths[classes] * pmap.image_counts[classes]
            self.fixed = ~pmap.class_designable[pmap.class_of]
            cls_to_var = np.full(pmap.class_count, -1)
            cls_to_var[classes] = np.arange(len(classes))
            self.var_of_wall = cls_to_var[pmap.class_of]
        self.n_var = len(self.var_lengths)

    def var_energy(self, E_full) -> np.ndarray:
        if self.pmap is None:
            return np.asarray(E_full)[self.var_walls]
        return aggregate_energy(self.pmap, E_full)[self.var_classes]

    def var_from_full(self, t_full) -> np.ndarray:
        """Mean thickness over the walls each variable stands for."""
        t_full = np.asarray(t_full, float)
        sums = np.bincount(self.var_of_wall[~self.fixed], weights=t_full[~self.fixed],
                           minlength=self.n_var)
        counts = np.bincount(self.var_of_wall[~self.fixed], minlength=self.n_var)
        return sums / counts

    def to_full(self, t_var, fixed_thickness: float | None) -> np.ndarray:
        t = np.zeros(self.ds.n_walls)
        t[~self.fixed] = np.asarray(t_var)[self.var_of_wall[~self.fixed]]
        if np.any(self.fixed):
            t[self.fixed] = fixed_thickness
        return t

    def alive_full(self, alive_var) -> np.ndarray:
        alive = np.ones(self.ds.n_walls, bool)
        alive[~self.fixed] = np.asarray(alive_var)[self.var_of_wall[~self.fixed]]
        return alive


def _evaluate(evaluator, ds, field_, iteration) -> EnergyReport:
    last = None
    for attempt in (1, 2):
        try:
            report = evaluator(ds, field_)
        except (EvaluatorError, OSError) as exc:
            last = exc
            _log.warning("iteration %d: evaluation attempt %d failed: %s", iteration, attempt, exc)
            continue
        if len(report.wall_energy) != ds.n_walls:
            raise EvaluatorError(f"evaluator returned {len(report.wall_energy)} energies for {ds.n_walls} walls")
        return report
    raise EvaluatorError(f"evaluation failed twice at iteration {iteration}: {last}")


def run(config: RunConfig | dict, evaluator=None, out_dir=None,
        on_iteration: Callable[[IterationRecord], None] | None = None) -> RunHistory:
    """Run the optimization described by ``config``.

    ``evaluator`` defaults to the one configured; ``out_dir`` (or
    ``config.output_dir``) receives ``history.jsonl``, ``metrics.csv``,
    ``run.json`` and ``design_iter_<k>.csv``. Nothing is written when both
    are ``None``.
    """
    cfg = config if isinstance(config, RunConfig) else validate_config(config)
    ds = design_space_from_config(cfg)
    H = ds.height_H
    pmap = None
    if cfg.periodic is not None and cfg.periodic.units_x * cfg.periodic.units_y > 1:
        pmap = build_periodic_map(ds, cfg.periodic.units_x, cfg.periodic.units_y)
    lay = _Layout(ds, pmap)
    if lay.n_var == 0:
        raise ValueError("design space has no designable walls")
    t_fixed = ds.boundary_thickness
    if evaluator is None:
        evaluator = make_evaluator(cfg, out_dir)
    scheme = Scheme.parse(cfg.scheme)
    settings = SolverSettings(**cfg.solver.model_dump())

    t0_full = np.full(ds.n_walls, float(cfg.t0)) if not isinstance(cfg.t0, list) else np.asarray(cfg.t0, float)
    t_var = lay.var_from_full(t0_full)
    fixed_volume = H * float(np.sum(ds.lengths[lay.fixed] * t_fixed)) if np.any(lay.fixed) else 0.0
    if cfg.v_star is None:
        v_star = H * float(np.sum(lay.var_lengths * t_var))
        if cfg.budget_includes_fixed:
            v_star += fixed_volume
    else:
        v_star = cfg.v_star
    v_design = v_star - fixed_volume if cfg.budget_includes_fixed else v_star
    if v_design <= 0:
        raise ValueError(f"fixed walls use {fixed_volume:.6g} mm^3, leaving no budget from V* = {v_star:.6g}")
    t_var = initial_scale(t_var, lay.var_lengths, H, v_design, cfg.t_max)
    alive_var = np.ones(lay.n_var, bool)

    history = RunHistory(config=cfg.snapshot())
    target = out_dir if out_dir is not None else cfg.output_dir
    writer = HistoryWriter(target, history.config) if target is not None else None
    E_prev = None
    try:
        for i in range(cfg.max_design_iterations):
            alive_full = lay.alive_full(alive_var)
            t_var_cur = np.where(alive_var, t_var, KILLED_THICKNESS)
            t_full = lay.to_full(t_var_cur, t_fixed)
            report = _evaluate(evaluator, ds, ThicknessField(t_full, alive_full), i)
            metrics = performance(report, v_star, ds.layers_z, cfg.density,
                                  alive_full, cfg.mwc_alive_only)
            E_raw = report.wall_energy
            E_avg = E_raw if E_prev is None else 0.5 * (E_prev + E_raw)

            live = np.flatnonzero(alive_var)
            t_solved = t_var_cur.copy()
            solver_summary = None
            if len(live):
                lo, up = build_bounds(t_var[live], cfg.dt_max, cfg.t_max)
                problem = UpdateProblem(scheme, lay.var_energy(E_avg)[live], lay.var_lengths[live],
                                        H, v_design, lo, up, t_var[live])
                res = solve_update(problem, settings)
                t_solved[live] = res.t_next
                solver_summary = res.summary()
            max_solver_change = float(np.max(np.abs(t_solved - t_var_cur)[live])) if len(live) else 0.0

            t_full_solved = lay.to_full(t_solved, t_fixed)
            candidates = lay.alive_full(alive_var) & ~lay.fixed
            t_full_thr, killed = threshold_and_kill(t_full_solved, cfg.t_min, candidates)
            killed_vars = np.unique(lay.var_of_wall[killed]) if killed else np.array([], int)
            alive_next = alive_var.copy()
            alive_next[killed_vars] = False
            t_next = lay.var_from_full(t_full_thr)
            t_next = rescale_to_volume(t_next, alive_next, lay.var_lengths, H, v_design, cfg.t_max)
            t_next = np.where(alive_next, t_next, KILLED_THICKNESS)
            t_after = lay.to_full(t_next, t_fixed)

            change = float(np.max(np.abs(t_after - t_full)))
            converged = change < cfg.convergence_tol
            rec = IterationRecord(
                iteration=i, t_before=t_full, t_after=t_after,
                alive_after=lay.alive_full(alive_next), E_raw=E_raw, E_averaged=E_avg,
                metrics=metrics, solver=solver_summary, walls_killed_this_iter=killed,
                max_thickness_change=change, max_solver_change=max_solver_change,
                evaluation_completed=report.completed, converged=converged,
            )
            history.records.append(rec)
            if writer:
                writer.record(rec, alive_full)
            if on_iteration:
                on_iteration(rec)
            if converged:
                history.terminated_by = "converged"
                break
            E_prev, t_var, alive_var = E_avg, t_next, alive_next
        else:
            history.terminated_by = "max_iterations"
    except (EvaluatorError, InfeasibleProblem, ArithmeticError, RuntimeError) as exc:
        if writer:
            writer.finish(history, "aborted", str(exc))
        raise RunAborted(f"run aborted after {len(history.records)} iterations: {exc}", history) from exc
    if writer:
        writer.finish(history, history.terminated_by)
    return history
