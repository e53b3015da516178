"""Feasible-path projected gradient solver for the per-iteration update.

The feasible set is a box intersected with a single weighted hyperplane
``{l <= x <= u, w.x = c}``. Euclidean projection onto it is exact up to a
scalar root find on the dual multiplier, so every accepted iterate honors the
bounds and the volume equality.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .schemes import DENSITY_FLOOR, Scheme, UpdateProblem

_log = logging.getLogger(__name__)


class InfeasibleProblem(ValueError):
    """The box and the hyperplane do not intersect."""


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    max_inner_iters: int = 500
    step_init: float = 1.0
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    stagnation_tol: float = 1e-12
    projection_tol: float = 1e-10

    def __post_init__(self):
        for name in ("max_inner_iters", "step_init", "armijo_c", "stagnation_tol", "projection_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")


@dataclass(frozen=True)
class SolverResult:
    t_next: np.ndarray
    objective_final: float
    inner_iterations: int
    converged: bool
    objective_history: list[float] = field(default_factory=list)

    @property
    def objective_initial(self) -> float:
        return self.objective_history[0]

    def summary(self) -> dict:
        return {
            "objective_initial": self.objective_initial,
            "objective_final": self.objective_final,
            "inner_iterations": self.inner_iterations,
            "converged": self.converged,
        }


def project_box_hyperplane(y, lower, upper, w, c: float, tol: float = 1e-10) -> np.ndarray:
    """Euclidean projection of ``y`` onto ``{lower <= x <= upper, w.x = c}``.

    The minimizer has the form ``clip(y + lam * w, lower, upper)`` with ``lam``
    chosen so the hyperplane holds; ``w.clip(...)`` is nondecreasing in
    ``lam``, so bisection brackets it. A final exact solve on the free set
    removes the bisection residual.

    Raises
    ------
    InfeasibleProblem
        If ``w.lower > c`` or ``w.upper < c`` beyond ``tol``.
    """
    y = np.asarray(y, dtype=float)
    l = np.asarray(lower, dtype=float)
    u = np.asarray(upper, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("hyperplane weights must be positive")
    if np.any(l > u):
        raise InfeasibleProblem("lower bound exceeds upper bound")
    wl, wu = float(w @ l), float(w @ u)
    slack = tol + 4 * np.finfo(float).eps * max(abs(c), wu)
    if wl > c + slack:
        raise InfeasibleProblem(f"w.lower = {wl!r} > c = {c!r}")
    if wu < c - slack:
        raise InfeasibleProblem(f"w.upper = {wu!r} < c = {c!r}")
    if wl >= c:
        return l.copy()
    if wu <= c:
        return u.copy()

    if np.all((y >= l) & (y <= u)) and abs(w @ y - c) <= tol:
        return y.copy()

    def excess(lam):
        return float(w @ np.clip(y + lam * w, l, u)) - c

    lo = float(np.min((l - y) / w)) - 1.0
    hi = float(np.max((u - y) / w)) + 1.0
    lam = 0.5 * (lo + hi)
    for _ in range(200):
        lam = 0.5 * (lo + hi)
        r = excess(lam)
        if abs(r) <= tol:
            break
        if r > 0:
            hi = lam
        else:
            lo = lam
    x = np.clip(y + lam * w, l, u)

    free = (y + lam * w > l) & (y + lam * w < u)
    if np.any(free):
        fixed_part = float(w[~free] @ x[~free])
        lam_exact = (c - fixed_part - float(w[free] @ y[free])) / float(w[free] @ w[free])
        x_exact = np.clip(y + lam_exact * w, l, u)
        if abs(w @ x_exact - c) <= abs(w @ x - c):
            x = x_exact
    return x


def _check_finite(value, grad, iteration):
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise SolverError(f"non-finite objective or gradient at inner iteration {iteration}")


def solve_update(problem: UpdateProblem, settings: SolverSettings | None = None) -> SolverResult:
    """Minimize the scheme objective over the box and the volume hyperplane.

    Works on the variance (squared objective): same minimizers, smooth at the
    optimum. Steps follow Barzilai-Borwein lengths, projected onto the
    feasible set, with monotone Armijo backtracking along the projected
    direction.
    """
    s = settings or SolverSettings()
    w = problem.lengths
    c = problem.hyperplane_target
    l, u = problem.lower_bounds, problem.upper_bounds
    tol_plane = s.projection_tol / problem.height_H

    def project(v):
        return project_box_hyperplane(v, l, u, w, c, tol_plane)

    t = project(problem.t_start)
    f, g = problem.variance(t)
    _check_finite(f, g, 0)
    history = [float(np.sqrt(f))]
    gmax = float(np.max(np.abs(g)))
    alpha = s.step_init / gmax if gmax > 0 else s.step_init
    converged = False
    iters = 0
    while iters < s.max_inner_iters:
        if f == 0.0 or gmax == 0.0:
            converged = True
            break
        d = project(t - alpha * g) - t
        slope = float(g @ d)
        if np.max(np.abs(d)) < s.stagnation_tol or slope >= 0:
            # slope >= 0 only from roundoff at the optimum
            converged = True
            break
        lam = 1.0
        while True:
            t_new = np.clip(t + lam * d, l, u)
            f_new, g_new = problem.variance(t_new)
            if np.isfinite(f_new) and f_new <= f + s.armijo_c * lam * slope:
                break
            lam *= s.backtrack_factor
            if lam * np.max(np.abs(d)) < 1e-3 * s.stagnation_tol:
                break
        if not (np.isfinite(f_new) and f_new <= f):
            converged = True
            break
        iters += 1
        _check_finite(f_new, g_new, iters)
        step = t_new - t
        sy = float(step @ (g_new - g))
        alpha = float(step @ step) / sy if sy > 0 else 10.0 * alpha
        t, f, g = t_new, f_new, g_new
        gmax = float(np.max(np.abs(g)))
        history.append(float(np.sqrt(f)))
        if np.max(np.abs(step)) < s.stagnation_tol:
            converged = True
            break
    _log.debug("solve_update: %d iterations, objective %.3e -> %.3e", iters, history[0], history[-1])
    return SolverResult(
        t_next=t,
        objective_final=problem.objective(t),
        inner_iterations=iters,
        converged=converged,
        objective_history=history,
    )


def _batch_objective(scheme: Scheme, T: np.ndarray, E: np.ndarray, L: np.ndarray) -> np.ndarray:
    if scheme is Scheme.SCHEME1:
        return np.std(E / (L * np.maximum(T, DENSITY_FLOOR)), axis=1)
    A = L * T
    E_tot = E.sum()
    share = E / E_tot if E_tot > 0 else np.full(E.shape, 1.0 / len(E))
    return np.std(A / A.sum(axis=1, keepdims=True) - share, axis=1)


def brute_force_oracle(problem: UpdateProblem, resolution: float = 1e-3,
                       max_points: int = 50_000_000) -> np.ndarray:
    """Grid-search minimizer over the feasible set, for testing the solver.

    One coordinate (the one with the widest weighted range) is eliminated
    through the hyperplane; the others run over a grid of spacing
    ``resolution`` spanning their bounds.
    """
    n = problem.n
    if n > 4:
        raise ValueError(f"brute force oracle supports n <= 4, got {n}")
    l, u, w = problem.lower_bounds, problem.upper_bounds, problem.lengths
    c = problem.hyperplane_target
    if n == 1:
        return np.array([c / w[0]])

    k = int(np.argmax(w * (u - l)))
    others = [j for j in range(n) if j != k]
    axes = []
    for j in others:
        g = np.arange(l[j], u[j], resolution)
        axes.append(np.append(g, u[j]))
    total = int(np.prod([len(a) for a in axes]))
    if total > max_points:
        raise ValueError(f"grid of {total} points exceeds max_points={max_points}")

    E, L = problem.energy_prev, problem.lengths
    slack = 1e-12 * max(1.0, abs(c))
    best_val, best = np.inf, None
    if len(axes) > 1:
        rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, len(axes) - 1)
    else:
        rest = np.empty((1, 0))
    for head in axes[0]:
        pts = np.empty((len(rest), n))
        pts[:, others[0]] = head
        pts[:, others[1:]] = rest
        pts[:, k] = (c - pts[:, others] @ w[others]) / w[k]
        ok = (pts[:, k] >= l[k] - slack) & (pts[:, k] <= u[k] + slack)
        if not np.any(ok):
            continue
        pts = pts[ok]
        pts[:, k] = np.clip(pts[:, k], l[k], u[k])
        vals = _batch_objective(problem.scheme, pts, E, L)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best = float(vals[i]), pts[i].copy()
    if best is None:
        raise InfeasibleProblem("no grid point is feasible at this resolution")
    return best
