"""Thickness-update subproblems.

Both schemes minimize the spread (population standard deviation) of a
per-wall quantity built from the previous iteration's energies ``E`` and the
candidate projection areas ``A = L * t``:

* scheme 1: energy density ``E_j / A_j``
* scheme 2: sensitivity ``A_j / sum(A) - E_j / sum(E)``

Both reach zero at ``t_j = c * E_j / L_j``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

#: Thickness assigned to removed (soft-killed) walls, mm.
KILLED_THICKNESS = 1e-6

#: Lower floor on t inside the scheme-1 objective when a bound sits at zero.
DENSITY_FLOOR = 1e-9


class Scheme(str, Enum):
    SCHEME1 = "scheme1"
    SCHEME2 = "scheme2"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        if value in (1, "1"):
            return cls.SCHEME1
        if value in (2, "2"):
            return cls.SCHEME2
        return cls(value)


@dataclass(frozen=True)
class ThicknessField:
    """Per-wall thickness with soft-kill status."""

    values: np.ndarray
    alive: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        alive = np.asarray(self.alive, dtype=bool)
        if values.shape != alive.shape or values.ndim != 1:
            raise ValueError("values and alive must be 1-D arrays of equal length")
        if np.any(values < 0):
            raise ValueError("thickness values must be >= 0")
        if np.any(values[~alive] != KILLED_THICKNESS):
            raise ValueError(f"killed walls must carry thickness {KILLED_THICKNESS}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "alive", alive)

    @classmethod
    def all_alive(cls, values) -> "ThicknessField":
        values = np.asarray(values, dtype=float)
        return cls(values, np.ones(values.shape, dtype=bool))

    def __len__(self):
        return len(self.values)


def _as_arrays(t, E, L):
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    L = np.asarray(L, dtype=float)
    if not (t.shape == E.shape == L.shape) or t.ndim != 1:
        raise ValueError(f"shape mismatch: t{t.shape}, E{E.shape}, L{L.shape}")
    return t, E, L


def _scheme1_variance(t, E, L):
    if np.any(t <= 0):
        raise ValueError("scheme 1 requires t > 0 for every wall")
    x = E / (L * t)
    d = x - x.mean()
    var = float(np.mean(d * d))
    grad = (2.0 / len(t)) * d * (-x / t)
    return var, grad


def _scheme2_variance(t, E, L):
    A = L * t
    S = A.sum()
    if S <= 0:
        raise ValueError("scheme 2 requires a positive total area")
    n = len(t)
    a = A / S
    E_tot = E.sum()
    e = E / E_tot if E_tot > 0 else np.full(n, 1.0 / n)
    alpha = a - e
    d = alpha - alpha.mean()
    var = float(np.mean(d * d))
    g = (2.0 / n) * d
    grad = L * (g - g @ a) / S
    return var, grad


_VARIANCE = {Scheme.SCHEME1: _scheme1_variance, Scheme.SCHEME2: _scheme2_variance}


def objective_variance(scheme, t, E, L) -> tuple[float, np.ndarray]:
    """Squared objective and its gradient in ``t``; same minimizers, smooth at 0."""
    t, E, L = _as_arrays(t, E, L)
    return _VARIANCE[Scheme.parse(scheme)](t, E, L)


def _std_and_grad(scheme, t, E, L):
    var, gvar = objective_variance(scheme, t, E, L)
    std = np.sqrt(var)
    if std == 0.0:
        return 0.0, np.zeros_like(gvar)
    return float(std), gvar / (2.0 * std)


def scheme1_objective(t, E_prev, L) -> float:
    """Population std of ``E_j / (L_j t_j)``."""
    return _std_and_grad(Scheme.SCHEME1, t, E_prev, L)[0]


def scheme1_gradient(t, E_prev, L) -> np.ndarray:
    """Analytic gradient of :func:`scheme1_objective`; zero where the std is 0."""
    return _std_and_grad(Scheme.SCHEME1, t, E_prev, L)[1]


def scheme2_objective(t, E_prev, L) -> float:
    """Population std of ``A_j / sum(A) - E_j / E_tot``.

    With ``E_tot = 0`` the energy share is taken as uniform ``1/n``.
    """
    return _std_and_grad(Scheme.SCHEME2, t, E_prev, L)[0]


def scheme2_gradient(t, E_prev, L) -> np.ndarray:
    return _std_and_grad(Scheme.SCHEME2, t, E_prev, L)[1]


def build_bounds(t_current, dt_max: float, t_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Moving box ``[max(0, t - dt_max), min(t + dt_max, t_max)]``.

    Callers pass only the live design variables; killed walls stay pinned.
    """
    if dt_max <= 0 or t_max <= 0:
        raise ValueError("dt_max and t_max must be positive")
    t = np.asarray(t_current, dtype=float)
    return np.maximum(0.0, t - dt_max), np.minimum(t + dt_max, t_max)


def volume_residual(t, L, H: float, V_star: float) -> float:
    """Signed residual ``H * sum(L t) - V*`` in mm^3."""
    t = np.asarray(t, dtype=float)
    L = np.asarray(L, dtype=float)
    return float(H * np.sum(L * t) - V_star)


@dataclass(frozen=True)
class UpdateProblem:
    """One design iteration's nonlinear program.

    ``lengths`` are the effective wall lengths used both in the objective and
    in the volume budget (in periodic mode: class length times image count).
    """

    scheme: Scheme
    energy_prev: np.ndarray
    lengths: np.ndarray
    height_H: float
    target_volume: float
    lower_bounds: np.ndarray
    upper_bounds: np.ndarray
    t_start: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        for name in ("energy_prev", "lengths", "lower_bounds", "upper_bounds", "t_start"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.lengths)
        if n < 1:
            raise ValueError("an update problem needs at least one variable")
        for name in ("energy_prev", "lower_bounds", "upper_bounds", "t_start"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")
        if np.any(self.lengths <= 0):
            raise ValueError("lengths must be positive")
        if np.any(self.energy_prev < 0):
            raise ValueError("energy_prev must be >= 0")
        if np.any(self.lower_bounds > self.upper_bounds):
            raise ValueError("lower bound exceeds upper bound")
        if self.height_H <= 0:
            raise ValueError("height_H must be positive")

    @property
    def n(self) -> int:
        return len(self.lengths)

    @property
    def hyperplane_target(self) -> float:
        """Target of ``sum(L t)`` (mm^2)."""
        return self.target_volume / self.height_H

    def objective(self, t) -> float:
        return float(np.sqrt(self.variance(t)[0]))

    def variance(self, t) -> tuple[float, np.ndarray]:
        t = np.asarray(t, dtype=float)
        if self.scheme is Scheme.SCHEME1:
            t = np.maximum(t, DENSITY_FLOOR)
        return objective_variance(self.scheme, t, self.energy_prev, self.lengths)
