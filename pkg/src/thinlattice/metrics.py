"""Per-iteration performance metrics: specific energy absorption and mean
wall connectedness."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class PerformanceRecord:
    sea_per_volume: float
    sea_per_mass: float | None
    mwc: float
    total_energy: float
    external_work: float
    damage_dissipation: float

    def to_dict(self) -> dict:
        return asdict(self)


def compute_sea(E, V_star: float, density: float | None = None) -> tuple[float, float | None]:
    """Total energy over target volume (J/mm^3), and over mass (kJ/kg) if
    ``density`` (kg/mm^3) is given."""
    if not V_star > 0:
        raise ValueError(f"V_star must be > 0, got {V_star!r}")
    total = float(np.sum(E))
    per_volume = total / V_star
    if density is None:
        return per_volume, None
    if not density > 0:
        raise ValueError(f"density must be > 0, got {density!r}")
    return per_volume, total / (density * V_star) / 1000.0


def compute_mwc(undamaged_layers, N_z: int, alive=None, alive_only: bool = False) -> float:
    """Mean over walls of the fraction of fully undamaged element layers.

    Killed walls (``alive`` false) count as fully damaged, or are dropped
    from the mean with ``alive_only``.
    """
    if N_z < 1:
        raise ValueError("N_z must be >= 1")
    layers = np.asarray(undamaged_layers, dtype=int)
    if np.any(layers < 0) or np.any(layers > N_z):
        raise ValueError(f"undamaged layer counts must lie in [0, {N_z}]")
    if alive is not None:
        alive = np.asarray(alive, dtype=bool)
        if alive_only:
            layers = layers[alive]
        else:
            layers = np.where(alive, layers, 0)
    if layers.size == 0:
        raise ValueError("MWC needs at least one wall")
    return float(np.mean(layers / N_z))


def performance(report, V_star: float, N_z: int, density: float | None = None,
                alive=None, alive_only: bool = False) -> PerformanceRecord:
    sea_v, sea_m = compute_sea(report.wall_energy, V_star, density)
    return PerformanceRecord(
        sea_per_volume=sea_v,
        sea_per_mass=sea_m,
        mwc=compute_mwc(report.undamaged_layers, N_z, alive, alive_only),
        total_energy=float(np.sum(report.wall_energy)),
        external_work=report.external_work,
        damage_dissipation=report.damage_dissipation,
    )
