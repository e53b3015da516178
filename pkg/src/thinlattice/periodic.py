"""Unit-cell aggregation and scatter for periodic designs.

With ``units_x x units_y`` unit cells, a wall's class is its orientation plus
its grid position reduced modulo the unit-cell period in every direction that
holds more than one unit cell. Directions with a single unit cell are not
reduced, so ``1 x 1`` is the identity map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import DesignSpace, Orientation, ValidationError


@dataclass(frozen=True)
class PeriodicMap:
    units_x: int
    units_y: int
    class_of: np.ndarray
    class_count: int
    images_per_class: tuple[tuple[int, ...], ...]
    class_designable: np.ndarray
    class_lengths: np.ndarray

    @property
    def n_full(self) -> int:
        return len(self.class_of)

    @property
    def image_counts(self) -> np.ndarray:
        return np.array([len(im) for im in self.images_per_class], dtype=int)

    def matrix(self) -> np.ndarray:
        """Dense 0/1 aggregation matrix, shape ``(class_count, n_full)``."""
        A = np.zeros((self.class_count, self.n_full))
        A[self.class_of, np.arange(self.n_full)] = 1.0
        return A


def build_periodic_map(ds: DesignSpace, units_x: int = 1, units_y: int = 1) -> PeriodicMap:
    for name, units, cells in (("units_x", units_x, ds.cells_x), ("units_y", units_y, ds.cells_y)):
        if int(units) != units or units < 1:
            raise ValidationError(name, f"must be an integer >= 1, got {units!r}")
        if cells % units:
            raise ValidationError(name, f"{cells} cells are not divisible into {units} unit cells")
    px = ds.cells_x // units_x if units_x > 1 else None
    py = ds.cells_y // units_y if units_y > 1 else None

    def key(w):
        ix, iy = w.grid_pos
        rx = ix % px if px else ix
        ry = iy % py if py else iy
        return (0 if w.orientation is Orientation.HORIZONTAL else 1, ry, rx)

    keys = [key(w) for w in ds.walls]
    ordered = sorted(set(keys))
    index = {k: i for i, k in enumerate(ordered)}
    class_of = np.array([index[k] for k in keys], dtype=int)
    images = [[] for _ in ordered]
    for j, cls in enumerate(class_of):
        images[cls].append(j)

    designable = ds.designable
    class_designable = np.array([all(designable[j] for j in im) for im in images], dtype=bool)
    lengths = ds.lengths
    class_lengths = np.array([lengths[im[0]] for im in images])
    return PeriodicMap(
        units_x=int(units_x),
        units_y=int(units_y),
        class_of=class_of,
        class_count=len(ordered),
        images_per_class=tuple(tuple(im) for im in images),
        class_designable=class_designable,
        class_lengths=class_lengths,
    )


def aggregate_energy(pmap: PeriodicMap, E_full) -> np.ndarray:
    """Sum wall energies over the periodic images of each class."""
    E_full = np.asarray(E_full, dtype=float)
    if E_full.shape != (pmap.n_full,):
        raise ValidationError("E_full", f"expected {pmap.n_full} values, got shape {E_full.shape}")
    return np.bincount(pmap.class_of, weights=E_full, minlength=pmap.class_count)


def scatter_thickness(pmap: PeriodicMap, t_uc) -> np.ndarray:
    """Broadcast unit-cell thicknesses to every periodic image."""
    t_uc = np.asarray(t_uc, dtype=float)
    if t_uc.shape != (pmap.class_count,):
        raise ValidationError("t_uc", f"expected {pmap.class_count} values, got shape {t_uc.shape}")
    return t_uc[pmap.class_of]
