"""Ground-structure design space for 2D-extruded lattices.

The in-plane cross section ``[0, L] x [0, W]`` is partitioned into
``cells_x x cells_y`` rectangular cells. Every cell edge is a wall, extruded
through the height ``H`` and discretized with ``layers_z`` element layers.

Wall ordering is fixed: all horizontal walls row-major by ``(iy, ix)``, then
all vertical walls row-major by ``(iy, ix)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when a geometry or input parameter is out of range."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class Orientation(str, Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass(frozen=True)
class Wall:
    id: int
    orientation: Orientation
    grid_pos: tuple[int, int]
    length: float
    designable: bool
    midpoint: tuple[float, float]

    @property
    def endpoints(self) -> tuple[tuple[int, int], tuple[int, int]]:
        """Integer lattice coordinates of both ends."""
        ix, iy = self.grid_pos
        if self.orientation is Orientation.HORIZONTAL:
            return (ix, iy), (ix + 1, iy)
        return (ix, iy), (ix, iy + 1)


@dataclass(frozen=True)
class DesignSpace:
    length_L: float
    width_W: float
    height_H: float
    cells_x: int
    cells_y: int
    layers_z: int
    walls: tuple[Wall, ...]
    boundary_thickness: float | None = None
    origin: tuple[float, float] = (0.0, 0.0)

    @property
    def n_walls(self) -> int:
        return len(self.walls)

    @property
    def cell_size(self) -> tuple[float, float]:
        return self.length_L / self.cells_x, self.width_W / self.cells_y

    @property
    def lengths(self) -> np.ndarray:
        return np.array([w.length for w in self.walls], dtype=float)

    @property
    def designable(self) -> np.ndarray:
        return np.array([w.designable for w in self.walls], dtype=bool)

    @property
    def midpoints(self) -> np.ndarray:
        return np.array([w.midpoint for w in self.walls], dtype=float).reshape(-1, 2)

    def is_perimeter(self, wall: Wall) -> bool:
        ix, iy = wall.grid_pos
        if wall.orientation is Orientation.HORIZONTAL:
            return iy == 0 or iy == self.cells_y
        return ix == 0 or ix == self.cells_x

    def wall_index(self, orientation: Orientation, ix: int, iy: int) -> int:
        """Dense id of the wall at ``(ix, iy)`` with the given orientation."""
        nx, ny = self.cells_x, self.cells_y
        if orientation is Orientation.HORIZONTAL:
            if not (0 <= ix < nx and 0 <= iy <= ny):
                raise IndexError((orientation.value, ix, iy))
            return iy * nx + ix
        if not (0 <= ix <= nx and 0 <= iy < ny):
            raise IndexError((orientation.value, ix, iy))
        return nx * (ny + 1) + iy * (nx + 1) + ix


def _positive(name: str, value: float) -> float:
    v = float(value)
    if not np.isfinite(v) or v <= 0:
        raise ValidationError(name, f"must be > 0, got {value!r}")
    return v


def _count(name: str, value: int) -> int:
    if isinstance(value, bool) or int(value) != value or int(value) < 1:
        raise ValidationError(name, f"must be an integer >= 1, got {value!r}")
    return int(value)


def build_design_space(
    length_L: float,
    width_W: float,
    height_H: float,
    cells_x: int,
    cells_y: int,
    layers_z: int = 1,
    boundary_thickness: float | None = None,
    origin: tuple[float, float] = (0.0, 0.0),
) -> DesignSpace:
    """Partition the cross section and enumerate its walls.

    Perimeter walls are nondesignable exactly when ``boundary_thickness`` is
    given.
    """
    L = _positive("length_L", length_L)
    W = _positive("width_W", width_W)
    H = _positive("height_H", height_H)
    nx = _count("cells_x", cells_x)
    ny = _count("cells_y", cells_y)
    nz = _count("layers_z", layers_z)
    if boundary_thickness is not None:
        boundary_thickness = _positive("boundary_thickness", boundary_thickness)
    x0, y0 = (float(origin[0]), float(origin[1]))

    dx, dy = L / nx, W / ny
    fixed_perimeter = boundary_thickness is not None
    walls: list[Wall] = []
    for iy in range(ny + 1):
        for ix in range(nx):
            perim = iy == 0 or iy == ny
            walls.append(Wall(
                id=len(walls),
                orientation=Orientation.HORIZONTAL,
                grid_pos=(ix, iy),
                length=dx,
                designable=not (perim and fixed_perimeter),
                midpoint=(x0 + (ix + 0.5) * dx, y0 + iy * dy),
            ))
    for iy in range(ny):
        for ix in range(nx + 1):
            perim = ix == 0 or ix == nx
            walls.append(Wall(
                id=len(walls),
                orientation=Orientation.VERTICAL,
                grid_pos=(ix, iy),
                length=dy,
                designable=not (perim and fixed_perimeter),
                midpoint=(x0 + ix * dx, y0 + (iy + 0.5) * dy),
            ))
    return DesignSpace(
        length_L=L, width_W=W, height_H=H,
        cells_x=nx, cells_y=ny, layers_z=nz,
        walls=tuple(walls),
        boundary_thickness=boundary_thickness,
        origin=(x0, y0),
    )


def wall_areas(ds: DesignSpace, t: Sequence[float]) -> np.ndarray:
    """Projection areas ``A_j = L_j * t_j`` in mm^2."""
    t = np.asarray(t, dtype=float)
    if t.shape != (ds.n_walls,):
        raise ValidationError("t", f"expected {ds.n_walls} thicknesses, got shape {t.shape}")
    if np.any(t < 0):
        raise ValidationError("t", "thicknesses must be >= 0")
    return ds.lengths * t


@dataclass(frozen=True)
class MeshSpec:
    """Shell mesh of the extruded ground structure.

    Node and element ids are 1-based; ``shells`` entries are
    ``(element_id, wall_id, (n1, n2, n3, n4))``.
    """

    nodes: tuple[tuple[int, float, float, float], ...]
    shells: tuple[tuple[int, int, tuple[int, int, int, int]], ...]
    sections: Mapping[int, float] = field(default_factory=dict)
    elems_per_wall_inplane: int = 1

    def elements_of_wall(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for eid, wid, _ in self.shells:
            out.setdefault(wid, []).append(eid)
        return out

    def with_thickness(self, thickness: Iterable[float]) -> "MeshSpec":
        """Copy of this mesh with one section per wall at the given thickness."""
        t = [float(v) for v in thickness]
        wall_ids = sorted(self.elements_of_wall())
        if len(t) != len(wall_ids):
            raise ValidationError("thickness", f"expected {len(wall_ids)} values, got {len(t)}")
        return MeshSpec(self.nodes, self.shells, {w: t[w] for w in wall_ids},
                        self.elems_per_wall_inplane)


def generate_mesh(
    ds: DesignSpace,
    elems_per_wall_inplane: int = 2,
    thickness: Sequence[float] | None = None,
) -> MeshSpec:
    """Mesh every wall with ``elems_per_wall_inplane x layers_z`` quad shells.

    Nodes are keyed on an integer sub-grid, so endpoints shared by adjacent
    walls map to the same node id. Without ``thickness`` the section map is
    left empty; fill it with :meth:`MeshSpec.with_thickness`.
    """
    e = _count("elems_per_wall_inplane", elems_per_wall_inplane)
    nz = ds.layers_z
    keys: set[tuple[int, int]] = set()
    wall_points: list[list[tuple[int, int]]] = []
    for w in ds.walls:
        (ax, ay), (bx, by) = w.endpoints
        pts = [(ax * e + k * (bx - ax), ay * e + k * (by - ay)) for k in range(e + 1)]
        keys.update(pts)
        wall_points.append(pts)

    hx = ds.length_L / (ds.cells_x * e)
    hy = ds.width_W / (ds.cells_y * e)
    hz = ds.height_H / nz
    x0, y0 = ds.origin
    plane = sorted(keys, key=lambda p: (p[1], p[0]))
    node_id: dict[tuple[int, int, int], int] = {}
    nodes = []
    for kz in range(nz + 1):
        z = ds.height_H if kz == nz else kz * hz
        for gx, gy in plane:
            nid = len(nodes) + 1
            node_id[(gx, gy, kz)] = nid
            x = x0 + (ds.length_L if gx == ds.cells_x * e else gx * hx)
            y = y0 + (ds.width_W if gy == ds.cells_y * e else gy * hy)
            nodes.append((nid, x, y, z))

    shells = []
    for w, pts in zip(ds.walls, wall_points):
        for kz in range(nz):
            for k in range(e):
                (ax, ay), (bx, by) = pts[k], pts[k + 1]
                conn = (node_id[(ax, ay, kz)], node_id[(bx, by, kz)],
                        node_id[(bx, by, kz + 1)], node_id[(ax, ay, kz + 1)])
                shells.append((len(shells) + 1, w.id, conn))

    mesh = MeshSpec(tuple(nodes), tuple(shells), {}, e)
    if thickness is not None:
        mesh = mesh.with_thickness(thickness)
    return mesh
