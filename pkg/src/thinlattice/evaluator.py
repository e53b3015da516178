"""Simulation evaluators producing per-wall absorbed energies.

An evaluator is any callable ``(DesignSpace, ThicknessField) -> EnergyReport``.
Two are provided: a closed-form surrogate for desk-scale runs, and an adapter
that exchanges files with an external solver process.

File formats
------------
Solver input (UTF-8, LF)::

    *NODE
    id, x, y, z
    *ELEMENT, TYPE=SHELL4
    id, n1, n2, n3, n4
    *SECTION, WALL=<wall_id>, THICKNESS=<t>
    e1, e2, ...            (at most 16 ids per line)

Solver output CSV::

    wall_id,energy,undamaged_layers
    0,1.25,10
    ...
    #TOTALS,<external_work>,<damage_dissipation>,<completed>
"""
from __future__ import annotations

import csv
import io
import logging
import math
import shlex
import subprocess
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .lattice import DesignSpace, MeshSpec, ValidationError, generate_mesh
from .schemes import ThicknessField

_log = logging.getLogger(__name__)

CSV_HEADER = ["wall_id", "energy", "undamaged_layers"]
TRAILER_TAG = "#TOTALS"
IDS_PER_LINE = 16


class EvaluatorError(RuntimeError):
    """A hard evaluator failure: no usable energies were produced."""


class OutputFormatError(EvaluatorError):
    def __init__(self, path, line: int, message: str):
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass(frozen=True)
class EnergyReport:
    wall_energy: np.ndarray
    undamaged_layers: np.ndarray
    external_work: float = 0.0
    damage_dissipation: float = 0.0
    completed: bool = True

    def __post_init__(self):
        E = np.asarray(self.wall_energy, dtype=float)
        layers = np.asarray(self.undamaged_layers, dtype=int)
        if E.shape != layers.shape or E.ndim != 1:
            raise ValueError("wall_energy and undamaged_layers must be 1-D and equal length")
        if np.any(E < 0) or not np.all(np.isfinite(E)):
            raise ValueError("wall energies must be finite and >= 0")
        if np.any(layers < 0):
            raise ValueError("undamaged_layers must be >= 0")
        object.__setattr__(self, "wall_energy", E)
        object.__setattr__(self, "undamaged_layers", layers)
        object.__setattr__(self, "external_work", float(self.external_work))
        object.__setattr__(self, "damage_dissipation", float(self.damage_dissipation))
        object.__setattr__(self, "completed", bool(self.completed))


# --------------------------------------------------------------------------
# surrogate
# --------------------------------------------------------------------------

class LoadMode(str, Enum):
    FIXED_DISPLACEMENT = "fixed_displacement"
    FIXED_LOAD = "fixed_load"


@dataclass(frozen=True)
class SurrogateParams:
    """Constants of the closed-form surrogate.

    ``load_center`` of ``None`` means the middle of the cross section.
    """

    load_center: tuple[float, float] | None = None
    kernel_sigma: float = 20.0
    t_ref: float = 1.0
    damage_kappa: float = 0.5
    mode: LoadMode = LoadMode.FIXED_DISPLACEMENT
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", LoadMode(self.mode))
        for name in ("kernel_sigma", "t_ref", "amplitude"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.damage_kappa < 0:
            raise ValueError("damage_kappa must be >= 0")


def _as_field(t) -> ThicknessField:
    return t if isinstance(t, ThicknessField) else ThicknessField.all_alive(t)


def evaluate_surrogate(ds: DesignSpace, t, params: SurrogateParams) -> EnergyReport:
    """Gaussian-kernel surrogate of a loaded lattice.

    Wall ``j`` sits at distance ``d_j`` from the load; its exposure is
    ``phi_j = exp(-d_j^2 / (2 sigma^2))`` and its stiffness share
    ``psi_j = t_j / (t_j + t_ref)``. Under fixed displacement stiff walls
    absorb ``amp * L_j * phi_j * psi_j``; under fixed load compliant walls
    absorb ``amp * L_j * phi_j * (1 - psi_j)``. Damage fraction of a live wall
    is ``clip(kappa * phi_j / t_j - 1, 0, 1)``; a killed wall within ``3 sigma``
    of the load counts as fully damaged.
    """
    field = _as_field(t)
    if len(field) != ds.n_walls:
        raise ValidationError("t", f"expected {ds.n_walls} walls, got {len(field)}")
    p = params
    if p.load_center is None:
        center = np.array([ds.origin[0] + ds.length_L / 2, ds.origin[1] + ds.width_W / 2])
    else:
        center = np.asarray(p.load_center, dtype=float)
    dist2 = np.sum((ds.midpoints - center) ** 2, axis=1)
    phi = np.exp(-dist2 / (2.0 * p.kernel_sigma ** 2))
    L = ds.lengths
    tv = field.values
    psi = tv / (tv + p.t_ref)
    share = psi if p.mode is LoadMode.FIXED_DISPLACEMENT else 1.0 - psi
    energy = p.amplitude * L * phi * share

    with np.errstate(divide="ignore"):
        delta = np.clip(p.damage_kappa * phi / tv - 1.0, 0.0, 1.0)
    in_reach = dist2 <= (3.0 * p.kernel_sigma) ** 2
    delta = np.where(field.alive, delta, np.where(in_reach, 1.0, 0.0))
    layers = np.floor((1.0 - delta) * ds.layers_z + 0.5).astype(int)
    damage = 0.1 * p.amplitude * float(np.sum(L * phi * delta))
    return EnergyReport(
        wall_energy=energy,
        undamaged_layers=layers,
        external_work=float(energy.sum()) + damage,
        damage_dissipation=damage,
        completed=True,
    )


class SurrogateEvaluator:
    def __init__(self, params: SurrogateParams | None = None):
        self.params = params or SurrogateParams()

    def __call__(self, ds: DesignSpace, t) -> EnergyReport:
        return evaluate_surrogate(ds, t, self.params)


# --------------------------------------------------------------------------
# solver input file
# --------------------------------------------------------------------------

def _num(x: float) -> str:
    return format(float(x) + 0.0, ".9g")


def format_solver_input(mesh: MeshSpec) -> str:
    by_wall = mesh.elements_of_wall()
    if not mesh.sections:
        raise ValidationError("sections", "mesh has no section thicknesses")
    missing = sorted(set(by_wall) - set(mesh.sections))
    if missing:
        raise ValidationError("sections", f"no thickness for walls {missing[:10]}")
    extra = sorted(set(mesh.sections) - set(by_wall))
    if extra:
        raise ValidationError("sections", f"sections reference unknown walls {extra[:10]}")

    out = ["*NODE"]
    out += [f"{nid}, {_num(x)}, {_num(y)}, {_num(z)}" for nid, x, y, z in mesh.nodes]
    out.append("*ELEMENT, TYPE=SHELL4")
    out += [f"{eid}, {n[0]}, {n[1]}, {n[2]}, {n[3]}" for eid, _, n in mesh.shells]
    for wid in sorted(mesh.sections):
        out.append(f"*SECTION, WALL={wid}, THICKNESS={_num(mesh.sections[wid])}")
        ids = by_wall[wid]
        for k in range(0, len(ids), IDS_PER_LINE):
            out.append(", ".join(str(e) for e in ids[k:k + IDS_PER_LINE]))
    return "\n".join(out) + "\n"


def write_solver_input(mesh: MeshSpec, path) -> Path:
    path = Path(path)
    text = format_solver_input(mesh)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write solver input {path}: {exc}") from exc
    return path


def parse_solver_input(path) -> MeshSpec:
    """Read a file written by :func:`write_solver_input` back into a MeshSpec."""
    path = Path(path)
    nodes, elements, sections, wall_of = [], [], {}, {}
    block, wall = None, None
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("*"):
            head, *opts = [s.strip() for s in line.split(",")]
            kv = dict(o.split("=", 1) for o in opts)
            block = head.upper()
            if block == "*SECTION":
                wall = int(kv["WALL"])
                sections[wall] = float(kv["THICKNESS"])
            elif block not in ("*NODE", "*ELEMENT"):
                raise OutputFormatError(path, lineno, f"unknown keyword {head}")
            continue
        fields = [s.strip() for s in line.split(",")]
        try:
            if block == "*NODE":
                nodes.append((int(fields[0]), float(fields[1]), float(fields[2]), float(fields[3])))
            elif block == "*ELEMENT":
                elements.append((int(fields[0]), tuple(int(f) for f in fields[1:5])))
            elif block == "*SECTION":
                for f in fields:
                    wall_of[int(f)] = wall
            else:
                raise ValueError("data line before any keyword")
        except (ValueError, IndexError) as exc:
            raise OutputFormatError(path, lineno, str(exc)) from exc

    shells = tuple((eid, wall_of[eid], conn) for eid, conn in elements)
    n_layers = len({z for *_, z in nodes}) - 1
    per_wall = len(shells) // max(len(sections), 1)
    epw = per_wall // n_layers if n_layers > 0 else per_wall
    return MeshSpec(tuple(nodes), shells, sections, epw)


# --------------------------------------------------------------------------
# external solver adapter
# --------------------------------------------------------------------------

def parse_energy_csv(text: str, n_walls: int, n_z: int | None = None,
                     process_ok: bool = True, source="<output>") -> EnergyReport:
    """Parse solver output; tolerate truncation when the run did not complete.

    A run counts as completed when the process exited cleanly and the trailer
    (if any) says so. Completed runs must report every wall. Incomplete runs
    keep whatever rows were written; missing walls get zero energy and zero
    undamaged layers, and a cut-off final line is dropped.
    """
    lines = text.split("\n")
    cut_tail = lines[-1] != ""
    if not cut_tail:
        lines = lines[:-1]

    rows: list[tuple[int, list[str]]] = []
    trailer = None
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        fields = next(csv.reader(io.StringIO(line)))
        if fields and fields[0].strip() == TRAILER_TAG:
            trailer = (lineno, fields)
            continue
        rows.append((lineno, fields))

    completed = process_ok
    external_work = damage = 0.0
    if trailer is not None:
        lineno, fields = trailer
        try:
            external_work, damage = float(fields[1]), float(fields[2])
            flag = fields[3].strip().lower()
        except (IndexError, ValueError) as exc:
            raise OutputFormatError(source, lineno, f"malformed trailer: {exc}") from exc
        if flag not in ("true", "false", "1", "0"):
            raise OutputFormatError(source, lineno, f"completed flag {fields[3]!r} is not a boolean")
        completed = completed and flag in ("true", "1")

    last_lineno = len(lines)
    if rows and [f.strip() for f in rows[0][1]] == CSV_HEADER:
        rows = rows[1:]
    elif rows:
        lone_cut_header = not completed and cut_tail and rows[0][0] == last_lineno
        if not lone_cut_header:
            raise OutputFormatError(source, rows[0][0], f"expected header {','.join(CSV_HEADER)}")
        rows = []

    energy = np.zeros(n_walls)
    layers = np.zeros(n_walls, dtype=int)
    seen: set[int] = set()
    for lineno, fields in rows:
        try:
            if len(fields) != 3:
                raise ValueError(f"expected 3 fields, got {len(fields)}")
            wid = int(fields[0])
            e = float(fields[1])
            nl = int(fields[2])
            if not (0 <= wid < n_walls):
                raise ValueError(f"wall id {wid} out of range 0..{n_walls - 1}")
            if wid in seen:
                raise ValueError(f"duplicate wall id {wid}")
            if not math.isfinite(e) or e < 0:
                raise ValueError(f"energy {fields[1]!r} must be finite and >= 0")
            if nl < 0 or (n_z is not None and nl > n_z):
                raise ValueError(f"undamaged_layers {nl} outside 0..{n_z}")
        except ValueError as exc:
            if not completed and cut_tail and lineno == last_lineno:
                _log.warning("%s: dropping truncated final line %d", source, lineno)
                break
            raise OutputFormatError(source, lineno, str(exc)) from exc
        seen.add(wid)
        energy[wid], layers[wid] = e, nl

    if completed:
        missing = sorted(set(range(n_walls)) - seen)
        if missing:
            raise EvaluatorError(f"{source}: no row for wall id {missing[0]}"
                                 + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
        if damage > external_work:
            raise EvaluatorError(f"{source}: damage_dissipation {damage} exceeds external_work {external_work}")
    return EnergyReport(energy, layers, external_work, damage, completed)


def run_external(command_template: str, input_path, output_path, n_walls: int,
                 n_z: int | None = None, timeout: float | None = None) -> EnergyReport:
    """Run an external solver and parse its energy CSV.

    ``command_template`` is split shell-style and each token has ``{input}``
    and ``{output}`` replaced; no shell is involved. A nonzero exit code marks
    the report incomplete but is not an error as long as an output file
    exists.
    """
    if "{input}" not in command_template or "{output}" not in command_template:
        raise ValueError("command_template must contain {input} and {output} placeholders")
    input_path, output_path = Path(input_path), Path(output_path)
    args = [tok.replace("{input}", str(input_path)).replace("{output}", str(output_path))
            for tok in shlex.split(command_template)]
    output_path.unlink(missing_ok=True)
    try:
        proc = subprocess.run(args, capture_output=True, timeout=timeout, check=False)
    except subprocess.TimeoutExpired as exc:
        raise EvaluatorError(f"solver timed out after {timeout} s: {args[0]}") from exc
    except OSError as exc:
        raise EvaluatorError(f"cannot launch solver {args[0]!r}: {exc}") from exc
    if proc.returncode != 0:
        _log.warning("solver exited with code %d: %s", proc.returncode,
                     proc.stderr.decode(errors="replace").strip()[-500:])
    if not output_path.exists():
        raise EvaluatorError(f"solver produced no output file {output_path} (exit code {proc.returncode})")
    text = output_path.read_text(encoding="utf-8")
    return parse_energy_csv(text, n_walls, n_z, process_ok=proc.returncode == 0, source=output_path)


class ExternalEvaluator:
    """Writes the solver input for each design, runs the solver, reads energies."""

    def __init__(self, command_template: str, workdir, elems_per_wall_inplane: int = 2,
                 timeout: float | None = None):
        if "{input}" not in command_template or "{output}" not in command_template:
            raise ValueError("command_template must contain {input} and {output} placeholders")
        self.command_template = command_template
        self.workdir = Path(workdir)
        self.elems_per_wall_inplane = elems_per_wall_inplane
        self.timeout = timeout
        self._mesh: tuple[DesignSpace, MeshSpec] | None = None
        self.calls = 0

    def mesh_for(self, ds: DesignSpace) -> MeshSpec:
        if self._mesh is None or self._mesh[0] != ds:
            self._mesh = (ds, generate_mesh(ds, self.elems_per_wall_inplane))
        return self._mesh[1]

    def __call__(self, ds: DesignSpace, t) -> EnergyReport:
        field = _as_field(t)
        self.workdir.mkdir(parents=True, exist_ok=True)
        tag = f"{self.calls:04d}"
        self.calls += 1
        inp = write_solver_input(self.mesh_for(ds).with_thickness(field.values),
                                 self.workdir / f"design_{tag}.inp")
        out = self.workdir / f"energy_{tag}.csv"
        return run_external(self.command_template, inp, out, ds.n_walls, ds.layers_z, self.timeout)
