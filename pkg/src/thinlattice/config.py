"""Run configuration schema and YAML/JSON loading.

Units: lengths and thicknesses in mm, volumes in mm^3, energies in J,
density in kg/mm^3.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import (BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat,
                      PositiveInt, ValidationError, model_validator)

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Configuration failed validation; ``errors`` holds ``(key_path, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("\n".join(f"{path}: {msg}" for path, msg in errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometryConfig(_Strict):
    length: PositiveFloat
    width: PositiveFloat
    height: PositiveFloat
    cells_x: PositiveInt
    cells_y: PositiveInt
    layers_z: PositiveInt = 1
    boundary_thickness: Optional[PositiveFloat] = None

    @property
    def n_walls(self) -> int:
        nx, ny = self.cells_x, self.cells_y
        return nx * (ny + 1) + (nx + 1) * ny


class PeriodicConfig(_Strict):
    units_x: PositiveInt = 1
    units_y: PositiveInt = 1


class SurrogateConfig(_Strict):
    load_center: Optional[tuple[float, float]] = None
    kernel_sigma: PositiveFloat = 20.0
    t_ref: PositiveFloat = 1.0
    damage_kappa: NonNegativeFloat = 0.5
    mode: Literal["fixed_displacement", "fixed_load"] = "fixed_displacement"
    amplitude: PositiveFloat = 1.0


class ExternalConfig(_Strict):
    command: str
    timeout: Optional[PositiveFloat] = None
    elems_per_wall_inplane: PositiveInt = 2
    workdir: Optional[str] = None

    @model_validator(mode="after")
    def _placeholders(self):
        for ph in ("{input}", "{output}"):
            if ph not in self.command:
                raise ValueError(f"command must contain the {ph} placeholder")
        return self


class EvaluatorConfig(_Strict):
    kind: Literal["surrogate", "external"] = "surrogate"
    surrogate: SurrogateConfig = Field(default_factory=SurrogateConfig)
    external: Optional[ExternalConfig] = None

    @model_validator(mode="after")
    def _external_needs_command(self):
        if self.kind == "external" and self.external is None:
            raise ValueError("kind 'external' requires an 'external' section")
        return self


class SolverConfig(_Strict):
    max_inner_iters: PositiveInt = 500
    step_init: PositiveFloat = 1.0
    armijo_c: PositiveFloat = 1e-4
    backtrack_factor: float = Field(0.5, gt=0, lt=1)
    stagnation_tol: PositiveFloat = 1e-12
    projection_tol: PositiveFloat = 1e-10


class RunConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    geometry: GeometryConfig
    scheme: Literal[1, 2] = 1
    t0: Union[PositiveFloat, list[NonNegativeFloat]] = 1.0
    t_min: PositiveFloat
    t_max: PositiveFloat
    v_star: Optional[PositiveFloat] = None
    dt_max: PositiveFloat
    max_design_iterations: PositiveInt = 25
    convergence_tol: PositiveFloat = 1e-2
    budget_includes_fixed: bool = False
    mwc_alive_only: bool = False
    periodic: Optional[PeriodicConfig] = None
    evaluator: EvaluatorConfig = Field(default_factory=EvaluatorConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    density: Optional[PositiveFloat] = None
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _cross_checks(self):
        if self.t_min >= self.t_max:
            raise ValueError(f"t_min ({self.t_min}) must be less than t_max ({self.t_max})")
        if isinstance(self.t0, list) and len(self.t0) != self.geometry.n_walls:
            raise ValueError(f"t0 has {len(self.t0)} entries, geometry has {self.geometry.n_walls} walls")
        if self.periodic is not None:
            g, p = self.geometry, self.periodic
            if g.cells_x % p.units_x or g.cells_y % p.units_y:
                raise ValueError("periodic units must divide geometry.cells_x / geometry.cells_y")
        return self

    def snapshot(self) -> dict:
        return self.model_dump(mode="json")


def _format_errors(exc: ValidationError) -> list[tuple[str, str]]:
    out = []
    for err in exc.errors():
        loc = [str(p) for p in err["loc"] if not str(p).startswith("function-")]
        out.append((".".join(loc) or "<root>", err["msg"]))
    return out


def validate_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "config must be a mapping")])
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a YAML (or JSON) config and apply top-level ``overrides``."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError([("<file>", f"cannot read {path}: {exc}")]) from None
    except yaml.YAMLError as exc:
        raise ConfigError([("<file>", f"{path} is not valid YAML: {exc}")]) from None
    if data is None:
        data = {}
    if isinstance(data, dict) and overrides:
        data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    return validate_config(data)
