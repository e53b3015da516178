"""Energy-density equalizing thickness optimization for thin-walled,
2D-extruded lattice cross sections."""

__version__ = "0.1.0"

from .lattice import DesignSpace, MeshSpec, Wall, build_design_space, generate_mesh, wall_areas
from .schemes import KILLED_THICKNESS, Scheme, ThicknessField, UpdateProblem
from .optimizer import SolverResult, SolverSettings, project_box_hyperplane, solve_update
from .periodic import PeriodicMap, aggregate_energy, build_periodic_map, scatter_thickness
from .evaluator import EnergyReport, SurrogateEvaluator, SurrogateParams, evaluate_surrogate
from .metrics import PerformanceRecord, compute_mwc, compute_sea
from .config import RunConfig, load_config
from .driver import IterationRecord, RunHistory, run

__all__ = [
    "DesignSpace", "MeshSpec", "Wall", "build_design_space", "generate_mesh", "wall_areas",
    "KILLED_THICKNESS", "Scheme", "ThicknessField", "UpdateProblem",
    "SolverResult", "SolverSettings", "project_box_hyperplane", "solve_update",
    "PeriodicMap", "aggregate_energy", "build_periodic_map", "scatter_thickness",
    "EnergyReport", "SurrogateEvaluator", "SurrogateParams", "evaluate_surrogate",
    "PerformanceRecord", "compute_mwc", "compute_sea",
    "RunConfig", "load_config", "IterationRecord", "RunHistory", "run",
]
