"""Numerical laboratory for thin elastic sheets with a single disclination."""

from .energy import EnergyBreakdown, energy_and_gradient, energy_breakdown
from .geometry import GeneralizedCone, Params, ansatz_map, cone_map
from .mesh import DeformationField, PolarMesh, build_mesh, compute_jets, sample_field
from .optimize import OptimizerConfig, minimize, procrustes_align, sweep

__all__ = [
    "DeformationField",
    "EnergyBreakdown",
    "GeneralizedCone",
    "OptimizerConfig",
    "Params",
    "PolarMesh",
    "ansatz_map",
    "build_mesh",
    "compute_jets",
    "cone_map",
    "energy_and_gradient",
    "energy_breakdown",
    "minimize",
    "procrustes_align",
    "sample_field",
    "sweep",
]

__version__ = "0.1.0"
