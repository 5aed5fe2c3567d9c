"""Lagrangian description of continuous media: label-space flow maps, deposition
to Eulerian fields, barotropic dynamics, relabeling invariants, the C^2
doublet formulation, self-gravitating gas and two-species electrostatic plasma."""

from . import c2, deposition, dynamics, errors, gravity, grid, invariants, io, lattice, plasma
from .errors import (ConfigError, ConstructionError, FoldingError, GridMismatch, InverseError,
                     LagMediaError, OutOfDomain, VacuumError)
from .grid import Grid, GridField
from .lattice import FlowMap, LabelLattice, build_lattice

__version__ = "0.1.0"

__all__ = [
    "c2", "deposition", "dynamics", "errors", "gravity", "grid", "invariants", "io", "lattice",
    "plasma", "ConfigError", "ConstructionError", "FoldingError", "GridMismatch", "InverseError",
    "LagMediaError", "OutOfDomain", "VacuumError", "Grid", "GridField", "FlowMap",
    "LabelLattice", "build_lattice",
]
