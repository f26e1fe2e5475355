"""Volume-penalized Poisson and advection-diffusion with inhomogeneous Neumann
conditions on embedded interfaces, plus a manufactured-solution harness."""

from .geometry import IndicatorSpec, ShapeParams, SignedDistance, indicator, make_shape
from .grid import CellField, FaceField, Grid, make_grid
from .linsolve import ConvergenceError, SingularSystemError, SolveConfig, SolveStats, solve
from .operator import (DirichletRegion, ExternalDirichlet, InvalidProblemError,
                       LinearSystem, NeumannRegion, PenalizedProblem, Periodic,
                       apply_operator, assemble, fix_nullspace)
from .transport import NonSteadyError, TransportProblem, run_to_steady

__version__ = "0.1.0"

__all__ = [
    "CellField", "ConvergenceError", "DirichletRegion", "ExternalDirichlet", "FaceField",
    "Grid", "IndicatorSpec", "InvalidProblemError", "LinearSystem", "NeumannRegion",
    "NonSteadyError", "PenalizedProblem", "Periodic", "ShapeParams", "SignedDistance",
    "SingularSystemError", "SolveConfig", "SolveStats", "TransportProblem", "apply_operator",
    "assemble", "fix_nullspace", "indicator", "make_grid", "make_shape", "run_to_steady",
    "solve",
]
