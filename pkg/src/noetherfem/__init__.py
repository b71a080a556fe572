"""Adaptive finite elements for p-Laplacian minimisers and their Noether conservation laws."""
from .adapt import AdaptConfig, AdaptProblem, AdaptTrace, adapt_loop, mark_maximum
from .fespace import FEFunction, FunctionSpace, eoc, error_norms, interpolate_between, l2_project
from .lagrangian import InterpolatedSource, PLaplacian, SmoothSource
from .mesh import Mesh, bisect, build_disk_mesh, build_square_mesh, shape_regularity, uniform_refine
from .noether import (
    NoetherReport,
    RotationSymmetry,
    SmoothField,
    TranslationUSymmetry,
    characteristic,
    conservation_residual,
    discrete_noether,
    estimator,
    flux_C,
    weak_law_residual,
)
from .solver import NewtonConfig, newton_solve

__version__ = "0.1.0"
