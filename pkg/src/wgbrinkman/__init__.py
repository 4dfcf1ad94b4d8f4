"""Weak Galerkin finite elements for the Brinkman equations on polygonal meshes."""

__version__ = "0.1.0"

from .mesh import Mesh2D, build_mesh, validate_mesh
from .system import SaddleSystem, WGSolution, assemble, solve
from .verify import ConvergenceReport, ErrorTriple, brinkman_2d_case, compute_errors, convergence_study, energy_norm
from .weakops import element_ops

__all__ = [
    "__version__",
    "Mesh2D",
    "build_mesh",
    "validate_mesh",
    "SaddleSystem",
    "WGSolution",
    "assemble",
    "solve",
    "ConvergenceReport",
    "ErrorTriple",
    "brinkman_2d_case",
    "compute_errors",
    "convergence_study",
    "energy_norm",
    "element_ops",
]
