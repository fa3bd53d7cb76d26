"""Isogeometric Galerkin boundary elements on multi-patch NURBS surfaces.

The pipeline is geometry -> discretization -> (dense or H2) Galerkin matrix
-> Krylov solve -> potential evaluation. Submodules:

``splines``     knot vectors, B-spline bases, NURBS patches
``geometry``    multi-patch surfaces, file format, shipped shapes
``spaces``      conforming spline spaces on the surface
``quadrature``  Gauss and regularized rules for element pairs
``operators``   single layer kernels and potentials
``assembly``    dense Galerkin matrices and load vectors
``h2``          interpolation-based H2 compression
``solver``      GMRES and CG on the matvec contract
``cli``         sweep driver and file outputs
"""

__version__ = "0.1.0"

from .estimator import BoundaryElementSolver
from .geometry import Geometry, load_geometry, save_geometry, shipped_sphere, unit_sphere
from .operators import HelmholtzSingle, LaplaceSingle, MaxwellSingle, pde_from_name
from .spaces import Discretization, build_discretization

__all__ = [
    "BoundaryElementSolver",
    "Discretization",
    "Geometry",
    "HelmholtzSingle",
    "LaplaceSingle",
    "MaxwellSingle",
    "build_discretization",
    "load_geometry",
    "pde_from_name",
    "save_geometry",
    "shipped_sphere",
    "unit_sphere",
]
