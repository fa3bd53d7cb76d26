"""scikit-learn style facade over the single layer solve."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .assembly import assemble_dense, compute_rhs
from .geometry import Geometry
from .h2 import AdmissibilityParams, assemble_h2
from .operators import evaluate_potential, pde_from_name
from .solver import cg, gmres
from .spaces import build_discretization

__all__ = ["BoundaryElementSolver"]


class BoundaryElementSolver(BaseEstimator):
    """Solve ``V rho = g`` on a surface and evaluate the potential off it.

    Parameters
    ----------
    pde : {"laplace", "helmholtz", "maxwell"}
    wavenumber : complex
        Ignored for Laplace.
    degree, level, knot_repetition : int
        Discretization parameters ``P``, ``L`` and the knot multiplicity.
    compression : {"h2", "dense"}
    multipole_degree : int
        Interpolation points per direction of the H2 farfield.
    eta : float
        Admissibility parameter.
    quad_order, near_order : int or None
        Gauss orders for separated and touching element pairs.
    solver : {"gmres", "cg"}
    tol, max_iter, restart
        Krylov parameters.

    Attributes
    ----------
    density_ : ndarray
        Coefficients of the solved density.
    discretization_ : Discretization
    solve_stats_ : SolveStats
    n_dofs_ : int

    Examples
    --------
    >>> from igabem.geometry import unit_sphere
    >>> est = BoundaryElementSolver(degree=1, level=1).fit(unit_sphere(), 1.0)
    >>> est.predict([[0.0, 0.0, 0.0]]).round(2)
    array([1.])
    """

    def __init__(self, pde="laplace", wavenumber=0.0, degree=1, level=2, knot_repetition=1,
                 compression="h2", multipole_degree=8, eta=1.6, quad_order=None,
                 near_order=None, solver="gmres", tol=1e-8, max_iter=1000, restart=30):
        self.pde = pde
        self.wavenumber = wavenumber
        self.degree = degree
        self.level = level
        self.knot_repetition = knot_repetition
        self.compression = compression
        self.multipole_degree = multipole_degree
        self.eta = eta
        self.quad_order = quad_order
        self.near_order = near_order
        self.solver = solver
        self.tol = tol
        self.max_iter = max_iter
        self.restart = restart

    def _operator(self, d):
        if self.compression == "dense":
            return assemble_dense(d, self.quad_order, self.near_order)
        if self.compression == "h2":
            params = AdmissibilityParams(eta=self.eta, m=self.multipole_degree)
            return assemble_h2(d, params, self.quad_order, self.near_order)
        raise ValueError(f"compression must be 'h2' or 'dense', got {self.compression!r}")

    def fit(self, geometry: Geometry, g):
        """Discretize ``geometry`` and solve for the density.

        ``g`` is a callable of ``(n, 3)`` points returning the Dirichlet data
        (scalar kinds) or the incident field whose tangential trace is
        prescribed (Maxwell), or a constant.
        """
        if not isinstance(geometry, Geometry):
            raise TypeError("geometry must be an igabem Geometry")
        kind = pde_from_name(self.pde, 0.0 if self.pde.lower() == "laplace" else self.wavenumber)
        d = build_discretization(geometry, kind, self.degree, self.knot_repetition, self.level)
        fun = g if callable(g) else (lambda x, c=g: np.broadcast_to(np.asarray(c), x.shape[:1] + np.shape(c)))
        b = compute_rhs(d, fun, self.quad_order and self.quad_order + 1)
        op = self._operator(d)
        if self.solver == "cg":
            rho, stats = cg(op, b, self.tol, self.max_iter)
        elif self.solver == "gmres":
            rho, stats = gmres(op, b, self.tol, self.max_iter, self.restart)
        else:
            raise ValueError(f"solver must be 'gmres' or 'cg', got {self.solver!r}")
        self.discretization_ = d
        self.density_ = rho
        self.solve_stats_ = stats
        self.n_dofs_ = d.n_dofs
        return self

    def predict(self, points):
        """Potential (scalar kinds) or field (Maxwell) at ``(n, 3)`` points."""
        check_is_fitted(self, "density_")
        pts = check_array(points, dtype=np.float64)
        if pts.shape[1] != 3:
            raise ValueError(f"points must have 3 columns, got {pts.shape[1]}")
        return evaluate_potential(self.discretization_, self.density_, pts)

    def score(self, points, values):
        """Negative maximum absolute error against reference values."""
        err = np.abs(self.predict(points) - np.asarray(values))
        if err.ndim > 1:
            err = np.linalg.norm(err, axis=-1)
        return -float(err.max())
