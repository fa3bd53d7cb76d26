"""PDE kinds, fundamental solutions and single layer potentials.

The Helmholtz and Maxwell kernels use ``exp(-i k r) / (4 pi r)``, i.e. the
time convention ``exp(+i w t)``; incident fields must follow the same sign.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PdeKind",
    "LaplaceSingle",
    "HelmholtzSingle",
    "MaxwellSingle",
    "pde_from_name",
    "kernel_laplace",
    "kernel_helmholtz",
    "kernel_values",
    "kernel_gradient",
    "potential_scalar",
    "potential_maxwell",
    "evaluate_potential",
    "dirichlet_trace",
    "tangential_trace",
    "point_source",
    "dipole_field",
]

FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True)
class PdeKind:
    """Base class of the single layer problems."""

    wavenumber: complex = 0.0
    name = "pde"
    is_complex = True
    is_vector = False

    @property
    def dtype(self):
        return np.complex128 if self.is_complex else np.float64

    def kernel(self, r):
        return kernel_values(r, self.wavenumber if self.is_complex else None)


@dataclass(frozen=True)
class LaplaceSingle(PdeKind):
    name = "LaplaceSingle"
    is_complex = False


@dataclass(frozen=True)
class HelmholtzSingle(PdeKind):
    name = "HelmholtzSingle"

    def __post_init__(self):
        object.__setattr__(self, "wavenumber", complex(self.wavenumber))


@dataclass(frozen=True)
class MaxwellSingle(PdeKind):
    name = "MaxwellSingle"
    is_vector = True

    def __post_init__(self):
        k = complex(self.wavenumber)
        if k == 0:
            raise ValueError("Maxwell wavenumber must be nonzero")
        object.__setattr__(self, "wavenumber", k)


def pde_from_name(name: str, wavenumber=0.0) -> PdeKind:
    key = name.lower()
    if key in ("laplace", "laplacesingle"):
        return LaplaceSingle()
    if key in ("helmholtz", "helmholtzsingle"):
        return HelmholtzSingle(wavenumber)
    if key in ("maxwell", "maxwellsingle"):
        return MaxwellSingle(wavenumber)
    raise ValueError(f"unknown pde kind {name!r}")


def kernel_values(r, wavenumber=None):
    """Kernel as a function of distance; ``wavenumber=None`` selects Laplace."""
    if wavenumber is None:
        return 1.0 / (FOUR_PI * r)
    return np.exp(-1j * wavenumber * r) / (FOUR_PI * r)


def _distance(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    r = np.linalg.norm(x - y, axis=-1)
    if np.any(r == 0.0):
        raise ZeroDivisionError("kernel evaluated at x = y; the singular integral must be regularized")
    return r


def kernel_laplace(x, y):
    """``1 / (4 pi |x - y|)``."""
    return kernel_values(_distance(x, y))


def kernel_helmholtz(x, y, wavenumber):
    """``exp(-i k |x - y|) / (4 pi |x - y|)``."""
    return kernel_values(_distance(x, y), complex(wavenumber))


def kernel_gradient(x, y, wavenumber=None):
    """Gradient of the kernel with respect to ``x``; shape ``(..., 3)``."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.linalg.norm(d, axis=-1)
    g = kernel_values(r, wavenumber)
    if wavenumber is None:
        radial = -g / r
    else:
        radial = g * (-1j * wavenumber - 1.0 / r)
    return (radial / r)[..., None] * d


# --------------------------------------------------------------------------
# Potentials
# --------------------------------------------------------------------------
def _chunks(n, size):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def potential_scalar(kind: PdeKind, disc, rho, points, quad_order=None, chunk=256):
    """Single layer potential of a scalar density at points off the surface."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    src = disc.density_samples(rho, quad_order)
    k = kind.wavenumber if kind.is_complex else None
    out = np.empty(len(points), dtype=np.result_type(src["weights"], kind.dtype))
    for sl in _chunks(len(points), chunk):
        r = np.linalg.norm(points[sl, None, :] - src["x"][None], axis=-1)
        out[sl] = kernel_values(r, k) @ src["weights"]
    return out


def potential_maxwell(disc, j, wavenumber, points, quad_order=None, chunk=128):
    """Electric field of the single layer ansatz, vector and gradient terms."""
    wavenumber = complex(wavenumber)
    if wavenumber == 0:
        raise ValueError("wavenumber must be nonzero")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    src = disc.density_samples(j, quad_order)
    out = np.empty((len(points), 3), dtype=complex)
    for sl in _chunks(len(points), chunk):
        d = points[sl, None, :] - src["x"][None]
        r = np.linalg.norm(d, axis=-1)
        g = kernel_values(r, wavenumber)
        grad = (g * (-1j * wavenumber - 1.0 / r) / r)[..., None] * d
        out[sl] = g @ src["vector"] + np.einsum("pqc,q->pc", grad, src["div"]) / wavenumber**2
    return out


def evaluate_potential(disc, rho, points, quad_order=None):
    """Dispatch on the discretization's PDE kind."""
    if disc.pde.is_vector:
        return potential_maxwell(disc, rho, disc.pde.wavenumber, points, quad_order)
    return potential_scalar(disc.pde, disc, rho, points, quad_order)


# --------------------------------------------------------------------------
# Traces and reference fields
# --------------------------------------------------------------------------
def dirichlet_trace(fun, frame):
    return fun(frame.point)


def tangential_trace(fun, frame):
    """Rotated tangential trace ``n x E`` with the unit normal of ``frame``."""
    n = frame.normal / np.linalg.norm(frame.normal)
    return np.cross(n, fun(frame.point))


def point_source(source, wavenumber=None):
    """Fundamental solution centred at ``source`` as a callable of points."""
    source = np.asarray(source, dtype=float)

    def u(x):
        r = np.linalg.norm(np.asarray(x, dtype=float) - source, axis=-1)
        return kernel_values(r, wavenumber)

    return u


def dipole_field(position, moment, wavenumber):
    """Electric field ``curl curl (p G(x - x0))`` of a Hertzian dipole.

    Solves ``curl curl E - k^2 E = 0`` away from ``position`` and radiates
    with the same ``exp(-i k r)`` convention as the kernel.
    """
    x0 = np.asarray(position, dtype=float)
    p = np.asarray(moment, dtype=complex)
    k = complex(wavenumber)

    def field(x):
        x = np.asarray(x, dtype=float)
        d = x - x0
        r = np.linalg.norm(d, axis=-1)[..., None]
        e = d / r
        g = np.exp(-1j * k * r) / (FOUR_PI * r)
        a = -1j * k - 1.0 / r
        g1 = g * a
        g2 = g * (a * a + 1.0 / r**2)
        pe = np.sum(e * p, axis=-1, keepdims=True)
        return k * k * g * p + (g2 - g1 / r) * pe * e + (g1 / r) * p

    return field
