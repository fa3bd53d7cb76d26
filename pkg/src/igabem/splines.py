"""B-spline bases and NURBS patch mappings.

Basis functions are evaluated with the local triangular Cox-de Boor table,
returning only the ``p + 1`` functions that are active at a parameter value.
All routines accept scalars or 1D arrays of parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

__all__ = [
    "KnotVector",
    "PatchSurface",
    "make_uniform_knots",
    "find_span",
    "basis_functions",
    "eval_basis",
    "eval_basis_deriv",
    "eval_patch",
]


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Clamped knot vector on ``[0, 1]`` together with its degree.

    Parameters
    ----------
    knots : array_like
        Nondecreasing knots; the first and last ``degree + 1`` entries must
        be 0 and 1 respectively.
    degree : int
        Polynomial degree ``p``.
    """

    knots: np.ndarray
    degree: int

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).ravel()
        p = int(self.degree)
        if p < 0:
            raise ValueError("degree must be non-negative")
        if knots.size < 2 * (p + 1):
            raise ValueError(f"need at least {2 * (p + 1)} knots for degree {p}")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        if np.any(knots[: p + 1] != 0.0) or np.any(knots[-(p + 1):] != 1.0):
            raise ValueError("knot vector must be clamped on [0, 1]")
        _, counts = np.unique(knots[p + 1: knots.size - p - 1], return_counts=True)
        if counts.size and counts.max() > p + 1:
            raise ValueError("interior knot multiplicity exceeds degree + 1")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "degree", p)

    @property
    def n_basis(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def breaks(self) -> np.ndarray:
        """Distinct knot values, i.e. element boundaries."""
        return np.unique(self.knots)

    def truncated(self, degree: int | None = None) -> "KnotVector":
        """Knot vector without its first and last knot.

        The degree drops by one. Interior multiplicities that would exceed the
        new ``degree + 1`` are clamped so the result stays a valid basis.
        """
        d = self.degree - 1 if degree is None else degree
        if d < 0:
            raise ValueError("cannot truncate a degree-0 knot vector")
        inner = self.knots[1:-1]
        vals, counts = np.unique(inner, return_counts=True)
        counts = np.minimum(counts, d + 1)
        counts[0] = counts[-1] = d + 1
        return KnotVector(np.repeat(vals, counts), d)

    def greville(self) -> np.ndarray:
        p = self.degree
        if p == 0:
            return 0.5 * (self.knots[:-1] + self.knots[1:])
        idx = np.arange(self.n_basis)[:, None] + np.arange(1, p + 1)[None, :]
        return self.knots[idx].mean(axis=1)

    def __eq__(self, other):
        if not isinstance(other, KnotVector):
            return NotImplemented
        return self.degree == other.degree and np.array_equal(self.knots, other.knots)

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))

    def __repr__(self):
        return f"KnotVector(degree={self.degree}, knots={self.knots.tolist()})"


def make_uniform_knots(p: int, level: int, rep: int = 1) -> KnotVector:
    """Clamped knot vector with ``2**level`` equal elements.

    Interior knots are repeated ``rep`` times; ``rep = 1`` gives maximal
    smoothness and ``rep = p + 1`` a discontinuous space.
    """
    if p < 0 or level < 0:
        raise ValueError("degree and level must be non-negative")
    if rep < 1 or rep > p + 1:
        raise ValueError(f"invalid multiplicity rep={rep} for degree {p}")
    n_el = 2 ** level
    interior = np.repeat(np.arange(1, n_el) / n_el, rep)
    knots = np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])
    return KnotVector(knots, p)


@numba.njit(cache=True, nogil=True)
def _basis_1d(knots, p, span, x, out, ndu, left, right):
    # values and first derivatives of the p+1 active functions (NURBS book A2.3, n=1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - knots[span + 1 - j]
        right[j] = knots[span + j] - x
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    for r in range(p + 1):
        out[0, r] = ndu[r, p]
        out[1, r] = 0.0
    if p > 0:
        for r in range(p + 1):
            d = 0.0
            if r >= 1:
                d += ndu[r - 1, p - 1] / ndu[p, r - 1]
            if r <= p - 1:
                d -= ndu[r, p - 1] / ndu[p, r]
            out[1, r] = p * d


@numba.njit(cache=True, nogil=True)
def _find_span_scalar(knots, p, n_basis, x):
    lo, hi = 0, knots.size
    while lo < hi:  # searchsorted side="right"
        mid = (lo + hi) // 2
        if knots[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    s = lo - 1
    if s < p:
        s = p
    if s > n_basis - 1:
        s = n_basis - 1
    return s


@numba.njit(cache=True, nogil=True)
def _eval_surface(ku, pu, kv, pv, hom, u, v):
    n = u.size
    nu, nv = hom.shape[0], hom.shape[1]
    x = np.empty((n, 3))
    xu = np.empty((n, 3))
    xv = np.empty((n, 3))
    bu = np.empty((2, pu + 1))
    bv = np.empty((2, pv + 1))
    h = np.empty(4)
    hu = np.empty(4)
    hv = np.empty(4)
    q = max(pu, pv) + 1
    ndu = np.empty((q, q))
    left = np.empty(q)
    right = np.empty(q)
    for i in range(n):
        su = _find_span_scalar(ku, pu, nu, u[i])
        sv = _find_span_scalar(kv, pv, nv, v[i])
        _basis_1d(ku, pu, su, u[i], bu, ndu, left, right)
        _basis_1d(kv, pv, sv, v[i], bv, ndu, left, right)
        h[:] = 0.0
        hu[:] = 0.0
        hv[:] = 0.0
        for a in range(pu + 1):
            for b in range(pv + 1):
                ia, ib = su - pu + a, sv - pv + b
                w00 = bu[0, a] * bv[0, b]
                w10 = bu[1, a] * bv[0, b]
                w01 = bu[0, a] * bv[1, b]
                for k in range(4):
                    c = hom[ia, ib, k]
                    h[k] += w00 * c
                    hu[k] += w10 * c
                    hv[k] += w01 * c
        for k in range(3):
            xk = h[k] / h[3]
            x[i, k] = xk
            xu[i, k] = (hu[k] - hu[3] * xk) / h[3]
            xv[i, k] = (hv[k] - hv[3] * xk) / h[3]
    return x, xu, xv


def _check_domain(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(x > 1.0) or np.any(~np.isfinite(x)):
        raise ValueError("parameter outside [0, 1]")
    return x


def find_span(kv: KnotVector, x) -> np.ndarray:
    """Index ``s`` of the knot span ``[xi_s, xi_{s+1})`` containing ``x``.

    ``x = 1`` is assigned to the last nonempty span.
    """
    x = np.asarray(x, dtype=float)
    s = np.searchsorted(kv.knots, x, side="right") - 1
    return np.clip(s, kv.degree, kv.n_basis - 1)


def basis_functions(kv: KnotVector, span, x, nder: int = 0) -> np.ndarray:
    """Active basis functions and derivatives for given spans.

    Returns an array of shape ``(nder + 1, N, p + 1)``; entry ``[k, i, j]`` is
    the ``k``-th derivative of ``b_{span_i - p + j}`` at ``x_i``.
    """
    knots = kv.knots
    p = kv.degree
    x = np.atleast_1d(np.asarray(x, dtype=float))
    span = np.broadcast_to(np.asarray(span), x.shape).ravel()
    x = x.ravel()
    n = x.size
    ndu = np.zeros((p + 1, p + 1, n))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, n))
    right = np.zeros((p + 1, n))
    for j in range(1, p + 1):
        left[j] = x - knots[span + 1 - j]
        right[j] = knots[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((nder + 1, p + 1, n))
    ders[0] = ndu[:, p]
    if nder > 0 and p > 0:
        for r in range(p + 1):
            a = np.zeros((2, p + 1, n))
            a[0, 0] = 1.0
            s1, s2 = 0, 1
            for k in range(1, min(nder, p) + 1):
                d = np.zeros(n)
                rk, pk = r - k, p - k
                if r >= k:
                    a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                    d = a[s2, 0] * ndu[rk, pk]
                j1 = 1 if rk >= -1 else -rk
                j2 = k - 1 if r - 1 <= pk else p - r
                for j in range(j1, j2 + 1):
                    a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                    d = d + a[s2, j] * ndu[rk + j, pk]
                if r <= pk:
                    a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                    d = d + a[s2, k] * ndu[r, pk]
                ders[k, r] = d
                s1, s2 = s2, s1
        factor = p
        for k in range(1, min(nder, p) + 1):
            ders[k] *= factor
            factor *= p - k
    return np.moveaxis(ders, 2, 1)


def eval_basis(kv: KnotVector, x):
    """First active index and the ``p + 1`` nonzero basis values at ``x``.

    For scalar ``x`` returns ``(int, (p+1,) array)``; for arrays the index
    and values carry a leading point axis.
    """
    x = _check_domain(x)
    span = find_span(kv, x)
    vals = basis_functions(kv, span, x)[0]
    first = span - kv.degree
    if x.ndim == 0:
        return int(first), vals[0]
    return first, vals


def eval_basis_deriv(kv: KnotVector, x, order: int = 1):
    """Derivatives of order 1 or 2 of the functions returned by eval_basis."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    x = _check_domain(x)
    span = find_span(kv, x)
    first = span - kv.degree
    if order > kv.degree:
        vals = np.zeros((np.atleast_1d(x).size, kv.degree + 1))
    else:
        vals = basis_functions(kv, span, x, nder=order)[order]
    if x.ndim == 0:
        return int(first), vals[0]
    return first, vals


@dataclass(frozen=True, eq=False)
class PatchSurface:
    """Tensor-product NURBS mapping of the unit square into R^3.

    ``control_points`` has shape ``(k1, k2, 3)`` (Cartesian) and ``weights``
    shape ``(k1, k2)``.
    """

    kv_u: KnotVector
    kv_v: KnotVector
    control_points: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=float)
        k1, k2 = self.kv_u.n_basis, self.kv_v.n_basis
        if cp.shape != (k1, k2, 3):
            raise ValueError(f"control grid {cp.shape} does not match basis counts ({k1}, {k2}, 3)")
        w = np.ones((k1, k2)) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (k1, k2):
            raise ValueError("weight grid does not match control grid")
        if np.any(w <= 0):
            raise ValueError("NURBS weights must be strictly positive")
        cp.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "weights", w)
        hom = np.concatenate([cp * w[..., None], w[..., None]], axis=-1)
        hom.setflags(write=False)
        object.__setattr__(self, "_homogeneous", hom)

    @classmethod
    def from_homogeneous(cls, kv_u, kv_v, coefs):
        """Build from ``(k1, k2, 4)`` coefficients ``(w x, w y, w z, w)``."""
        coefs = np.asarray(coefs, dtype=float)
        w = coefs[..., 3]
        return cls(kv_u, kv_v, coefs[..., :3] / w[..., None], w)

    @property
    def degrees(self):
        return self.kv_u.degree, self.kv_v.degree

    @property
    def homogeneous(self) -> np.ndarray:
        return self._homogeneous

    def evaluate(self, u, v, derivatives: bool = True):
        """Vectorized mapping: points ``(N, 3)`` and tangents ``(N, 3)`` each.

        Parameters outside ``[0, 1]`` are not checked here.
        """
        u = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
        v = np.atleast_1d(np.asarray(v, dtype=float)).ravel()
        if not derivatives:
            h = self._eval_homogeneous(u, v)
            return h[:, :3] / h[:, 3:]
        u, v = np.broadcast_arrays(u, v)
        return _eval_surface(self.kv_u.knots, self.kv_u.degree, self.kv_v.knots, self.kv_v.degree,
                             self._homogeneous, np.ascontiguousarray(u), np.ascontiguousarray(v))

    def _eval_homogeneous(self, u, v):
        p1, p2 = self.degrees
        su, sv = find_span(self.kv_u, u), find_span(self.kv_v, v)
        bu = basis_functions(self.kv_u, su, u)[0]
        bv = basis_functions(self.kv_v, sv, v)[0]
        iu = su[:, None] - p1 + np.arange(p1 + 1)
        iv = sv[:, None] - p2 + np.arange(p2 + 1)
        local = self._homogeneous[iu[:, :, None], iv[:, None, :]]
        return np.einsum("na,nb,nabc->nc", bu, bv, local)


def eval_patch(s: PatchSurface, u, v):
    """Point and first partial derivatives of a patch at ``(u, v)``."""
    u = _check_domain(u)
    v = _check_domain(v)
    scalar = u.ndim == 0 and v.ndim == 0
    u, v = np.broadcast_arrays(u, v)
    x, xu, xv = s.evaluate(u, v)
    if scalar:
        return x[0], xu[0], xv[0]
    return x, xu, xv
