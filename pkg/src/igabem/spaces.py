"""Multi-patch B-spline boundary element spaces.

Three spaces live on every patch's unit square, each built on ``2**L``
uniform elements per direction:

``S0``  continuous tensor splines of degree P (glued across edges),
``S1``  div-conforming pairs ``S_P x S_{P-1}'`` / ``S_{P-1}' x S_P`` lifted by
        the contravariant Piola map, normal components glued across edges,
``S2``  discontinuous tensor splines of degree ``P - 1`` on the truncated
        knot vectors (piecewise constants for ``P = 0``).

Laplace and Helmholtz densities use ``S2``, Maxwell currents ``S1``.
Elements are numbered patch by patch, lexicographically with the ``u``
index running fastest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import Geometry
from .operators import PdeKind
from .quadrature import gauss_rule
from .splines import KnotVector, basis_functions, find_span, make_uniform_knots

__all__ = ["Space1D", "Discretization", "ShapeSample", "build_discretization", "sample_shapes"]


class Space1D:
    """Spline space on ``[0, 1]`` whose knot spans are the ``2**level`` elements."""

    def __init__(self, kv: KnotVector, level: int):
        n_el = 2 ** level
        if not np.allclose(kv.breaks, np.linspace(0.0, 1.0, n_el + 1), rtol=0, atol=1e-14):
            raise ValueError("knot spans do not coincide with the element grid")
        self.kv = kv
        self.level = level
        self.degree = kv.degree
        self.n_basis = kv.n_basis
        self.spans = find_span(kv, (np.arange(n_el) + 0.5) / n_el)

    def eval(self, ix, t, nder: int = 1):
        """First active index and ``(nder+1, N, degree+1)`` values at local ``t``.

        Derivatives are taken with respect to the patch parameter.
        """
        ix = np.asarray(ix)
        u = (ix + np.asarray(t, dtype=float)) / 2 ** self.level
        span = self.spans[ix]
        return span - self.degree, basis_functions(self.kv, span, u, nder)


@dataclass
class _Block:
    su: Space1D
    sv: Space1D
    component: int | None  # None: scalar, 0: u-directed, 1: v-directed
    offset: int

    @property
    def counts(self):
        return self.su.n_basis, self.sv.n_basis

    @property
    def n_local(self):
        return (self.su.degree + 1) * (self.sv.degree + 1)

    def index(self, i1, i2):
        return self.offset + i1 + self.su.n_basis * i2


@dataclass
class ShapeSample:
    """Basis functions of one element at one point.

    ``values`` holds scalar values ``(nloc,)`` or Piola-lifted vectors
    ``(nloc, 3)``; ``divergence`` the surface divergence for ``S1``. Signs are
    the gluing orientations of the global functions and are not applied to
    ``values``.
    """

    values: np.ndarray
    divergence: np.ndarray | None
    dofs: np.ndarray
    signs: np.ndarray


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, x):
        sign = 1
        while True:
            p, s = self.parent.get(x, (x, 1))
            if p == x:
                return x, sign
            sign *= s
            x = p

    def union(self, a, b, sign):
        """Record ``phi_b = sign * phi_a`` on the glued interface."""
        ra, sa = self.find(a)
        rb, sb = self.find(b)
        if ra == rb:
            if sa * sign != sb:
                raise ValueError("inconsistent gluing orientation")
            return
        self.parent[rb] = (ra, sa * sign * sb)


class Discretization:
    """Conforming spline space on a multi-patch geometry.

    Parameters
    ----------
    geometry : Geometry
    pde : PdeKind
        Selects the space: ``S1`` for Maxwell, ``S2`` otherwise.
    degree : int
        Ansatz degree ``P``.
    knot_repetition : int
        Interior knot multiplicity of the degree-``P`` knot vectors.
    level : int
        Refinement level ``L``; each patch carries ``4**L`` elements.
    space : {"S0", "S1", "S2"}, optional
        Override the space selected by ``pde``.
    """

    def __init__(self, geometry: Geometry, pde: PdeKind, degree: int, knot_repetition: int = 1,
                 level: int = 0, space: str | None = None):
        if degree < 0 or level < 0:
            raise ValueError("degree and level must be non-negative")
        self.geometry = geometry
        self.pde = pde
        self.degree = int(degree)
        self.knot_repetition = int(knot_repetition)
        self.level = int(level)
        self.space = space or ("S1" if pde.is_vector else "S2")
        self.n_per_dir = 2 ** self.level
        self.n_patches = geometry.n_patches
        self.n_elements = self.n_patches * self.n_per_dir ** 2
        self.blocks = self._make_blocks()
        self.n_local_patch = sum(b.counts[0] * b.counts[1] for b in self.blocks)
        self.nloc = sum(b.n_local for b in self.blocks)
        self._glue()
        e = np.arange(self.n_elements)
        self.element_patch = e // self.n_per_dir ** 2
        cell = e % self.n_per_dir ** 2
        self.element_ix = cell % self.n_per_dir
        self.element_iy = cell // self.n_per_dir
        self._element_dofs()
        self._cache = {}

    # ------------------------------------------------------------------
    def _make_blocks(self):
        P, L, rep = self.degree, self.level, self.knot_repetition
        if self.space == "S2":
            kv = make_uniform_knots(0, L, rep) if P == 0 else make_uniform_knots(P, L, rep).truncated()
            s = Space1D(kv, L)
            return [_Block(s, s, None, 0)]
        if self.space == "S0":
            s = Space1D(make_uniform_knots(P, L, rep), L)
            return [_Block(s, s, None, 0)]
        if self.space == "S1":
            if P < 1:
                raise ValueError("unsupported degree: the div-conforming space needs P >= 1")
            kv = make_uniform_knots(P, L, rep)
            sp_, sq = Space1D(kv, L), Space1D(kv.truncated(), L)
            b0 = _Block(sp_, sq, 0, 0)
            b1 = _Block(sq, sp_, 1, sp_.n_basis * sq.n_basis)
            return [b0, b1]
        raise ValueError(f"unknown space {self.space!r}")

    @property
    def is_vector(self) -> bool:
        return self.space == "S1"

    @property
    def dtype(self):
        return self.pde.dtype

    def _edge_functions(self, edge: int):
        """Patch-local indices of the functions living on an edge, ordered
        along the edge parameter, with the sign of their outward flux."""
        if self.space == "S1":
            b0, b1 = self.blocks
            k, kq = b0.counts
            j = np.arange(kq)
            if edge == 3:
                return b0.index(0, j), -1
            if edge == 1:
                return b0.index(k - 1, j), 1
            if edge == 0:
                return b1.index(j, 0), -1
            return b1.index(j, k - 1), 1
        (b,) = self.blocks
        k1, k2 = b.counts
        if edge == 0:
            return b.index(np.arange(k1), 0), 1
        if edge == 2:
            return b.index(np.arange(k1), k2 - 1), 1
        if edge == 1:
            return b.index(k1 - 1, np.arange(k2)), 1
        return b.index(0, np.arange(k2)), 1

    def _glue(self):
        uf = _UnionFind()
        self.n_identifications = 0
        if self.space != "S2":
            for link in self.geometry.edges:
                fa, sa = self._edge_functions(link.edge_a)
                fb, sb = self._edge_functions(link.edge_b)
                if link.flip:
                    fb = fb[::-1]
                sign = -sa * sb if self.space == "S1" else 1
                for a, b in zip(fa, fb):
                    uf.union((link.patch_a, int(a)), (link.patch_b, int(b)), sign)
        self.dof_map = np.empty((self.n_patches, self.n_local_patch), dtype=np.int64)
        self.dof_sign = np.empty((self.n_patches, self.n_local_patch), dtype=np.int8)
        ids, first_sign = {}, {}
        for p in range(self.n_patches):
            for loc in range(self.n_local_patch):
                root, s = uf.find((p, loc))
                if root not in ids:
                    ids[root] = len(ids)
                    first_sign[root] = s
                self.dof_map[p, loc] = ids[root]
                self.dof_sign[p, loc] = s * first_sign[root]
        self.n_dofs = len(ids)
        self.n_identifications = self.n_patches * self.n_local_patch - self.n_dofs

    def _element_dofs(self):
        loc = []
        for b in self.blocks:
            fu = b.su.spans[self.element_ix] - b.su.degree
            fv = b.sv.spans[self.element_iy] - b.sv.degree
            a = np.arange(b.su.degree + 1)
            c = np.arange(b.sv.degree + 1)
            i1 = fu[:, None, None] + a[None, None, :]
            i2 = fv[:, None, None] + c[None, :, None]
            loc.append(b.index(i1, i2).reshape(self.n_elements, -1))
        self.element_local = np.concatenate(loc, axis=1)
        pat = self.element_patch[:, None]
        self.element_dofs = self.dof_map[pat, self.element_local]
        self.element_signs = self.dof_sign[pat, self.element_local].astype(float)

    # ------------------------------------------------------------------
    def element_of(self, patch, u, v):
        """Element index and local coordinates of parametric points."""
        n = self.n_per_dir
        u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
        ix = np.minimum((u * n).astype(np.int64), n - 1)
        iy = np.minimum((v * n).astype(np.int64), n - 1)
        e = np.asarray(patch) * n * n + iy * n + ix
        return e, np.stack([u * n - ix, v * n - iy], axis=-1)

    def evaluate_elements(self, elements, t, shapes: bool = True):
        """Geometry and shape data at element-local points.

        Parameters
        ----------
        elements : (B,) int array
        t : (B, n, 2) or (n, 2) array of local coordinates in ``[0, 1]^2``

        Returns
        -------
        dict with ``x, xu, xv`` (B, n, 3), ``sqrtg`` (B, n) and, when
        ``shapes`` is set, ``phi`` (B, n, nloc) for scalar spaces or
        ``vec`` (B, n, nloc, 3) and ``div`` (B, n, nloc) for ``S1``. The
        vector data are ``sqrt(g)`` times the lifted field and its surface
        divergence, i.e. ``J j_ref`` and ``div j_ref``. Gluing signs are
        not applied.
        """
        elements = np.atleast_1d(np.asarray(elements, dtype=np.int64))
        t = np.asarray(t, dtype=float)
        B = elements.size
        if t.ndim == 2:
            t = np.broadcast_to(t, (B,) + t.shape)
        n = t.shape[1]
        x = np.empty((B, n, 3))
        xu = np.empty((B, n, 3))
        xv = np.empty((B, n, 3))
        out = {"x": x, "xu": xu, "xv": xv}
        if shapes:
            if self.is_vector:
                vec = np.empty((B, n, self.nloc, 3))
                div = np.empty((B, n, self.nloc))
                out.update(vec=vec, div=div)
            else:
                phi = np.empty((B, n, self.nloc))
                out["phi"] = phi
        N = self.n_per_dir
        patches = self.element_patch[elements]
        for p in np.unique(patches):
            sel = np.nonzero(patches == p)[0]
            el = elements[sel]
            ix = np.repeat(self.element_ix[el], n)
            iy = np.repeat(self.element_iy[el], n)
            tu = t[sel, :, 0].ravel()
            tv = t[sel, :, 1].ravel()
            px, pu, pv = self.geometry.patches[p].evaluate((ix + tu) / N, (iy + tv) / N)
            x[sel] = px.reshape(-1, n, 3)
            xu[sel] = pu.reshape(-1, n, 3)
            xv[sel] = pv.reshape(-1, n, 3)
            if not shapes:
                continue
            col = 0
            for b in self.blocks:
                _, bu = b.su.eval(ix, tu)
                _, bv = b.sv.eval(iy, tv)
                val = (bv[0][:, :, None] * bu[0][:, None, :]).reshape(len(ix), -1)
                width = val.shape[1]
                cols = slice(col, col + width)
                if b.component is None:
                    phi[sel, :, cols] = val.reshape(-1, n, width)
                else:
                    if b.component == 0:
                        dval = (bv[0][:, :, None] * bu[1][:, None, :]).reshape(len(ix), -1)
                        tangent = pu
                    else:
                        dval = (bv[1][:, :, None] * bu[0][:, None, :]).reshape(len(ix), -1)
                        tangent = pv
                    vec[sel, :, cols] = (val[:, :, None] * tangent[:, None, :]).reshape(-1, n, width, 3)
                    div[sel, :, cols] = dval.reshape(-1, n, width)
                col += width
        out["sqrtg"] = np.linalg.norm(np.cross(xu, xv), axis=-1)
        return out

    # ------------------------------------------------------------------
    def far_samples(self, order: int):
        """Tensor Gauss samples of every element and the sparse maps from
        coefficients to weighted sample values (cached per order)."""
        key = ("far", order)
        if key in self._cache:
            return self._cache[key]
        rule = gauss_rule(order)
        t = np.stack(np.meshgrid(rule.nodes, rule.nodes, indexing="ij"), axis=-1).reshape(-1, 2)
        w = np.outer(rule.weights, rule.weights).ravel() / 4 ** self.level
        nq = t.shape[0]
        E = self.n_elements
        xs = np.empty((E, nq, 3))
        sqrtg = np.empty((E, nq))
        rows = np.repeat(self.element_dofs[:, None, :], nq, axis=1)
        cols = np.broadcast_to((np.arange(E)[:, None] * nq + np.arange(nq))[:, :, None], rows.shape)
        data = {}
        for start in range(0, E, 512):
            el = np.arange(start, min(E, start + 512))
            ev = self.evaluate_elements(el, t)
            xs[el] = ev["x"]
            sqrtg[el] = ev["sqrtg"]
            sg = self.element_signs[el][:, None, :]
            if self.is_vector:
                for c in range(3):
                    data.setdefault(c, []).append(ev["vec"][..., c] * sg * w[None, :, None])
                data.setdefault("div", []).append(ev["div"] * sg * w[None, :, None])
            else:
                val = ev["phi"] * sg * (ev["sqrtg"] * w)[:, :, None]
                data.setdefault("phi", []).append(val)
        shape = (self.n_dofs, E * nq)
        maps = {}
        for name, chunks in data.items():
            vals = np.concatenate(chunks, axis=0)
            m = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape)
            m.sum_duplicates()
            maps[name] = m
        res = {"x": xs, "sqrtg": sqrtg, "t": t, "w": w, "maps": maps}
        self._cache[key] = res
        return res

    def default_order(self, kind: str = "far") -> int:
        return self.degree + (2 if kind == "far" else 3)

    def density_samples(self, coeffs, order=None):
        """Weighted density samples used by potential evaluation."""
        order = order or self.default_order("far") + 2
        fs = self.far_samples(order)
        coeffs = np.asarray(coeffs)
        if coeffs.shape != (self.n_dofs,):
            raise ValueError(f"density has shape {coeffs.shape}, expected ({self.n_dofs},)")
        maps = fs["maps"]
        out = {"x": fs["x"].reshape(-1, 3)}
        if self.is_vector:
            out["vector"] = np.stack([maps[c].T @ coeffs for c in range(3)], axis=1)
            out["div"] = maps["div"].T @ coeffs
        else:
            out["weights"] = maps["phi"].T @ coeffs
        return out

    def evaluate_density(self, coeffs, patch, u, v):
        """Density (scalar) or lifted surface current (vector) at parametric points."""
        coeffs = np.asarray(coeffs)
        e, t = self.element_of(patch, u, v)
        e, t = np.atleast_1d(e), np.atleast_2d(t)
        ev = self.evaluate_elements(e, t[:, None, :])
        c = coeffs[self.element_dofs[e]] * self.element_signs[e]
        if self.is_vector:
            return np.einsum("bnlc,bl->bc", ev["vec"], c) / ev["sqrtg"]
        return np.einsum("bnl,bl->b", ev["phi"], c)

    # ------------------------------------------------------------------
    def element_corners(self):
        key = "corners"
        if key not in self._cache:
            t = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
            xs = self.evaluate_elements(np.arange(self.n_elements), t, shapes=False)["x"]
            pts = xs.reshape(-1, 3)
            scale = max(1.0, np.abs(pts).max())
            pairs = cKDTree(pts).query_pairs(1e-9 * scale, output_type="ndarray")
            adj = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                                shape=(len(pts), len(pts)))
            _, labels = connected_components(adj, directed=False)
            # relabel in order of first appearance for determinism
            _, first = np.unique(labels, return_index=True)
            order = np.argsort(np.argsort(first))
            self._cache[key] = (xs, order[labels].reshape(self.n_elements, 4))
        return self._cache[key]

    def element_boxes(self, n_samples: int | None = None):
        """Axis-aligned boxes ``(E, 2, 3)`` of sampled element images.

        The default sample count follows the geometry degree, so curved
        elements are enclosed whatever the ansatz degree.
        """
        if n_samples is None:
            n_samples = max(max(p.degrees) for p in self.geometry.patches) + 2
        key = ("boxes", n_samples)
        if key not in self._cache:
            g = np.linspace(0.0, 1.0, max(n_samples, 2))
            t = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
            x = self.evaluate_elements(np.arange(self.n_elements), t, shapes=False)["x"]
            self._cache[key] = np.stack([x.min(axis=1), x.max(axis=1)], axis=1)
        return self._cache[key]


def build_discretization(geometry, pde, degree, knot_repetition=1, level=0, space=None):
    """Checked constructor: refuses geometries violating the matching condition."""
    from .geometry import check_matching

    violations = [v for v in check_matching(geometry) if v[2] > 0]
    if violations:
        raise ValueError(f"matching condition violated: {violations}")
    return Discretization(geometry, pde, degree, knot_repetition, level, space)


def sample_shapes(disc: Discretization, element: int, points):
    """Shape data of one element at parametric points ``(u, v)`` inside it."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = disc.n_per_dir
    ix, iy = disc.element_ix[element], disc.element_iy[element]
    t = np.stack([points[:, 0] * n - ix, points[:, 1] * n - iy], axis=-1)
    if np.any(t < -1e-12) or np.any(t > 1 + 1e-12):
        raise ValueError("points outside the element")
    ev = disc.evaluate_elements([element], np.clip(t, 0.0, 1.0))
    dofs, signs = disc.element_dofs[element], disc.element_signs[element]
    samples = []
    for q in range(len(points)):
        if disc.is_vector:
            sg = ev["sqrtg"][0, q]
            samples.append(ShapeSample(ev["vec"][0, q] / sg, ev["div"][0, q] / sg, dofs, signs))
        else:
            samples.append(ShapeSample(ev["phi"][0, q], None, dofs, signs))
    return samples
