"""Multi-patch NURBS boundary representations.

A :class:`Geometry` is an ordered list of :class:`~igabem.splines.PatchSurface`
objects plus the topology inferred from coincident edge control nets.
Patch edges are numbered ``0: v=0``, ``1: u=1``, ``2: v=1``, ``3: u=0``; the
edge parameter ``s`` runs along increasing ``u`` (edges 0, 2) or ``v``
(edges 1, 3).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from math import comb
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .splines import KnotVector, PatchSurface

logger = logging.getLogger(__name__)

MATCH_TOL = 1e-9
REGULARITY_TOL = 1e-12
FORMAT_HEADER = "igabem-geometry 1"

__all__ = [
    "EdgeLink",
    "Geometry",
    "GeometryError",
    "GeometryFormatError",
    "SurfaceFrame",
    "check_matching",
    "dumps_geometry",
    "edge_param",
    "flat_square",
    "frame",
    "load_geometry",
    "loads_geometry",
    "save_geometry",
    "shipped_sphere",
    "surface_area",
    "transform",
    "unit_sphere",
]


class GeometryError(ValueError):
    """Invalid geometry: irregular parametrization, topology or orientation."""


class GeometryFormatError(GeometryError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class EdgeLink:
    """Identification of edge ``edge_a`` of ``patch_a`` with ``edge_b`` of ``patch_b``.

    ``flip`` is True when the edge parameters run in opposite directions.
    """

    patch_a: int
    edge_a: int
    patch_b: int
    edge_b: int
    flip: bool

    def map_param(self, s):
        """Edge parameter on ``b`` of the point with parameter ``s`` on ``a``."""
        return 1.0 - np.asarray(s) if self.flip else np.asarray(s)


@dataclass(frozen=True)
class SurfaceFrame:
    point: np.ndarray
    du: np.ndarray
    dv: np.ndarray
    normal: np.ndarray
    measure: float


def edge_param(edge: int, s):
    """Parametric coordinates ``(u, v)`` of edge parameter ``s``."""
    s = np.asarray(s, dtype=float)
    zero, one = np.zeros_like(s), np.ones_like(s)
    return {0: (s, zero), 1: (one, s), 2: (s, one), 3: (zero, s)}[edge]


def _edge_net(patch: PatchSurface, edge: int) -> np.ndarray:
    h = patch.homogeneous
    net = {0: h[:, 0], 1: h[-1, :], 2: h[:, -1], 3: h[0, :]}[edge]
    return np.concatenate([net[:, :3] / net[:, 3:], net[:, 3:]], axis=1)


def _edge_knots(patch: PatchSurface, edge: int) -> KnotVector:
    return patch.kv_u if edge in (0, 2) else patch.kv_v


class Geometry:
    """Ordered patch collection with inferred edge and vertex topology."""

    def __init__(self, patches, validate: bool = True):
        self.patches = tuple(patches)
        if not self.patches:
            raise GeometryError("geometry needs at least one patch")
        self.edges = _infer_edges(self.patches, MATCH_TOL)
        self.vertices = _infer_vertices(self.patches)
        if validate:
            self._check_regular()
            if self.is_closed:
                self._check_outward()

    def __len__(self):
        return len(self.patches)

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    @property
    def is_closed(self) -> bool:
        return len(self.edges) * 2 == 4 * self.n_patches

    def partner(self, patch: int, edge: int):
        """``(patch, edge, flip)`` glued to the given edge, or None."""
        for link in self.edges:
            if (link.patch_a, link.edge_a) == (patch, edge):
                return link.patch_b, link.edge_b, link.flip
            if (link.patch_b, link.edge_b) == (patch, edge):
                return link.patch_a, link.edge_a, link.flip
        return None

    def evaluate(self, patch: int, u, v):
        """Vectorized point and tangents of one patch."""
        return self.patches[patch].evaluate(u, v)

    def _check_regular(self):
        t = np.linspace(0.0, 1.0, 7)
        uu, vv = np.meshgrid(t, t, indexing="ij")
        for i, patch in enumerate(self.patches):
            _, xu, xv = patch.evaluate(uu.ravel(), vv.ravel())
            sg = np.linalg.norm(np.cross(xu, xv), axis=1)
            if sg.min() < REGULARITY_TOL:
                raise GeometryError(f"patch {i}: degenerate parametrization (sqrt(g) = {sg.min():.3e})")

    def _check_outward(self):
        pts, normals, weights = [], [], []
        x, w = np.polynomial.legendre.leggauss(6)
        x, w = 0.5 * (x + 1.0), 0.5 * w
        uu, vv = np.meshgrid(x, x, indexing="ij")
        ww = np.outer(w, w).ravel()
        for patch in self.patches:
            p, xu, xv = patch.evaluate(uu.ravel(), vv.ravel())
            pts.append(p)
            normals.append(np.cross(xu, xv))
            weights.append(ww)
        centroid = np.concatenate(pts).mean(axis=0)
        for i, (p, n, ww_) in enumerate(zip(pts, normals, weights)):
            flux = np.sum(ww_ * np.einsum("ij,ij->i", p - centroid, n))
            if flux <= 0.0:
                raise GeometryError(f"patch {i}: normal points inward")


def _infer_edges(patches, tol):
    nets = {}
    for i, patch in enumerate(patches):
        for e in range(4):
            nets[(i, e)] = (_edge_net(patch, e), _edge_knots(patch, e))
    keys = list(nets)
    links, seen = [], {}
    for a_idx, ka in enumerate(keys):
        na, kva = nets[ka]
        for kb in keys[a_idx + 1:]:
            nb, kvb = nets[kb]
            if na.shape != nb.shape or kva.degree != kvb.degree:
                continue
            flip = None
            if np.max(np.abs(na - nb)) <= tol and np.allclose(kva.knots, kvb.knots, atol=tol):
                flip = False
            elif np.max(np.abs(na - nb[::-1])) <= tol and np.allclose(kva.knots, 1.0 - kvb.knots[::-1], atol=tol):
                flip = True
            if flip is None:
                continue
            for k in (ka, kb):
                if k in seen:
                    raise GeometryError(f"three or more patch edges coincide at patch {k[0]} edge {k[1]}")
            seen[ka] = seen[kb] = True
            links.append(EdgeLink(ka[0], ka[1], kb[0], kb[1], flip))
    return links


def _infer_vertices(patches):
    corners = []
    for i, patch in enumerate(patches):
        for c, (u, v) in enumerate(((0, 0), (1, 0), (1, 1), (0, 1))):
            corners.append(((i, c), patch.evaluate([u], [v], derivatives=False)[0]))
    pts = np.array([p for _, p in corners])
    tree = cKDTree(pts)
    parent = list(range(len(corners)))

    def root(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    for a, b in sorted(tree.query_pairs(MATCH_TOL * max(1.0, np.abs(pts).max()))):
        parent[root(a)] = root(b)
    groups = {}
    for k in range(len(corners)):
        groups.setdefault(root(k), []).append(corners[k][0])
    return [tuple(g) for g in groups.values() if len(g) > 1]


# --------------------------------------------------------------------------
# Text format
# --------------------------------------------------------------------------
def _fmt(values) -> str:
    return " ".join(repr(float(x)) for x in values)


def dumps_geometry(geom: Geometry) -> str:
    lines = [FORMAT_HEADER, str(geom.n_patches)]
    for patch in geom.patches:
        p1, p2 = patch.degrees
        n1, n2 = patch.kv_u.knots.size, patch.kv_v.knots.size
        lines.append(f"{p1} {p2} {n1} {n2}")
        lines.append(_fmt(patch.kv_u.knots))
        lines.append(_fmt(patch.kv_v.knots))
        h = patch.homogeneous
        for c in range(4):
            lines.append(_fmt(h[..., c].ravel(order="F")))
    return "\n".join(lines) + "\n"


def save_geometry(geom: Geometry, path) -> None:
    Path(path).write_text(dumps_geometry(geom), encoding="utf-8")


def loads_geometry(text: str, validate: bool = True) -> Geometry:
    lines = text.splitlines()
    pos = 0

    def next_line(what):
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise GeometryFormatError(f"unexpected end of file, expected {what}", pos + 1)
        pos += 1
        return lines[pos - 1].split(), pos

    def numbers(what, count, kind=float):
        tokens, lineno = next_line(what)
        if len(tokens) != count:
            raise GeometryFormatError(f"expected {count} values for {what}, got {len(tokens)}", lineno)
        try:
            return [kind(t) for t in tokens], lineno
        except ValueError as exc:
            raise GeometryFormatError(f"malformed {what}: {exc}", lineno) from None

    tokens, lineno = next_line("header")
    if " ".join(tokens) != FORMAT_HEADER:
        raise GeometryFormatError(f"expected header '{FORMAT_HEADER}'", lineno)
    (m,), lineno = numbers("patch count", 1, int)
    if m < 1:
        raise GeometryFormatError("patch count must be positive", lineno)
    patches = []
    for _ in range(m):
        (p1, p2, n1, n2), lineno = numbers("patch sizes 'p1 p2 n1 n2'", 4, int)
        k1, k2 = n1 - p1 - 1, n2 - p2 - 1
        if k1 <= 0 or k2 <= 0:
            raise GeometryFormatError("knot counts too small for the degrees", lineno)
        ku, lu = numbers("first knot vector", n1)
        kv, lv = numbers("second knot vector", n2)
        coefs = []
        for c in "xyzw":
            vals, lc = numbers(f"{c}-coefficients", k1 * k2)
            coefs.append(np.array(vals).reshape((k1, k2), order="F"))
        try:
            kvu, kvv = KnotVector(ku, p1), KnotVector(kv, p2)
        except ValueError as exc:
            raise GeometryFormatError(str(exc), lu) from None
        hom = np.stack(coefs, axis=-1)
        if np.any(hom[..., 3] <= 0):
            raise GeometryFormatError("weights must be positive", lc)
        patches.append(PatchSurface.from_homogeneous(kvu, kvv, hom))
    return Geometry(patches, validate=validate)


def load_geometry(path, validate: bool = True) -> Geometry:
    return loads_geometry(Path(path).read_text(encoding="utf-8"), validate=validate)


# --------------------------------------------------------------------------
# Differential geometry
# --------------------------------------------------------------------------
def frame(geom: Geometry, patch: int, u: float, v: float) -> SurfaceFrame:
    x, xu, xv = geom.patches[patch].evaluate([u], [v])
    n = np.cross(xu[0], xv[0])
    return SurfaceFrame(x[0], xu[0], xv[0], n, float(np.linalg.norm(n)))


def surface_area(geom: Geometry, quad_order: int = 8) -> float:
    """Sum of patch areas by tensor Gauss quadrature on every knot span."""
    if quad_order < 1:
        raise ValueError("quad_order must be >= 1")
    x, w = np.polynomial.legendre.leggauss(quad_order)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    total = 0.0
    for patch in geom.patches:
        bu, bv = patch.kv_u.breaks, patch.kv_v.breaks
        u = (bu[:-1, None] + np.diff(bu)[:, None] * x).ravel()
        wu = (np.diff(bu)[:, None] * w).ravel()
        v = (bv[:-1, None] + np.diff(bv)[:, None] * x).ravel()
        wv = (np.diff(bv)[:, None] * w).ravel()
        uu, vv = np.meshgrid(u, v, indexing="ij")
        _, xu, xv = patch.evaluate(uu.ravel(), vv.ravel())
        sg = np.linalg.norm(np.cross(xu, xv), axis=1)
        total += float(np.sum(np.outer(wu, wv).ravel() * sg))
    return total


def check_matching(geom: Geometry, n_samples: int = 17, tol: float = MATCH_TOL,
                   candidate_tol: float = 1e-2):
    """Verify the matching condition on shared patch edges.

    Identified edges are checked, and so are near-coincident edge pairs that
    the topology did not glue (control nets within ``candidate_tol`` times the
    geometry size), which is how slightly displaced patches are reported.
    Returns a list of ``(patch_a, patch_b, max_deviation)``; empty means ok.
    """
    s = np.linspace(0.0, 1.0, n_samples)
    pairs = {(l.patch_a, l.edge_a, l.patch_b, l.edge_b): l.flip for l in geom.edges}
    scale = max(1.0, max(np.abs(p.control_points).max() for p in geom.patches))
    nets = {(i, e): _edge_net(p, e)[:, :3] for i, p in enumerate(geom.patches) for e in range(4)}
    keys = list(nets)
    for ia, ka in enumerate(keys):
        for kb in keys[ia + 1:]:
            if ka + kb in pairs or nets[ka].shape != nets[kb].shape:
                continue
            for flip, nb in ((False, nets[kb]), (True, nets[kb][::-1])):
                dev = np.max(np.abs(nets[ka] - nb))
                if dev <= candidate_tol * scale:
                    pairs[ka + kb] = flip
                    break
    violations = []
    for (pa, ea, pb, eb), flip in pairs.items():
        ua, va = edge_param(ea, s)
        ub, vb = edge_param(eb, 1.0 - s if flip else s)
        xa = geom.patches[pa].evaluate(ua, va, derivatives=False)
        xb = geom.patches[pb].evaluate(ub, vb, derivatives=False)
        dev = float(np.max(np.linalg.norm(xa - xb, axis=1)))
        if dev > tol:
            violations.append((pa, pb, dev))
    return violations


# --------------------------------------------------------------------------
# Shipped shapes
# --------------------------------------------------------------------------
def _bernstein_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Bernstein coefficients of the product of two tensor Bernstein polynomials."""
    (m1, m2), (n1, n2) = (s - 1 for s in a.shape), (s - 1 for s in b.shape)
    out = np.zeros((m1 + n1 + 1, m2 + n2 + 1))
    for i1 in range(m1 + 1):
        for i2 in range(m2 + 1):
            for j1 in range(n1 + 1):
                for j2 in range(n2 + 1):
                    c = (comb(m1, i1) * comb(n1, j1) / comb(m1 + n1, i1 + j1)
                         * comb(m2, i2) * comb(n2, j2) / comb(m2 + n2, i2 + j2))
                    out[i1 + j1, i2 + j2] += c * a[i1, i2] * b[j1, j2]
    return out


def _sphere_cap_coefs() -> np.ndarray:
    """Homogeneous biquartic coefficients of the +z face of the cubed sphere.

    A rational biquadratic quad bounded by circular arcs in the plane is pushed
    through the inverse stereographic projection from the south pole; the
    arcs are images of the great circles ``x = +-z`` and ``y = +-z``.
    """
    c = (np.sqrt(3.0) - 1.0) / 2.0
    m = c + c * c / (c + 1.0)
    we = (c + 1.0) / np.sqrt(2.0)
    # index [i, j]: i along u (plane coordinate a), j along v (coordinate b)
    pa = np.array([[-c, -m, -c], [0.0, 0.0, 0.0], [c, m, c]])
    pb = pa.T.copy()
    w = np.array([[1.0, we, 1.0], [we, we * we, we], [1.0, we, 1.0]])
    na, nb, d = w * pa, w * pb, w
    dd = _bernstein_product(d, d)
    aa = _bernstein_product(na, na)
    bb = _bernstein_product(nb, nb)
    hx = 2.0 * _bernstein_product(na, d)
    hy = 2.0 * _bernstein_product(nb, d)
    hz = dd - aa - bb
    hw = dd + aa + bb
    return np.stack([hx, hy, hz, hw], axis=-1)


_FACE_ROTATIONS = (
    np.eye(3),
    np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]]),
    np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]]),
    np.array([[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]),
    np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]),
    np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]),
)


def unit_sphere(radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> Geometry:
    """Exact six-patch rational biquartic sphere (cubed-sphere layout)."""
    cap = _sphere_cap_coefs()
    kv = KnotVector(np.r_[np.zeros(5), np.ones(5)], 4)
    center = np.asarray(center, dtype=float)
    patches = []
    for rot in _FACE_ROTATIONS:
        hom = cap.copy()
        xyz = hom[..., :3] @ rot.T * radius + hom[..., 3:] * center
        hom[..., :3] = xyz
        patches.append(PatchSurface.from_homogeneous(kv, kv, hom))
    return Geometry(patches)


def flat_square(size: float = 1.0, origin=(0.0, 0.0, 0.0), degree: int = 1) -> Geometry:
    """Single bilinear (or degree-elevated affine) square patch in a z-plane."""
    kv = KnotVector(np.r_[np.zeros(degree + 1), np.ones(degree + 1)], degree)
    g = np.linspace(0.0, 1.0, degree + 1) * size
    cp = np.zeros((degree + 1, degree + 1, 3))
    cp[..., 0], cp[..., 1] = np.meshgrid(g, g, indexing="ij")
    cp += np.asarray(origin, dtype=float)
    return Geometry([PatchSurface(kv, kv, cp)])


def transform(geom: Geometry, scale: float = 1.0, shift=(0.0, 0.0, 0.0)) -> Geometry:
    """Scaled and translated copy; NURBS are invariant under affine maps."""
    if not scale > 0:
        raise GeometryError("scale must be positive to keep normals outward")
    shift = np.asarray(shift, dtype=float)
    patches = [PatchSurface(p.kv_u, p.kv_v, p.control_points * scale + shift, p.weights)
               for p in geom.patches]
    return Geometry(patches)


def shipped_sphere() -> Geometry:
    """The unit sphere asset shipped with the package."""
    from importlib.resources import files

    return load_geometry(files("igabem") / "assets" / "unit_sphere.dat")
