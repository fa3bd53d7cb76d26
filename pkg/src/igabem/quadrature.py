"""Gauss rules and regularized quadrature for element pairs.

Pairs of elements are classified by the corners they share. Touching pairs
are integrated in relative coordinates: the singular point set is split into
subdomains on which a Duffy-type polynomial map moves the singularity into a
vanishing Jacobian factor. The resulting integrands are analytic, so plain
tensor Gauss rules converge exponentially.

Canonical configurations, in element-local coordinates ``s`` (test element)
and ``t`` (trial element):

* coincident: ``s`` and ``t`` on the same element,
* edge: shared edge ``{y = 0}`` in both elements, equal ``x`` along it,
* vertex: shared vertex at the local origin of both elements.

The actual element orientation enters through one of the eight symmetries of
the unit square per element.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "QuadRule1D",
    "PairType",
    "PairClass",
    "gauss_rule",
    "apply_symmetry",
    "classify_pair",
    "classify_pairs",
    "canonical_rule",
    "integrate_pair",
    "pair_blocks",
]


@dataclass(frozen=True)
class QuadRule1D:
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, f):
        return float(np.sum(self.weights * f(self.nodes)))


@lru_cache(maxsize=None)
def gauss_rule(n: int) -> QuadRule1D:
    """Gauss-Legendre rule with ``n`` points on ``[0, 1]``."""
    if not 1 <= n <= 64:
        raise ValueError("Gauss order must be between 1 and 64")
    x, w = np.polynomial.legendre.leggauss(n)
    nodes, weights = 0.5 * (x + 1.0), 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadRule1D(nodes, weights)


class PairType(enum.IntEnum):
    FAR = 0
    VERTEX = 1
    EDGE = 2
    COINCIDENT = 3


@dataclass(frozen=True)
class PairClass:
    """Pair type plus the square symmetries aligning both elements with the
    canonical configuration (see :func:`apply_symmetry`)."""

    kind: PairType
    sym_a: int = 0
    sym_b: int = 0


_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def apply_symmetry(code: int, t):
    """Map canonical local coordinates into an element's own coordinates.

    ``code`` bit 0 swaps the axes, bit 1 reflects ``x``, bit 2 reflects ``y``.
    """
    t = np.asarray(t, dtype=float)
    x, y = t[..., 0], t[..., 1]
    if code & 1:
        x, y = y, x
    if code & 2:
        x = 1.0 - x
    if code & 4:
        y = 1.0 - y
    return np.stack([x, y], axis=-1)


def _corner_index(code: int, canonical_corner: int) -> int:
    p = apply_symmetry(code, _CORNERS[canonical_corner])
    return int(np.nonzero(np.all(_CORNERS == p, axis=1))[0][0])


# _CORNER_MAP[code, c] = own corner index hit by canonical corner c
_CORNER_MAP = np.array([[_corner_index(code, c) for c in range(4)] for code in range(8)])


def _match_symmetry(vertex_ids, targets):
    """First symmetry sending canonical corners 0, 1, ... onto ``targets``."""
    for code in range(8):
        if all(vertex_ids[_CORNER_MAP[code, c]] == v for c, v in enumerate(targets)):
            return code
    raise ValueError("no square symmetry realises the corner correspondence")


def _classify(va, vb, same: bool) -> PairClass:
    if same:
        return PairClass(PairType.COINCIDENT)
    shared = [v for v in va if v in set(vb)]
    if len(shared) == 0:
        return PairClass(PairType.FAR)
    if len(shared) == 1:
        (v,) = shared
        return PairClass(PairType.VERTEX, _match_symmetry(va, [v]), _match_symmetry(vb, [v]))
    if len(shared) == 2:
        for v1, v2 in (shared, shared[::-1]):
            try:
                sa = _match_symmetry(va, [v1, v2])
            except ValueError:
                continue
            return PairClass(PairType.EDGE, sa, _match_symmetry(vb, [v1, v2]))
    raise ValueError("elements share more than one edge; geometry is not conforming")


def classify_pair(disc, elem_a: int, elem_b: int) -> PairClass:
    """Singularity class of two elements from their shared corners.

    Corners are identified geometrically, so adjacency across glued patch
    edges (in any orientation) is detected like adjacency inside a patch.
    """
    _, vid = disc.element_corners()
    return _classify(list(vid[elem_a]), list(vid[elem_b]), elem_a == elem_b)


def classify_pairs(disc, a, b):
    """Vectorized classification returning ``(kind, sym_a, sym_b)`` arrays."""
    _, vid = disc.element_corners()
    a, b = np.asarray(a), np.asarray(b)
    va, vb = vid[a], vid[b]
    n_shared = (va[:, :, None] == vb[:, None, :]).sum(axis=(1, 2))
    kind = np.full(a.shape, PairType.FAR, dtype=np.int8)
    sym_a = np.zeros(a.shape, dtype=np.int8)
    sym_b = np.zeros(a.shape, dtype=np.int8)
    for k in np.nonzero((n_shared > 0) | (a == b))[0]:
        c = _classify(list(va[k]), list(vb[k]), a[k] == b[k])
        kind[k], sym_a[k], sym_b[k] = c.kind, c.sym_a, c.sym_b
    return kind, sym_a, sym_b


# --------------------------------------------------------------------------
# Canonical rules on [0,1]^2 x [0,1]^2
# --------------------------------------------------------------------------
def _tensor(n: int, dim: int):
    r = gauss_rule(n)
    grids = np.meshgrid(*([r.nodes] * dim), indexing="ij")
    wgrids = np.meshgrid(*([r.weights] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return pts, w


def _coincident_rule(n):
    q, w = _tensor(n, 4)
    t, s, a1, a2 = q.T
    sa, sb, ws = [], [], []
    for swap in (False, True):
        z1, z2 = (t * s, t) if swap else (t, t * s)
        for s1 in (1.0, -1.0):
            for s2 in (1.0, -1.0):
                x1 = (1.0 - z1) * a1 + (z1 if s1 < 0 else 0.0)
                x2 = (1.0 - z2) * a2 + (z2 if s2 < 0 else 0.0)
                sa.append(np.stack([x1, x2], axis=-1))
                sb.append(np.stack([x1 + s1 * z1, x2 + s2 * z2], axis=-1))
                ws.append(w * t * (1.0 - z1) * (1.0 - z2))
    return np.concatenate(sa), np.concatenate(sb), np.concatenate(ws)


def _edge_rule(n):
    q, w = _tensor(n, 4)
    t, s1, s2, a = q.T
    sa, sb, ws = [], [], []
    for largest in range(3):
        coords = [t * s1, t * s2]
        coords.insert(largest, t)
        z, y1, y2 = coords
        for sign in (1.0, -1.0):
            x1 = (1.0 - z) * a + (z if sign < 0 else 0.0)
            sa.append(np.stack([x1, y1], axis=-1))
            sb.append(np.stack([x1 + sign * z, y2], axis=-1))
            ws.append(w * t * t * (1.0 - z))
    return np.concatenate(sa), np.concatenate(sb), np.concatenate(ws)


def _vertex_rule(n):
    q, w = _tensor(n, 4)
    t, r1, r2, r3 = q.T
    sa, sb, ws = [], [], []
    for largest in range(4):
        coords = [t * r1, t * r2, t * r3]
        coords.insert(largest, t)
        sa.append(np.stack(coords[:2], axis=-1))
        sb.append(np.stack(coords[2:], axis=-1))
        ws.append(w * t ** 3)
    return np.concatenate(sa), np.concatenate(sb), np.concatenate(ws)


def _far_rule(n):
    q, w = _tensor(n, 4)
    return q[:, :2], q[:, 2:], w


@lru_cache(maxsize=None)
def canonical_rule(kind: PairType, n: int):
    """Points ``(s, t)`` and weights of the 4D rule for a pair class.

    Coincident pairs use 8 subdomains, edge pairs 6 and vertex pairs 4,
    each carrying an ``n**4`` tensor Gauss rule.
    """
    builder = {
        PairType.FAR: _far_rule,
        PairType.VERTEX: _vertex_rule,
        PairType.EDGE: _edge_rule,
        PairType.COINCIDENT: _coincident_rule,
    }[PairType(kind)]
    out = builder(n)
    for arr in out:
        arr.setflags(write=False)
    return out


# --------------------------------------------------------------------------
# Element-pair integration
# --------------------------------------------------------------------------
def _kernel_fn(disc, kernel):
    if kernel is not None:
        return kernel
    pde = disc.pde
    return pde.kernel


def pair_blocks(disc, a, b, sa, sb, w, kernel=None):
    """Local Galerkin blocks ``(B, nloc, nloc)`` for element pairs.

    ``sa``/``sb`` are ``(B, Q, 2)`` local coordinates in the test/trial
    elements and ``w`` the ``(Q,)`` or ``(B, Q)`` weights on
    ``[0,1]^2 x [0,1]^2``. The surface measures and the element scaling are
    included here.
    """
    kern = _kernel_fn(disc, kernel)
    ea = disc.evaluate_elements(a, sa)
    eb = disc.evaluate_elements(b, sb)
    d = ea["x"] - eb["x"]
    r = np.sqrt(np.einsum("bqc,bqc->bq", d, d))
    scale = 16.0 ** (-disc.level)
    w = np.broadcast_to(w, r.shape) * scale
    tiny = r < 1e-14
    if np.any(tiny):
        r = np.where(tiny, 1.0, r)
        w = np.where(tiny, 0.0, w)
    kw = kern(r) * w
    if disc.is_vector:
        B, Q, nl, _ = ea["vec"].shape
        va = ea["vec"].transpose(0, 2, 1, 3).reshape(B, nl, 3 * Q)
        vb = eb["vec"].transpose(0, 1, 3, 2).reshape(B, 3 * Q, nl)
        kv = np.repeat(kw, 3, axis=1)[:, None, :]
        k2 = disc.pde.wavenumber ** 2
        da = ea["div"].transpose(0, 2, 1)
        return _weighted_product(va, kv, vb) - _weighted_product(da, kw[:, None, :], eb["div"]) / k2
    kw = kw * ea["sqrtg"] * eb["sqrtg"]
    return _weighted_product(ea["phi"].transpose(0, 2, 1), kw[:, None, :], eb["phi"])


def _weighted_product(left, weight, right):
    # (left * weight) @ right with real factors kept real
    if np.iscomplexobj(weight):
        return (left * weight.real) @ right + 1j * ((left * weight.imag) @ right)
    return (left * weight) @ right


def integrate_pair(disc, elem_a: int, elem_b: int, pair_class: PairClass | None = None,
                   order: int | None = None, kernel=None, regularize: bool = True):
    """Galerkin block of one element pair (test ``elem_a``, trial ``elem_b``).

    Without ``regularize`` every class is integrated by the plain tensor
    rule, which is only meaningful as a diagnostic.
    """
    if pair_class is None:
        pair_class = classify_pair(disc, elem_a, elem_b)
    if not isinstance(pair_class.kind, PairType):
        raise TypeError(f"unknown pair class {pair_class.kind!r}")
    kind = pair_class.kind if regularize else PairType.FAR
    if order is None:
        order = disc.default_order("far" if kind == PairType.FAR else "singular")
    s, t, w = canonical_rule(kind, order)
    sa = apply_symmetry(pair_class.sym_a, s)[None]
    sb = apply_symmetry(pair_class.sym_b, t)[None]
    return pair_blocks(disc, [elem_a], [elem_b], sa, sb, w, kernel)[0]
