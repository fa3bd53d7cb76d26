"""Dense Galerkin matrices and load vectors.

The dense matrix is assembled in two passes. First every element pair is
integrated with the tensor Gauss rule, written as ``Phi G Phi^T`` where
``Phi`` maps coefficients to weighted samples. Then the touching pairs are
corrected by replacing their Gauss contribution with the regularized rule.
Both passes run over fixed blocks that do not depend on the worker count,
and their results are summed in block order, so the output is bitwise
reproducible for any number of workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp

from .quadrature import PairType, apply_symmetry, canonical_rule, classify_pairs, pair_blocks

__all__ = [
    "assemble_dense",
    "compute_rhs",
    "residual_check",
    "touching_pairs",
    "nearfield_corrections",
    "far_components",
]

_ROW_BLOCK = 512
_POINT_BUDGET = 200_000


def _ordered_map(fn, items, workers):
    """``map`` whose results arrive in input order, bounded in flight."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        for it in items:
            yield fn(it)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        window = 2 * workers
        futures = [pool.submit(fn, it) for it in items[:window]]
        nxt = len(futures)
        for k in range(len(items)):
            yield futures[k].result()
            futures[k] = None
            if nxt < len(items):
                futures.append(pool.submit(fn, items[nxt]))
                nxt += 1


def far_components(d, order):
    """Sample points and ``(map, factor)`` pairs of the bilinear form.

    The Galerkin matrix of the Gauss rule is ``sum factor * M G M^T``.
    """
    fs = d.far_samples(order)
    maps = fs["maps"]
    if d.is_vector:
        k2 = d.pde.wavenumber ** 2
        comps = [(maps[0], 1.0), (maps[1], 1.0), (maps[2], 1.0), (maps["div"], -1.0 / k2)]
    else:
        comps = [(maps["phi"], 1.0)]
    return fs["x"].reshape(-1, 3), comps


def _kernel_matrix(d, xa, xb):
    diff = xa[:, None, :] - xb[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    tiny = r < 1e-14
    r[tiny] = 1.0
    g = d.pde.kernel(r)
    g[tiny] = 0.0
    return g


def touching_pairs(d):
    """Element pairs ``(a, b)`` with ``a <= b`` sharing at least one corner,
    in lexicographic order."""
    _, vid = d.element_corners()
    E = d.n_elements
    inc = sp.csr_matrix((np.ones(vid.size), (np.repeat(np.arange(E), 4), vid.ravel())),
                        shape=(E, int(vid.max()) + 1))
    adj = sp.triu(inc @ inc.T).tocoo()
    order = np.lexsort((adj.col, adj.row))
    return adj.row[order].astype(np.int64), adj.col[order].astype(np.int64)


def _correction_batches(d, a, b, kind, sym_a, sym_b, n_far, n_near):
    groups = {}
    for k in range(len(a)):
        groups.setdefault((int(kind[k]), int(sym_a[k]), int(sym_b[k])), []).append(k)
    batches = []
    for key in sorted(groups):
        idx = np.array(groups[key])
        q = canonical_rule(PairType(key[0]), n_near)[2].size
        size = max(1, _POINT_BUDGET // q)
        for start in range(0, len(idx), size):
            batches.append((key, idx[start:start + size]))
    return batches


def nearfield_corrections(d, n_far=None, n_near=None, workers=1, pairs=None):
    """Regularized minus Gauss blocks for touching pairs.

    Returns ``(a, b, blocks)`` with ``a <= b`` sorted lexicographically; the
    block of ``(b, a)`` is the transpose.
    """
    n_far = n_far or d.default_order("far")
    n_near = n_near or d.default_order("singular")
    a, b = touching_pairs(d) if pairs is None else pairs
    kind, sym_a, sym_b = classify_pairs(d, a, b)
    s_far, t_far, w_far = canonical_rule(PairType.FAR, n_far)
    out = np.zeros((len(a), d.nloc, d.nloc), dtype=d.dtype)

    def work(item):
        (k, ca, cb), idx = item
        s, t, w = canonical_rule(PairType(k), n_near)
        sa = np.broadcast_to(apply_symmetry(ca, s), (len(idx),) + s.shape)
        sb = np.broadcast_to(apply_symmetry(cb, t), (len(idx),) + t.shape)
        near = pair_blocks(d, a[idx], b[idx], sa, sb, w)
        far = pair_blocks(d, a[idx], b[idx], s_far, t_far, w_far)
        return idx, near - far

    batches = _correction_batches(d, a, b, kind, sym_a, sym_b, n_far, n_near)
    for idx, blk in _ordered_map(work, batches, workers):
        out[idx] = blk
    return a, b, out


def _scatter_pairs(A, d, a, b, blocks):
    ga, gb = d.element_dofs[a], d.element_dofs[b]
    sg = d.element_signs[a][:, :, None] * d.element_signs[b][:, None, :]
    vals = blocks * sg
    rows = np.broadcast_to(ga[:, :, None], vals.shape)
    cols = np.broadcast_to(gb[:, None, :], vals.shape)
    np.add.at(A, (rows.ravel(), cols.ravel()), vals.ravel())
    off = a != b
    np.add.at(A, (cols[off].ravel(), rows[off].ravel()), vals[off].ravel())


def assemble_dense(d, quad_order: int | None = None, near_order: int | None = None,
                   workers: int = 1):
    """Galerkin matrix of the single layer operator on ``d``.

    Parameters
    ----------
    d : Discretization
    quad_order : int, optional
        Gauss order for separated pairs, default ``P + 2``.
    near_order : int, optional
        Order of the regularized rules, default ``P + 3``.
    workers : int
        Thread count; the result does not depend on it.

    Returns
    -------
    ndarray of shape ``(n_dofs, n_dofs)``, real for Laplace and complex
    otherwise. The matrix is exactly (complex) symmetric.
    """
    n_far = quad_order or d.default_order("far")
    n_near = near_order or d.default_order("singular")
    x, comps = far_components(d, n_far)
    n = d.n_dofs
    A = np.zeros((n, n), dtype=d.dtype)
    blocks = [slice(s, min(len(x), s + _ROW_BLOCK)) for s in range(0, len(x), _ROW_BLOCK)]
    mats = [(m.tocsr(), m.tocsc(), f) for m, f in comps]

    def work(sl):
        g = _kernel_matrix(d, x[sl], x)
        rows = np.unique(np.concatenate([mc[:, sl].indices for _, mc, _ in mats]))
        acc = np.zeros((len(rows), n), dtype=d.dtype)
        for mr, mc, f in mats:
            gm = (mr @ g.T).T  # G_blk M^T
            part = mc[:, sl][rows] @ gm
            acc += f * part
        return rows, acc

    for rows, acc in _ordered_map(work, blocks, workers):
        A[rows] += acc

    a, b, corr = nearfield_corrections(d, n_far, n_near, workers)
    _scatter_pairs(A, d, a, b, corr)
    return 0.5 * (A + A.T)


def compute_rhs(d, boundary_fun, quad_order: int | None = None):
    """Load vector ``b_i = int g phi_i`` (scalar) or ``int E . j_i`` (Maxwell).

    For Maxwell ``boundary_fun`` returns the field ``E`` whose rotated trace
    ``n x E`` is the data; since the basis is tangential, pairing with ``E``
    equals pairing the tangential part ``(n x E) x n``.
    """
    order = quad_order or d.default_order("far") + 1
    fs = d.far_samples(order)
    pts = fs["x"].reshape(-1, 3)
    vals = np.asarray(boundary_fun(pts))
    maps = fs["maps"]
    if d.is_vector:
        vals = np.broadcast_to(vals, pts.shape)
        return sum(maps[c] @ vals[:, c] for c in range(3)).astype(complex)
    vals = np.broadcast_to(vals, (len(pts),))
    return (maps["phi"] @ vals).astype(np.result_type(vals, d.dtype))


def residual_check(A, x, b) -> float:
    """Relative residual ``|Ax - b| / |b|`` (absolute when ``b = 0``)."""
    r = np.linalg.norm(A @ x - b)
    nb = np.linalg.norm(b)
    return float(r / nb) if nb > 0 else float(r)
