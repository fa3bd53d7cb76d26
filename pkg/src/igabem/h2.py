"""H2-matrix compression on the parametric element grid.

Every patch carries a quadtree whose level-``l`` nodes are the ``4**l``
sub-squares of the unit square; the leaves are the elements. Far-field
interactions between admissible node pairs are approximated by tensor
Chebyshev interpolation of the kernel in the parametric coordinates of both
nodes, so all expansions are two-dimensional (``m**2`` coefficients).

The matrix-vector product follows the usual three phases: leaf moments and
upward transfers, coupling between admissible pairs, downward transfers and
leaf evaluation. Inadmissible leaf pairs form a sparse nearfield matrix.

Moments are taken with the same Gauss rule that the dense path uses for
separated pairs, so H2 and dense matrices differ by interpolation error only.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from .assembly import _ordered_map, far_components, touching_pairs
from .quadrature import PairType, apply_symmetry, canonical_rule, classify_pairs, pair_blocks

__all__ = [
    "AdmissibilityParams",
    "ClusterTree",
    "H2Matrix",
    "build_tree",
    "admissible",
    "assemble_h2",
    "chebyshev_nodes",
    "lagrange_matrix",
    "storage_report",
]

_PAIR_CHUNK = 256
_POINT_BUDGET = 200_000


@dataclass(frozen=True)
class AdmissibilityParams:
    """Compression parameters.

    Parameters
    ----------
    eta : float
        Separation parameter of the admissibility condition.
    m : int
        Interpolation points per parametric direction.
    coupling_storage : {"auto", "store", "recompute"}
        Keep coupling matrices in memory or re-evaluate them in every
        product. ``"auto"`` stores them if they fit ``coupling_budget``
        bytes.
    """

    eta: float = 1.6
    m: int = 8
    coupling_storage: str = "auto"
    coupling_budget: int = 2 ** 28

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.m < 2:
            raise ValueError("need at least 2 interpolation points per direction")
        if self.coupling_storage not in ("auto", "store", "recompute"):
            raise ValueError(f"unknown coupling storage {self.coupling_storage!r}")


def chebyshev_nodes(m: int) -> np.ndarray:
    """Chebyshev-Lobatto points on ``[0, 1]`` in increasing order."""
    return 0.5 * (1.0 - np.cos(np.pi * np.arange(m) / (m - 1)))


def _bary_weights(m):
    w = (-1.0) ** np.arange(m)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def lagrange_matrix(nodes, x):
    """Values ``L[i, k]`` of the Lagrange polynomials on ``nodes`` at ``x``.

    Barycentric form for Chebyshev-Lobatto nodes, exact at the nodes.
    """
    x = np.asarray(x, dtype=float).ravel()
    w = _bary_weights(len(nodes))
    diff = x[:, None] - nodes[None, :]
    hit = diff == 0.0
    diff[hit] = 1.0
    c = w / diff
    L = c / c.sum(axis=1, keepdims=True)
    rows = np.nonzero(hit.any(axis=1))[0]
    L[rows] = hit[rows].astype(float)
    return L


def _tensor_lagrange(nodes, t):
    """``(N, m*m)`` tensor Lagrange values, index ``k1 + m * k2``."""
    lu = lagrange_matrix(nodes, t[:, 0])
    lv = lagrange_matrix(nodes, t[:, 1])
    m = len(nodes)
    return (lv[:, :, None] * lu[:, None, :]).reshape(len(t), m * m)


# --------------------------------------------------------------------------
# Cluster tree
# --------------------------------------------------------------------------
@dataclass
class ClusterTree:
    """Per-patch quadtrees, stored level by level.

    Node ``i`` of level ``l`` is the square ``(patch, ix, iy)`` with
    ``i = patch * 4**l + iy * 2**l + ix``; level ``L`` nodes coincide with
    the elements.
    """

    n_patches: int
    depth: int
    boxes: list = field(default_factory=list)  # per level, (n, 2, 3) lo/hi

    def n_nodes(self, level: int) -> int:
        return self.n_patches * 4 ** level

    @property
    def total_nodes(self) -> int:
        return sum(self.n_nodes(l) for l in range(self.depth + 1))

    def node_square(self, level: int, idx):
        """Patch, lower-left parametric corner and side length of nodes."""
        idx = np.asarray(idx)
        n = 2 ** level
        patch = idx // (n * n)
        cell = idx % (n * n)
        return patch, np.stack([cell % n, cell // n], axis=-1) / n, 1.0 / n

    def children(self, level: int, idx):
        """``(..., 4)`` child indices, ordered ``(a, b) = (0,0),(1,0),(0,1),(1,1)``."""
        idx = np.asarray(idx)
        n = 2 ** level
        patch, cell = idx // (n * n), idx % (n * n)
        ix, iy = cell % n, cell // n
        n2 = 2 * n
        out = [patch * n2 * n2 + (2 * iy + b) * n2 + 2 * ix + a for b in (0, 1) for a in (0, 1)]
        return np.stack(out, axis=-1)

    def leaves_of(self, level: int, idx: int) -> np.ndarray:
        nodes = np.array([idx])
        for l in range(level, self.depth):
            nodes = self.children(l, nodes).ravel()
        return np.sort(nodes)


def build_tree(d, sample: int | None = None, inflate: float = 0.1) -> ClusterTree:
    """Quadtrees over all patches with inflated 3D bounding boxes.

    Leaf boxes come from a sample grid per element sized by the geometry
    degree, parents are unions of their children, and every box is enlarged
    by ``inflate`` times its half width in each direction.
    """
    L = d.level
    tree = ClusterTree(d.n_patches, L)
    boxes = [None] * (L + 1)
    boxes[L] = d.element_boxes(sample).copy()
    for l in range(L - 1, -1, -1):
        ch = tree.children(l, np.arange(tree.n_nodes(l)))
        cb = boxes[l + 1][ch]
        boxes[l] = np.stack([cb[:, :, 0].min(axis=1), cb[:, :, 1].max(axis=1)], axis=1)
    for l in range(L + 1):
        b = boxes[l]
        mid, half = 0.5 * (b[:, 0] + b[:, 1]), 0.5 * (b[:, 1] - b[:, 0]) * (1.0 + inflate)
        boxes[l] = np.stack([mid - half, mid + half], axis=1)
    tree.boxes = boxes
    return tree


def _box_diam(b):
    return np.linalg.norm(b[..., 1, :] - b[..., 0, :], axis=-1)


def _box_dist(a, b):
    gap = np.maximum(0.0, np.maximum(b[..., 0, :] - a[..., 1, :], a[..., 0, :] - b[..., 1, :]))
    return np.linalg.norm(gap, axis=-1)


def admissible(box_a, box_b, eta: float = 1.6):
    """``max(diam) <= eta * dist`` for boxes given as ``(2, 3)`` lo/hi arrays.

    Touching or overlapping boxes are never admissible.
    """
    box_a, box_b = np.asarray(box_a, dtype=float), np.asarray(box_b, dtype=float)
    dist = _box_dist(box_a, box_b)
    ok = (np.maximum(_box_diam(box_a), _box_diam(box_b)) <= eta * dist) & (dist > 0)
    return bool(ok) if np.ndim(ok) == 0 else ok


def block_partition(tree: ClusterTree, eta: float):
    """Dual traversal from all patch-root pairs.

    Returns the admissible pairs per level and the inadmissible leaf pairs
    (ordered pairs, both orientations present).
    """
    n0 = tree.n_nodes(0)
    s, t = np.meshgrid(np.arange(n0), np.arange(n0), indexing="ij")
    s, t = s.ravel(), t.ravel()
    far = []
    for l in range(tree.depth + 1):
        b = tree.boxes[l]
        ok = admissible(b[s], b[t], eta)
        fs_, ft_ = s[ok], t[ok]
        order = np.lexsort((ft_, fs_))
        far.append((fs_[order], ft_[order]))
        s, t = s[~ok], t[~ok]
        if l == tree.depth:
            break
        cs, ct = tree.children(l, s), tree.children(l, t)
        s = np.repeat(cs, 4, axis=1).ravel()
        t = np.tile(ct, (1, 4)).ravel()
    return far, (s, t)


# --------------------------------------------------------------------------
# H2 matrix
# --------------------------------------------------------------------------
class H2Matrix:
    """Compressed Galerkin matrix supporting products only.

    Use ``H @ x`` or :meth:`matvec`; ``shape`` and ``dtype`` follow the
    dense matrix.
    """

    def __init__(self, d, tree, params, far_pairs, near, maps, leaf_lagrange, transfers,
                 node_points, couplings, workers=1):
        self.disc = d
        self.tree = tree
        self.params = params
        self.far_pairs = far_pairs
        self.nearfield = near
        self._maps = maps  # list of (csr map, factor)
        self._leaf_lagrange = leaf_lagrange
        self._transfers = transfers
        self._node_points = node_points
        self._couplings = couplings
        self.workers = workers
        n = d.n_dofs
        self.shape = (n, n)
        self.dtype = np.dtype(d.dtype)

    # -- phases -------------------------------------------------------------
    def _forward(self, x):
        d, tree = self.disc, self.tree
        nq = self._leaf_lagrange.shape[0]
        samples = np.stack([m.T @ x for m, _ in self._maps], axis=-1)  # (E*nq, C)
        samples = samples.reshape(d.n_elements, nq, -1)
        y = [None] * (tree.depth + 1)
        y[tree.depth] = np.einsum("qk,eqc->ekc", self._leaf_lagrange, samples)
        for l in range(tree.depth - 1, -1, -1):
            ch = tree.children(l, np.arange(tree.n_nodes(l)))
            acc = 0.0
            for c in range(4):
                acc = acc + np.einsum("kj,nkc->njc", self._transfers[c], y[l + 1][ch[:, c]])
            y[l] = acc
        return y

    def _couple(self, y):
        z = [None] * len(y)
        dtype = np.result_type(y[-1], self.dtype)
        for level, (s, t) in enumerate(self.far_pairs):
            if len(s) == 0:
                continue
            yl = np.ascontiguousarray(y[level], dtype=dtype)
            zl = np.zeros((self.tree.n_nodes(level),) + yl.shape[1:], dtype=dtype)
            K = self._couplings[level]
            pts = np.ascontiguousarray(self._node_points[level].transpose(0, 2, 1))
            yt = np.ascontiguousarray(yl.transpose(0, 2, 1))
            kappa = complex(self.disc.pde.wavenumber) if self.dtype.kind == "c" else None

            def work(rng, s=s, t=t, K=K, pts=pts, yl=yl, yt=yt, zl=zl):
                lo, hi = rng
                if K is not None:
                    np.add.at(zl, s[lo:hi], K[lo:hi] @ yl[t[lo:hi]])
                elif kappa is None:
                    _couple_real(pts, s, t, yt, zl, lo, hi)
                else:
                    _couple_complex(pts, s, t, yt, zl, lo, hi, kappa)

            # chunks own disjoint target nodes, so no reduction order issues
            chunks = _target_chunks(s, 4 * _PAIR_CHUNK)
            if self.workers > 1 and len(chunks) > 1:
                with ThreadPoolExecutor(self.workers) as pool:
                    list(pool.map(work, chunks))
            else:
                for c in chunks:
                    work(c)
            z[level] = zl
        return z

    def _backward(self, z):
        tree = self.tree
        for l in range(tree.depth):
            if z[l] is None:
                continue
            ch = tree.children(l, np.arange(tree.n_nodes(l)))
            if z[l + 1] is None:
                z[l + 1] = np.zeros((tree.n_nodes(l + 1),) + z[l].shape[1:], dtype=z[l].dtype)
            for c in range(4):
                z[l + 1][ch[:, c]] += np.einsum("kj,njc->nkc", self._transfers[c], z[l])
        leaf = z[tree.depth]
        if leaf is None:
            return None
        vals = np.einsum("qk,ekc->eqc", self._leaf_lagrange, leaf)
        vals = vals.reshape(-1, vals.shape[-1])
        return sum(f * (m @ vals[:, c]) for c, (m, f) in enumerate(self._maps))

    def matvec(self, x):
        x = np.asarray(x)
        if x.shape != (self.shape[1],):
            raise ValueError(f"vector of shape {x.shape} does not match operator {self.shape}")
        out = self.nearfield @ x
        far = self._backward(self._couple(self._forward(x)))
        if far is not None:
            out = out + far
        return out

    def __matmul__(self, x):
        return self.matvec(x)

    def dot(self, x):
        return self.matvec(x)

    def storage_report(self):
        return storage_report(self)


@numba.njit(cache=True, nogil=True, fastmath=True)
def _couple_real(pts, s, t, y, z, lo, hi):
    # z[s] += G(s, t) y[t] for pairs lo..hi, with G = 1 / (4 pi r)
    m2 = pts.shape[2]
    nc = y.shape[1]
    c4 = 1.0 / (4.0 * np.pi)
    g = np.empty(m2)
    for p in range(lo, hi):
        a, b = s[p], t[p]
        for k in range(m2):
            x0, x1, x2 = pts[a, 0, k], pts[a, 1, k], pts[a, 2, k]
            for l in range(m2):
                d0 = x0 - pts[b, 0, l]
                d1 = x1 - pts[b, 1, l]
                d2 = x2 - pts[b, 2, l]
                g[l] = c4 / np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
            for c in range(nc):
                acc = 0.0
                for l in range(m2):
                    acc += g[l] * y[b, c, l]
                z[a, k, c] += acc


@numba.njit(cache=True, nogil=True, fastmath=True)
def _couple_complex(pts, s, t, y, z, lo, hi, kappa):
    # as _couple_real with G = exp(-i kappa r) / (4 pi r)
    m2 = pts.shape[2]
    nc = y.shape[1]
    c4 = 1.0 / (4.0 * np.pi)
    kr, ki = kappa.real, kappa.imag
    gr = np.empty(m2)
    gi = np.empty(m2)
    for p in range(lo, hi):
        a, b = s[p], t[p]
        for k in range(m2):
            x0, x1, x2 = pts[a, 0, k], pts[a, 1, k], pts[a, 2, k]
            for l in range(m2):
                d0 = x0 - pts[b, 0, l]
                d1 = x1 - pts[b, 1, l]
                d2 = x2 - pts[b, 2, l]
                r = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
                amp = np.exp(ki * r) * c4 / r
                gr[l] = amp * np.cos(kr * r)
                gi[l] = -amp * np.sin(kr * r)
            for c in range(nc):
                ar = 0.0
                ai = 0.0
                for l in range(m2):
                    yr = y[b, c, l].real
                    yi = y[b, c, l].imag
                    ar += gr[l] * yr - gi[l] * yi
                    ai += gr[l] * yi + gi[l] * yr
                z[a, k, c] += ar + 1j * ai


def _target_chunks(s, size):
    """Split pair ranges at target boundaries so chunks write disjoint rows."""
    bounds = [0]
    while bounds[-1] < len(s):
        nxt = min(len(s), bounds[-1] + size)
        while nxt < len(s) and s[nxt] == s[nxt - 1]:
            nxt += 1
        bounds.append(nxt)
    return list(zip(bounds[:-1], bounds[1:]))


def _kernel_blocks(d, xs, xt):
    diff = xs[:, :, None, :] - xt[:, None, :, :]
    r = np.sqrt(np.einsum("pijc,pijc->pij", diff, diff))
    return d.pde.kernel(r)


def storage_report(H: H2Matrix) -> dict:
    """Entry counts of the compressed format.

    ``farfield_entries`` counts one ``m**2 x m**2`` coupling matrix per
    admissible pair, whether it is kept in memory or recomputed on the fly
    (``resident_coupling_bytes`` tells which).
    """
    m2 = H.params.m ** 2
    n_far = sum(len(s) for s, _ in H.far_pairs)
    near_entries = int(H.nearfield.nnz)
    far_entries = n_far * m2 * m2
    n_chain = len(H._maps)
    moment_entries = int(sum(m.nnz for m, _ in H._maps)) + H._leaf_lagrange.size
    transfer_entries = 4 * m2 * m2
    item = np.dtype(H.dtype).itemsize
    total = near_entries + far_entries + moment_entries + transfer_entries
    resident = sum(c.nbytes for c in H._couplings if c is not None)
    return {
        "nearfield_entries": near_entries,
        "farfield_entries": far_entries,
        "moment_entries": moment_entries,
        "transfer_entries": transfer_entries,
        "total_entries": total,
        "total_bytes": total * item,
        "admissible_pairs": n_far,
        "chains": n_chain,
        "resident_coupling_bytes": int(resident),
    }


# --------------------------------------------------------------------------
# Assembly
# --------------------------------------------------------------------------
def _nearfield_matrix(d, a, b, n_far, n_near, workers):
    """Sparse matrix of the inadmissible leaf pairs (``a``, ``b`` ordered)."""
    keep = a <= b
    a, b = a[keep], b[keep]
    order = np.lexsort((b, a))
    a, b = a[order], b[order]
    kind, sym_a, sym_b = classify_pairs(d, a, b)
    groups = {}
    for k in range(len(a)):
        groups.setdefault((int(kind[k]), int(sym_a[k]), int(sym_b[k])), []).append(k)
    batches = []
    for key in sorted(groups):
        idx = np.array(groups[key])
        n = n_far if key[0] == PairType.FAR else n_near
        q = canonical_rule(PairType(key[0]), n)[2].size
        size = max(1, _POINT_BUDGET // q)
        for start in range(0, len(idx), size):
            batches.append((key, n, idx[start:start + size]))

    def work(item):
        (k, ca, cb), n, idx = item
        s, t, w = canonical_rule(PairType(k), n)
        sa = np.broadcast_to(apply_symmetry(ca, s), (len(idx),) + s.shape)
        sb = np.broadcast_to(apply_symmetry(cb, t), (len(idx),) + t.shape)
        return idx, pair_blocks(d, a[idx], b[idx], sa, sb, w)

    blocks = np.zeros((len(a), d.nloc, d.nloc), dtype=d.dtype)
    for idx, blk in _ordered_map(work, batches, workers):
        blocks[idx] = blk
    sg = d.element_signs[a][:, :, None] * d.element_signs[b][:, None, :]
    vals = blocks * sg
    rows = np.broadcast_to(d.element_dofs[a][:, :, None], vals.shape)
    cols = np.broadcast_to(d.element_dofs[b][:, None, :], vals.shape)
    off = a != b
    r = np.concatenate([rows.ravel(), cols[off].ravel()])
    c = np.concatenate([cols.ravel(), rows[off].ravel()])
    v = np.concatenate([vals.ravel(), vals[off].ravel()])
    n = d.n_dofs
    N = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    N.sum_duplicates()
    return N


def assemble_h2(d, params: AdmissibilityParams | None = None, quad_order: int | None = None,
                near_order: int | None = None, workers: int = 1) -> H2Matrix:
    """Compressed single layer matrix on ``d``.

    Parameters
    ----------
    d : Discretization
    params : AdmissibilityParams, optional
    quad_order, near_order : int, optional
        Gauss order of separated pairs and of the regularized rules, as in
        :func:`igabem.assembly.assemble_dense`.
    workers : int
        Threads used in assembly and products; results do not depend on it.
    """
    params = params or AdmissibilityParams()
    n_far = quad_order or d.default_order("far")
    n_near = near_order or d.default_order("singular")
    tree = build_tree(d)
    far_pairs, (ns, nt) = block_partition(tree, params.eta)

    nodes = chebyshev_nodes(params.m)
    _, maps = far_components(d, n_far)
    fs = d.far_samples(n_far)
    leaf_lagrange = _tensor_lagrange(nodes, fs["t"])

    # transfer T_c[k_child, k_parent]
    transfers = []
    for b in (0, 1):
        for a in (0, 1):
            tc = np.stack(np.meshgrid((a + nodes) / 2, (b + nodes) / 2, indexing="xy"), axis=-1)
            transfers.append(_tensor_lagrange(nodes, tc.reshape(-1, 2)))

    # images of the interpolation grids of all nodes touched by the far field
    grid = np.stack(np.meshgrid(nodes, nodes, indexing="xy"), axis=-1).reshape(-1, 2)
    node_points = []
    for l in range(tree.depth + 1):
        if len(far_pairs[l][0]) == 0:
            node_points.append(None)
            continue
        idx = np.arange(tree.n_nodes(l))
        patch, corner, h = tree.node_square(l, idx)
        pts = np.empty((len(idx), len(grid), 3))
        uv = corner[:, None, :] + h * grid[None]
        for p in range(tree.n_patches):
            sel = patch == p
            x = d.geometry.patches[p].evaluate(uv[sel, :, 0].ravel(), uv[sel, :, 1].ravel(),
                                               derivatives=False)
            pts[sel] = x.reshape(-1, len(grid), 3)
        node_points.append(pts)

    n_far_pairs = sum(len(s) for s, _ in far_pairs)
    itemsize = np.dtype(d.dtype).itemsize
    need = n_far_pairs * params.m ** 4 * itemsize
    store = params.coupling_storage == "store" or (
        params.coupling_storage == "auto" and need <= params.coupling_budget)
    couplings = []
    for l, (s, t) in enumerate(far_pairs):
        if store and len(s):
            K = np.empty((len(s), params.m ** 2, params.m ** 2), dtype=d.dtype)
            for a in range(0, len(s), _PAIR_CHUNK):
                b = min(len(s), a + _PAIR_CHUNK)
                K[a:b] = _kernel_blocks(d, node_points[l][s[a:b]], node_points[l][t[a:b]])
            couplings.append(K)
        else:
            couplings.append(None)

    near = _nearfield_matrix(d, ns, nt, n_far, n_near, workers)
    return H2Matrix(d, tree, params, far_pairs, near, maps, leaf_lagrange, transfers,
                    node_points, couplings, workers)
