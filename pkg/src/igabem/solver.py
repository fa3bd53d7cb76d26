"""Krylov solvers that touch the operator only through products.

Operators are anything :func:`scipy.sparse.linalg.aslinearoperator`
accepts: arrays, sparse matrices, or objects with ``shape``, ``dtype`` and
``matvec`` such as :class:`igabem.h2.H2Matrix`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator

__all__ = ["LinearOperator", "SolveStats", "as_operator", "gmres", "cg"]


@dataclass
class SolveStats:
    iterations: int = 0
    residual: float = 0.0
    converged: bool = False
    wall_time: float = 0.0
    matvecs: int = 0
    history: list = field(default_factory=list)
    message: str = ""


def as_operator(A) -> LinearOperator:
    if isinstance(A, LinearOperator):
        return A
    if callable(A) and not hasattr(A, "shape"):
        raise TypeError("a bare callable needs a shape; wrap it in a LinearOperator")
    return aslinearoperator(A)


def _prepare(A, b):
    op = as_operator(A)
    b = np.asarray(b)
    if b.ndim != 1 or op.shape != (b.size, b.size):
        raise ValueError(f"right-hand side of shape {b.shape} does not fit operator {op.shape}")
    dtype = np.result_type(op.dtype, b.dtype, np.float64)
    return op, b.astype(dtype, copy=False), dtype


def gmres(A, b, tol: float = 1e-8, max_iter: int = 1000, restart: int = 30, x0=None):
    """Restarted GMRES with modified Gram-Schmidt.

    Parameters
    ----------
    A : operator
    b : ndarray
    tol : float
        Target for the true relative residual ``|b - Ax| / |b|``, which is
        recomputed at the end of every cycle.
    max_iter : int
        Total number of Arnoldi steps.
    restart : int
        Krylov dimension per cycle.

    Returns
    -------
    x : ndarray
        Converged solution, or the iterate with the smallest true residual.
    stats : SolveStats
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    op, b, dtype = _prepare(A, b)
    n = b.size
    stats = SolveStats()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        stats.converged = True
        stats.wall_time = time.perf_counter() - t0
        return np.zeros(n, dtype=dtype), stats

    x = np.zeros(n, dtype=dtype) if x0 is None else np.array(x0, dtype=dtype)
    r = b - op.matvec(x) if x0 is not None else b.copy()
    stats.matvecs += x0 is not None
    beta = np.linalg.norm(r)
    best_x, best_res = x.copy(), beta / bnorm
    stats.history.append(best_res)
    if best_res <= tol:
        stats.converged, stats.residual = True, best_res
        stats.wall_time = time.perf_counter() - t0
        return x, stats

    m = max(1, min(restart, n))
    while stats.iterations < max_iter:
        V = np.zeros((m + 1, n), dtype=dtype)
        H = np.zeros((m + 1, m), dtype=dtype)
        cs = np.zeros(m, dtype=dtype)
        sn = np.zeros(m, dtype=dtype)
        g = np.zeros(m + 1, dtype=dtype)
        V[0] = r / beta
        g[0] = beta
        k = 0
        for j in range(m):
            if stats.iterations >= max_iter:
                break
            w = np.asarray(op.matvec(V[j]), dtype=dtype)
            stats.matvecs += 1
            stats.iterations += 1
            before = np.linalg.norm(w)
            for i in range(j + 1):
                H[i, j] = np.vdot(V[i], w)
                w = w - H[i, j] * V[i]
            after = np.linalg.norm(w)
            if after < 0.7 * before:
                # loss of orthogonality: one more sweep
                for i in range(j + 1):
                    c = np.vdot(V[i], w)
                    H[i, j] += c
                    w = w - c * V[i]
                after = np.linalg.norm(w)
            H[j + 1, j] = after
            for i in range(j):
                tmp = np.conj(cs[i]) * H[i, j] + np.conj(sn[i]) * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = tmp
            denom = np.hypot(abs(H[j, j]), abs(H[j + 1, j]))
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j] = H[j, j] / denom
                sn[j] = H[j + 1, j] / denom
            H[j, j] = np.conj(cs[j]) * H[j, j] + np.conj(sn[j]) * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = np.conj(cs[j]) * g[j]
            k = j + 1
            if abs(g[j + 1]) / bnorm <= tol or after == 0.0:
                break
            V[j + 1] = w / after
        if k == 0:
            break
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k > 1 else g[:1] / H[0, 0]
        x = x + V[:k].T @ y
        r = b - op.matvec(x)
        stats.matvecs += 1
        beta = np.linalg.norm(r)
        res = beta / bnorm
        stats.history.append(res)
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol or beta == 0.0:
            break
    stats.residual = float(best_res)
    stats.converged = bool(best_res <= tol)
    if not stats.converged:
        stats.message = "maximum number of iterations reached"
    stats.wall_time = time.perf_counter() - t0
    return best_x, stats


def cg(A, b, tol: float = 1e-8, max_iter: int = 1000, x0=None):
    """Conjugate gradients for Hermitian positive definite operators.

    Stops early, with ``converged = False``, if a search direction of
    non-positive curvature shows that the operator is not definite.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    op, b, dtype = _prepare(A, b)
    n = b.size
    stats = SolveStats()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        stats.converged = True
        stats.wall_time = time.perf_counter() - t0
        return np.zeros(n, dtype=dtype), stats
    x = np.zeros(n, dtype=dtype) if x0 is None else np.array(x0, dtype=dtype)
    r = b - op.matvec(x) if x0 is not None else b.copy()
    p = r.copy()
    rr = np.vdot(r, r).real
    while stats.iterations < max_iter:
        if np.sqrt(rr) / bnorm <= tol:
            # confirm with the true residual
            r = b - op.matvec(x)
            stats.matvecs += 1
            rr = np.vdot(r, r).real
            if np.sqrt(rr) / bnorm <= tol:
                break
            p = r.copy()
        q = np.asarray(op.matvec(p), dtype=dtype)
        stats.matvecs += 1
        stats.iterations += 1
        curv = np.vdot(p, q).real
        if curv <= 0.0:
            stats.message = f"non-positive curvature {curv:.3e} at iteration {stats.iterations}"
            break
        alpha = rr / curv
        x = x + alpha * p
        r = r - alpha * q
        rr_new = np.vdot(r, r).real
        stats.history.append(np.sqrt(rr_new) / bnorm)
        p = r + (rr_new / rr) * p
        rr = rr_new
    res = np.linalg.norm(b - op.matvec(x)) / bnorm
    stats.matvecs += 1
    stats.residual = float(res)
    stats.converged = bool(res <= tol) and not stats.message
    if not stats.converged and not stats.message:
        stats.message = "maximum number of iterations reached"
    stats.wall_time = time.perf_counter() - t0
    return x, stats
