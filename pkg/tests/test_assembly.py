"""Dense Galerkin matrices and load vectors."""

import numpy as np
import pytest

from igabem.assembly import assemble_dense, compute_rhs, residual_check, touching_pairs
from igabem.geometry import flat_square
from igabem.operators import HelmholtzSingle, LaplaceSingle, MaxwellSingle
from igabem.solver import gmres
from igabem.spaces import Discretization
from oracles import gauss01


@pytest.fixture(scope="module")
def laplace_l1(sphere):
    d = Discretization(sphere, LaplaceSingle(), 1, 1, 1)
    return d, assemble_dense(d)


class TestDense:
    def test_six_patch_symmetry(self, sphere):
        A = assemble_dense(Discretization(sphere, LaplaceSingle(), 0, 1, 0))
        assert A.shape == (6, 6)
        np.testing.assert_array_equal(A, A.T)
        np.testing.assert_allclose(np.diag(A), A[0, 0], rtol=1e-8)

    @pytest.mark.parametrize("P", [0, 1, 2])
    def test_positive_definite(self, sphere, P):
        A = assemble_dense(Discretization(sphere, LaplaceSingle(), P, 1, 1))
        np.linalg.cholesky(A)

    @pytest.mark.parametrize("L", [0, 1])
    def test_helmholtz_zero_wavenumber(self, sphere, L):
        A = assemble_dense(Discretization(sphere, LaplaceSingle(), 1, 1, L))
        B = assemble_dense(Discretization(sphere, HelmholtzSingle(0.0), 1, 1, L))
        assert np.abs(A - B).max() <= 1e-13 * np.abs(A).max()

    @pytest.mark.parametrize("pde", [LaplaceSingle(), HelmholtzSingle(3.0), MaxwellSingle(3.0),
                                     HelmholtzSingle(2 - 1j)])
    def test_galerkin_symmetry(self, sphere, pde):
        A = assemble_dense(Discretization(sphere, pde, 1, 1, 1))
        assert np.abs(A - A.T).max() <= 1e-10 * np.abs(A).max()
        if np.iscomplexobj(A):
            # complex symmetric, not Hermitian
            assert np.abs(A - A.conj().T).max() > 1e-6 * np.abs(A).max()

    def test_diagonal_scaling(self, sphere):
        diag = [np.diag(assemble_dense(Discretization(sphere, LaplaceSingle(), 0, 1, L))).mean()
                for L in (1, 2, 3)]
        ratios = np.array(diag[:-1]) / diag[1:]
        np.testing.assert_allclose(ratios, 8.0, rtol=0.15)

    @pytest.mark.parametrize("pde", [LaplaceSingle(), MaxwellSingle(3.0)])
    def test_worker_independent(self, sphere, pde):
        d = Discretization(sphere, pde, 1, 1, 1)
        A1 = assemble_dense(d, workers=1)
        for w in (2, 8):
            assert np.array_equal(A1, assemble_dense(d, workers=w))

    def test_touching_pairs(self, sphere):
        d = Discretization(sphere, LaplaceSingle(), 0, 1, 1)
        a, b = touching_pairs(d)
        assert np.all(a <= b)
        # 24 self pairs; each element has 4 edge and 3 or 4 vertex neighbours
        assert np.sum(a == b) == 24
        order = np.lexsort((b, a))
        np.testing.assert_array_equal(order, np.arange(len(a)))


def _rhs_oracle(d, fun, n=16):
    """Load vector from a fine Gauss rule on every element, via element shapes."""
    t, w = gauss01(n)
    tt = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    ww = np.outer(w, w).ravel()
    b = np.zeros(d.n_dofs)
    for e in range(d.n_elements):
        ev = d.evaluate_elements([e], tt)
        g = fun(ev["x"][0])
        loc = (ev["phi"][0] * (g * ev["sqrtg"][0] * ww)[:, None]).sum(axis=0) / d.n_per_dir ** 2
        np.add.at(b, d.element_dofs[e], loc * d.element_signs[e])
    return b


class TestRhs:
    def test_zero(self, sphere):
        d = Discretization(sphere, LaplaceSingle(), 1, 1, 1)
        np.testing.assert_array_equal(compute_rhs(d, lambda x: np.zeros(len(x))), 0.0)

    @pytest.mark.parametrize("L", [0, 1, 3])
    def test_constant_on_flat_square(self, L):
        d = Discretization(flat_square(), LaplaceSingle(), 0, 1, L)
        np.testing.assert_allclose(compute_rhs(d, lambda x: np.ones(len(x))), 4.0 ** -L, rtol=1e-14)

    def test_linear_function_oracle(self, sphere):
        d = Discretization(sphere, LaplaceSingle(), 2, 1, 1)
        fun = lambda x: x[:, 0]  # noqa: E731
        np.testing.assert_allclose(compute_rhs(d, fun, quad_order=10), _rhs_oracle(d, fun), atol=1e-8)

    def test_maxwell_shape_and_type(self, sphere):
        d = Discretization(sphere, MaxwellSingle(3.0), 1, 1, 1)
        b = compute_rhs(d, lambda x: np.tile([1.0, 0.0, 0.0], (len(x), 1)))
        assert b.shape == (d.n_dofs,) and np.iscomplexobj(b)
        # a constant field is a gradient, so its pairing with div-free currents vanishes
        D = d.far_samples(4)["maps"]["div"].toarray().T
        _, s, vt = np.linalg.svd(D)
        null = vt[np.sum(s > 1e-10 * s[0]):]
        np.testing.assert_allclose(null @ b, 0.0, atol=1e-12)


class TestResidual:
    def test_direct_solution(self, laplace_l1):
        _, A = laplace_l1
        b = np.arange(A.shape[0], dtype=float)
        assert residual_check(A, np.linalg.solve(A, b), b) <= 1e-12

    def test_zero_guess(self, laplace_l1):
        _, A = laplace_l1
        b = np.ones(A.shape[0])
        assert residual_check(A, np.zeros_like(b), b) == 1.0

    def test_zero_rhs_absolute(self):
        assert residual_check(np.eye(2), np.array([3.0, 4.0]), np.zeros(2)) == 5.0

    def test_gmres_contract(self, laplace_l1):
        _, A = laplace_l1
        b = np.random.default_rng(0).standard_normal(A.shape[0])
        x, st = gmres(A, b, tol=1e-8)
        assert st.converged and residual_check(A, x, b) <= 1e-7
