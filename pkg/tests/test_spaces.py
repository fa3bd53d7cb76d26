"""Conforming spline spaces, gluing and shape functions."""

import numpy as np
import pytest

from igabem.geometry import Geometry, flat_square
from igabem.operators import LaplaceSingle, MaxwellSingle
from igabem.spaces import Discretization, build_discretization, sample_shapes
from conftest import square_patch

MAXWELL = MaxwellSingle(3.0)


def dim_1d(P, L, rep, smooth_shift=0):
    """Dimension of uniform splines of degree ``P`` with interior multiplicity
    ``rep``, counted from the piecewise polynomial space and its constraints."""
    n_el = 2 ** L
    cont = P - rep  # C^cont across interior breaks
    return n_el * (P + 1) - (n_el - 1) * (cont + 1)


def s2_dim_1d(P, L, rep):
    if P == 0:
        return 2 ** L
    # derivative space: degree P-1, continuity one lower, never below C^-1
    cont = max(P - rep - 1, -1)
    n_el = 2 ** L
    return n_el * P - (n_el - 1) * (cont + 1)


class TestDimensions:
    def test_single_patch_laplace(self, unit_square):
        d = build_discretization(unit_square, LaplaceSingle(), 1, 1, 2)
        assert d.n_dofs == 16

    def test_sphere_constants(self, sphere):
        assert build_discretization(sphere, LaplaceSingle(), 0, 1, 0).n_dofs == 6

    def test_single_patch_maxwell(self, unit_square):
        d = build_discretization(unit_square, MAXWELL, 1, 1, 1)
        assert d.n_dofs == 12
        assert d.n_identifications == 0

    @pytest.mark.parametrize("P", [0, 1, 2, 3])
    @pytest.mark.parametrize("L", [0, 1, 2, 3])
    @pytest.mark.parametrize("rep_kind", ["smooth", "broken"])
    def test_s2_formula(self, sphere, P, L, rep_kind):
        rep = 1 if rep_kind == "smooth" else P + 1
        d = Discretization(sphere, LaplaceSingle(), P, rep, L)
        assert d.n_dofs == 6 * s2_dim_1d(P, L, rep) ** 2

    @pytest.mark.parametrize("P", [1, 2, 3])
    @pytest.mark.parametrize("L", [0, 1, 2, 3])
    def test_s1_formula(self, sphere, P, L):
        d = Discretization(sphere, MAXWELL, P, 1, L)
        k, kq = dim_1d(P, L, 1), s2_dim_1d(P, L, 1)
        per_patch = 2 * k * kq
        # each of the 12 glued edges carries kq normal-flux functions per side
        assert d.n_dofs == 6 * per_patch - 12 * kq
        assert d.n_identifications == 12 * kq

    def test_maxwell_degree_zero(self, unit_square):
        with pytest.raises(ValueError, match="degree"):
            build_discretization(unit_square, MAXWELL, 0, 1, 1)

    def test_matching_violation(self):
        g = Geometry([square_patch(), square_patch((1.0, 0.0, 1e-3))])
        with pytest.raises(ValueError, match="matching"):
            build_discretization(g, LaplaceSingle(), 1, 1, 1)


class TestShapes:
    def test_flat_piola_is_embedding(self):
        d = build_discretization(flat_square(), MAXWELL, 2, 1, 1)
        pts = np.array([[0.1, 0.3], [0.2, 0.45]])
        for s in sample_shapes(d, 0, pts):
            nl = d.blocks[0].n_local
            np.testing.assert_allclose(s.values[:, 2], 0.0, atol=1e-15)
            np.testing.assert_allclose(s.values[:nl, 1], 0.0, atol=1e-15)
            np.testing.assert_allclose(s.values[nl:, 0], 0.0, atol=1e-15)

    @pytest.mark.parametrize("P,rep", [(1, 1), (2, 1), (3, 2), (2, 3)])
    def test_s2_partition_of_unity(self, sphere, rng, P, rep):
        d = Discretization(sphere, LaplaceSingle(), P, rep, 2)
        patch = rng.integers(0, 6, 50)
        u, v = rng.uniform(size=(2, 50))
        vals = d.evaluate_density(np.ones(d.n_dofs), patch, u, v)
        np.testing.assert_allclose(vals, 1.0, atol=1e-13)

    def test_points_outside_element(self, sphere):
        d = Discretization(sphere, LaplaceSingle(), 1, 1, 1)
        with pytest.raises(ValueError):
            sample_shapes(d, 0, [[0.9, 0.9]])

    @pytest.mark.parametrize("rotate", [False, True])
    @pytest.mark.parametrize("P", [1, 2])
    def test_normal_continuity(self, rotate, P):
        g = Geometry([square_patch(), square_patch((1.0, 0.0, 0.0), rotate=rotate)])
        d = build_discretization(g, MAXWELL, P, 1, 1)
        s = np.linspace(0.02, 0.96, 9)  # off the element breaks
        u1 = np.ones(9) if rotate else np.zeros(9)
        v1 = 1.0 - s if rotate else s
        for j in range(d.n_dofs):
            c = np.zeros(d.n_dofs)
            c[j] = 1.0
            left = d.evaluate_density(c, np.zeros(9, int), np.ones(9), s)
            right = d.evaluate_density(c, np.ones(9, int), u1, v1)
            np.testing.assert_allclose(left[:, 0], right[:, 0], atol=1e-12)

    def test_divergence_matches_finite_differences(self, sphere, rng):
        d = Discretization(sphere, MAXWELL, 2, 1, 1)
        h = 1e-5

        def ref_field(e, t):
            ev = d.evaluate_elements([e], t[None])
            J = np.stack([ev["xu"][0], ev["xv"][0]], axis=-1)  # (n, 3, 2)
            # vec = J jhat; recover jhat by least squares per point
            out = np.empty((t.shape[0], d.nloc, 2))
            for q in range(t.shape[0]):
                out[q] = np.linalg.lstsq(J[q], ev["vec"][0, q].T, rcond=None)[0].T
            return out, ev["div"][0]

        for e in rng.integers(0, d.n_elements, 4):
            t = rng.uniform(0.2, 0.8, (3, 2))
            _, div = ref_field(e, t)
            du = (ref_field(e, t + [h, 0])[0][..., 0] - ref_field(e, t - [h, 0])[0][..., 0]) / (2 * h)
            dv = (ref_field(e, t + [0, h])[0][..., 1] - ref_field(e, t - [0, h])[0][..., 1]) / (2 * h)
            # element-local derivatives carry the factor 2^L
            np.testing.assert_allclose(div, (du + dv) * 2 ** d.level, rtol=1e-4, atol=1e-4 * np.abs(div).max())


class TestNestedness:
    @pytest.mark.parametrize("kind,P", [("laplace", 2), ("laplace", 3), ("maxwell", 2)])
    def test_refinement_contains_coarse(self, sphere, rng, kind, P):
        pde = LaplaceSingle() if kind == "laplace" else MAXWELL
        coarse = Discretization(sphere, pde, P, 1, 1)
        fine = Discretization(sphere, pde, P, 1, 2)
        n = 400
        patch = rng.integers(0, 6, n)
        u, v = rng.uniform(size=(2, n))
        c = rng.standard_normal(coarse.n_dofs)
        target = coarse.evaluate_density(c, patch, u, v).reshape(n, -1)
        basis = np.stack([fine.evaluate_density(col, patch, u, v).reshape(n, -1)
                          for col in np.eye(fine.n_dofs)], axis=-1)
        A = basis.reshape(-1, fine.n_dofs)
        coef, *_ = np.linalg.lstsq(A, target.ravel(), rcond=None)
        resid = np.linalg.norm(A @ coef - target.ravel()) / np.linalg.norm(target)
        assert resid <= 1e-10
