"""Multi-patch geometries, topology, matching and the text format."""

import numpy as np
import pytest

from igabem.geometry import (
    Geometry,
    GeometryError,
    GeometryFormatError,
    check_matching,
    dumps_geometry,
    flat_square,
    frame,
    load_geometry,
    loads_geometry,
    save_geometry,
    surface_area,
    transform,
    unit_sphere,
)
from igabem.splines import PatchSurface
from conftest import square_patch
from oracles import gauss01


class TestLoad:
    def test_single_square(self, tmp_path):
        path = tmp_path / "square.dat"
        save_geometry(flat_square(), path)
        g = load_geometry(path)
        assert g.n_patches == 1
        assert g.edges == [] or len(g.edges) == 0
        assert not g.is_closed

    def test_sphere_asset_topology(self, sphere):
        assert sphere.n_patches == 6
        assert len(sphere.edges) == 12
        assert sphere.is_closed
        for p in range(6):
            for e in range(4):
                assert sphere.partner(p, e) is not None

    def test_truncated_file_names_line(self, sphere):
        lines = dumps_geometry(sphere).splitlines()
        text = "\n".join(lines[:10])
        with pytest.raises(GeometryFormatError) as err:
            loads_geometry(text)
        assert err.value.lineno is not None
        assert "line" in str(err.value)

    def test_bad_header(self):
        with pytest.raises(GeometryFormatError, match="line 1"):
            loads_geometry("not-a-geometry\n1\n")

    def test_round_trip_bit_exact(self, sphere, tmp_path):
        path = tmp_path / "s.dat"
        save_geometry(sphere, path)
        first = path.read_text()
        g = load_geometry(path)
        save_geometry(g, tmp_path / "t.dat")
        assert (tmp_path / "t.dat").read_text() == first
        for a, b in zip(sphere.patches, g.patches):
            np.testing.assert_array_equal(a.homogeneous, b.homogeneous)

    def test_degenerate_patch_rejected(self):
        p = square_patch()
        cp = np.array(p.control_points)
        cp[1, 1] = cp[0, 0]
        cp[1, 0] = cp[0, 0]
        with pytest.raises(GeometryError):
            Geometry([PatchSurface(p.kv_u, p.kv_v, cp)])

    def test_inward_sphere_rejected(self, sphere):
        flipped = [PatchSurface(p.kv_v, p.kv_u, np.swapaxes(p.control_points, 0, 1),
                                p.weights.T) for p in sphere.patches]
        with pytest.raises(GeometryError):
            Geometry(flipped)


class TestFrame:
    def test_flat_square(self, unit_square):
        f = frame(unit_square, 0, 0.3, 0.8)
        np.testing.assert_allclose(f.normal, [0, 0, 1], atol=1e-15)
        assert f.measure == pytest.approx(1.0, abs=1e-15)

    def test_scaled_square(self):
        assert frame(flat_square(2.0), 0, 0.5, 0.5).measure == pytest.approx(4.0, abs=1e-14)

    def test_sphere_normals_are_positions(self, sphere):
        g = np.linspace(0.05, 0.95, 5)
        for p in range(6):
            for u in g:
                for v in g:
                    f = frame(sphere, p, u, v)
                    np.testing.assert_allclose(f.normal / f.measure, f.point, atol=1e-10)

    def test_outward_flux_of_constant_field(self, sphere):
        x, w = gauss01(12)
        flux = 0.0
        uu, vv = np.meshgrid(x, x, indexing="ij")
        for patch in sphere.patches:
            _, xu, xv = patch.evaluate(uu.ravel(), vv.ravel())
            n = np.cross(xu, xv)
            flux += np.outer(w, w).ravel() @ n[:, 2]
        assert abs(flux) < 1e-12


class TestMatching:
    def test_consistent_squares(self, two_squares):
        assert len(two_squares.edges) == 1
        assert check_matching(two_squares) == []

    def test_displaced_square(self):
        g = Geometry([square_patch(), square_patch((1.0, 0.0, 1e-3))])
        report = check_matching(g)
        assert len(report) == 1
        pa, pb, dev = report[0]
        assert {pa, pb} == {0, 1}
        assert dev == pytest.approx(1e-3, rel=1e-6)

    def test_reversed_edge_is_matched(self):
        g = Geometry([square_patch(), square_patch((1.0, 0.0, 0.0), rotate=True)])
        (link,) = g.edges
        assert link.flip and {link.edge_a, link.edge_b} == {1}
        assert check_matching(g) == []

    def test_sphere(self, sphere):
        assert check_matching(sphere) == []


class TestArea:
    def test_unit_square(self, unit_square):
        assert surface_area(unit_square, 2) == pytest.approx(1.0, abs=1e-15)

    def test_sphere(self, sphere):
        assert surface_area(sphere, 12) == pytest.approx(4 * np.pi, abs=1e-6)

    def test_additive(self, two_squares):
        assert surface_area(two_squares, 3) == pytest.approx(2.0, abs=1e-14)

    def test_order_checked(self, unit_square):
        with pytest.raises(ValueError):
            surface_area(unit_square, 0)


class TestShapes:
    def test_shipped_matches_constructed(self, sphere):
        built = unit_sphere()
        for a, b in zip(built.patches, sphere.patches):
            np.testing.assert_array_equal(a.homogeneous, b.homogeneous)

    def test_transform(self, sphere):
        g = transform(sphere, 2.0, (1.0, 1.0, 0.0))
        x = g.patches[2].evaluate([0.3], [0.6])[0][0]
        assert np.linalg.norm(x - [1.0, 1.0, 0.0]) == pytest.approx(2.0, abs=1e-12)
        assert surface_area(g, 12) == pytest.approx(16 * np.pi, abs=1e-5)
        with pytest.raises(GeometryError):
            transform(sphere, -1.0)
