import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ellipe

from slipfd.mesh import (
    BoundaryTag,
    EllipseGeom,
    MeshError,
    TriMesh,
    boundary_normals,
    build_ellipse_mesh,
    build_rect_mesh,
    nodal_normals,
    place_mesh,
    refine_midpoint,
    write_vtk,
)


def exact_ellipse_perimeter(a: float, b: float) -> float:
    # complete elliptic integral of the second kind, scipy's m convention
    m = 1.0 - (b / a) ** 2
    return 4.0 * a * ellipe(m)


class TestEllipseGeom:
    def test_area(self):
        g = EllipseGeom(0.25, 0.125)
        assert g.area == pytest.approx(np.pi * 0.25 * 0.125, rel=1e-15)

    def test_aspect_ratio(self):
        assert EllipseGeom(0.5, 0.125).aspect_ratio == pytest.approx(0.25)

    @pytest.mark.parametrize("a,b", [(0.1, 0.2), (0.1, -0.1), (0.0, 0.0)])
    def test_invalid_axes_rejected(self, a, b):
        with pytest.raises(MeshError):
            EllipseGeom(a, b)

    @given(a=st.floats(0.05, 2.0), ratio=st.floats(0.2, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_perimeter_close_to_elliptic_integral(self, a, ratio):
        b = ratio * a
        g = EllipseGeom(a, b)
        exact = exact_ellipse_perimeter(a, b)
        # Ramanujan's first formula: well under 0.05% over these aspect ratios,
        # plenty for choosing a boundary resolution
        assert g.perimeter == pytest.approx(exact, rel=5e-4)


class TestRectMesh:
    def test_area_exact(self):
        mesh = build_rect_mesh((0.0, 0.0, 2.0, 1.0), 0.25)
        assert mesh.area() == pytest.approx(2.0, rel=1e-14)

    def test_positive_ccw_areas(self):
        mesh = build_rect_mesh((0.0, 0.0, 1.0, 1.0), 0.2)
        assert (mesh.triangle_areas() > 0).all()

    def test_boundary_length_and_tags(self):
        mesh = build_rect_mesh((0.0, 0.0, 2.0, 1.0), 0.25)
        assert mesh.boundary_length() == pytest.approx(6.0, rel=1e-14)
        assert (mesh.boundary_tags == BoundaryTag.OUTER_GAMMA).all()

    def test_spacing_divides_sides(self):
        # requested h1 shrinks to an even divisor of each side
        mesh = build_rect_mesh((0.0, 0.0, 1.0, 1.0), 0.3)
        xs = np.unique(mesh.vertices[:, 0])
        assert np.allclose(np.diff(xs), 0.25)

    @pytest.mark.parametrize(
        "extents,h1",
        [((0, 0, 1, 1), 0.0), ((0, 0, 1, 1), 2.0), ((0, 0, 0, 1), 0.1), ((1, 0, 0, 1), 0.1)],
    )
    def test_invalid_inputs_rejected(self, extents, h1):
        with pytest.raises(MeshError):
            build_rect_mesh(extents, h1)


class TestEllipseMesh:
    def test_boundary_vertices_on_ellipse(self):
        geom = EllipseGeom(0.25, 0.125)
        mesh = build_ellipse_mesh(geom, 1.0 / 16.0)
        bv = mesh.vertices[mesh.boundary_vertices()]
        r = (bv[:, 0] / geom.a) ** 2 + (bv[:, 1] / geom.b) ** 2
        assert np.max(np.abs(r - 1.0)) < 1e-12

    def test_area_converges(self):
        geom = EllipseGeom(0.25, 0.125)
        errs = [abs(build_ellipse_mesh(geom, h).area() - geom.area)
                for h in (1.0 / 16.0, 1.0 / 32.0)]
        assert errs[1] < errs[0] / 3.0

    def test_tags(self):
        mesh = build_ellipse_mesh(EllipseGeom(0.25, 0.125), 1.0 / 16.0)
        assert (mesh.boundary_tags == BoundaryTag.PARTICLE_GAMMA).all()

    def test_too_coarse_rejected(self):
        with pytest.raises(MeshError):
            build_ellipse_mesh(EllipseGeom(0.25, 0.125), 0.2)


@pytest.fixture(scope="module")
def pair():
    coarse = build_rect_mesh((0.0, 0.0, 1.0, 1.0), 0.25)
    return coarse, refine_midpoint(coarse)


class TestRefineMidpoint:

    def test_counts(self, pair):
        coarse, fine = pair
        assert fine.num_triangles == 4 * coarse.num_triangles
        assert fine.n_coarse_vertices == coarse.num_vertices

    def test_area_preserved(self, pair):
        coarse, fine = pair
        assert fine.area() == pytest.approx(coarse.area(), rel=1e-14)

    def test_coarse_vertices_are_prefix(self, pair):
        coarse, fine = pair
        assert np.array_equal(fine.vertices[: coarse.num_vertices], coarse.vertices)

    def test_new_vertices_are_midpoints(self, pair):
        coarse, fine = pair
        mids = 0.5 * (
            coarse.vertices[fine.midpoint_of[:, 0]]
            + coarse.vertices[fine.midpoint_of[:, 1]]
        )
        assert np.allclose(fine.vertices[coarse.num_vertices:], mids, atol=1e-15)

    def test_parent_map(self, pair):
        coarse, fine = pair
        assert np.array_equal(fine.parent_map, np.repeat(np.arange(coarse.num_triangles), 4))

    def test_boundary_split(self, pair):
        coarse, fine = pair
        assert len(fine.boundary_edges) == 2 * len(coarse.boundary_edges)
        assert fine.boundary_length() == pytest.approx(coarse.boundary_length(), rel=1e-14)


class TestNormals:
    def test_rect_normals_outward_axis_aligned(self):
        mesh = build_rect_mesh((0.0, 0.0, 1.0, 1.0), 0.25)
        normals, lengths = boundary_normals(mesh, BoundaryTag.OUTER_GAMMA)
        assert np.allclose(np.hypot(normals[:, 0], normals[:, 1]), 1.0)
        edges = mesh._tagged_edges(BoundaryTag.OUTER_GAMMA)
        mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
        outward = np.einsum("ed,ed->e", normals, mids - 0.5)
        assert (outward > 0).all()
        assert lengths.sum() == pytest.approx(4.0, rel=1e-14)

    def test_ellipse_nodal_normals_outward_unit(self):
        mesh = build_ellipse_mesh(EllipseGeom(0.25, 0.125), 1.0 / 16.0)
        nodes, normals = nodal_normals(mesh, BoundaryTag.PARTICLE_GAMMA)
        assert np.allclose(np.hypot(normals[:, 0], normals[:, 1]), 1.0)
        outward = np.einsum("nd,nd->n", normals, mesh.vertices[nodes])
        assert (outward > 0).all()


class TestPlaceMesh:
    @given(
        cx=st.floats(-5, 5), cy=st.floats(-5, 5),
        theta=st.floats(-10, 10),
    )
    @settings(max_examples=30, deadline=None)
    def test_isometry(self, cx, cy, theta):
        mesh = build_ellipse_mesh(EllipseGeom(0.25, 0.125), 1.0 / 16.0)
        placed = place_mesh(mesh, (cx, cy), theta)
        d0 = np.linalg.norm(mesh.vertices[10] - mesh.vertices[3])
        d1 = np.linalg.norm(placed.vertices[10] - placed.vertices[3])
        assert d1 == pytest.approx(d0, rel=1e-13)

    def test_topology_shared(self):
        mesh = build_ellipse_mesh(EllipseGeom(0.25, 0.125), 1.0 / 16.0)
        placed = place_mesh(mesh, (1.0, 2.0), 0.3)
        assert placed.triangles is mesh.triangles
        assert placed.boundary_edges is mesh.boundary_edges


class TestValidate:
    def test_flipped_triangle_rejected(self):
        mesh = build_rect_mesh((0.0, 0.0, 1.0, 1.0), 0.5)
        bad = TriMesh(
            mesh.vertices, mesh.triangles[:, ::-1].copy(),
            mesh.boundary_edges, mesh.boundary_tags,
        )
        with pytest.raises(MeshError):
            bad.validate()


class TestWriteVtk:
    def test_file_structure(self, tmp_path):
        mesh = build_rect_mesh((0.0, 0.0, 1.0, 1.0), 0.5)
        path = tmp_path / "out.vtk"
        write_vtk(path, mesh, {
            "p": np.arange(mesh.num_vertices, dtype=float),
            "u": np.ones((mesh.num_vertices, 2)),
        })
        text = path.read_text()
        assert f"POINTS {mesh.num_vertices} double" in text
        assert f"CELL_TYPES {mesh.num_triangles}" in text
        assert "SCALARS p double 1" in text
        assert "VECTORS u double" in text
