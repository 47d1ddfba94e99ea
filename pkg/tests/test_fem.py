import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slipfd import fem
from slipfd.mesh import (
    BoundaryTag,
    EllipseGeom,
    build_ellipse_mesh,
    build_rect_mesh,
    refine_midpoint,
)


@pytest.fixture(scope="module")
def rect():
    return build_rect_mesh((0.0, 0.0, 2.0, 1.0), 0.25)


@pytest.fixture(scope="module")
def rect_fine(rect):
    return refine_midpoint(rect)


@pytest.fixture(scope="module")
def ellipse_fine():
    return refine_midpoint(build_ellipse_mesh(EllipseGeom(0.25, 0.125), 1.0 / 16.0))


def affine_scalar(pts):
    return 0.7 - 1.3 * pts[:, 0] + 0.4 * pts[:, 1]


def affine_vector(pts):
    out = np.empty((len(pts), 2))
    out[:, 0] = 1.0 + 2.0 * pts[:, 0] - 0.5 * pts[:, 1]
    out[:, 1] = -0.3 + 0.7 * pts[:, 0] + 1.1 * pts[:, 1]
    return out


class TestMassMatrices:
    def test_integrates_one_exactly(self, rect):
        M = fem.assemble_mass_scalar(rect)
        ones = np.ones(rect.num_vertices)
        assert ones @ (M @ ones) == pytest.approx(rect.area(), rel=1e-14)

    def test_integrates_p1_products_exactly(self, rect):
        # int over [0,2]x[0,1] of x*y = (x^2/2)|_0^2 * (y^2/2)|_0^1 = 1
        M = fem.assemble_mass_scalar(rect)
        x = rect.vertices[:, 0]
        y = rect.vertices[:, 1]
        assert x @ (M @ y) == pytest.approx(1.0, rel=1e-13)
        # int x^2 = 8/3
        assert x @ (M @ x) == pytest.approx(8.0 / 3.0, rel=1e-13)

    def test_vector_mass_blocks(self, rect):
        Ms = fem.assemble_mass_scalar(rect)
        Mv = fem.assemble_mass_vector(rect)
        v = np.random.default_rng(0).standard_normal(rect.num_vertices)
        vec = np.zeros(2 * rect.num_vertices)
        vec[0::2] = v
        assert vec @ (Mv @ vec) == pytest.approx(v @ (Ms @ v), rel=1e-13)

    def test_integration_weights_sum_to_area(self, rect):
        w = fem.integration_weights(fem.assemble_mass_scalar(rect))
        assert w.sum() == pytest.approx(rect.area(), rel=1e-14)


class TestStiffness:
    def test_rigid_motions_in_kernel(self, rect_fine):
        """Translations and the linearized rotation carry zero strain energy."""
        K = fem.assemble_stiffness_sym(rect_fine, mu=1.7)
        pts = rect_fine.vertices
        fields = [
            np.tile([1.0, 0.0], rect_fine.num_vertices),
            np.tile([0.0, 1.0], rect_fine.num_vertices),
            np.column_stack([-pts[:, 1], pts[:, 0]]).ravel(),
        ]
        scale = abs(K).max()
        for v in fields:
            energy = abs(v @ (K @ v))
            assert energy <= 1e-12 * scale * (v @ v)

    def test_positive_semidefinite(self, rect_fine):
        K = fem.assemble_stiffness_sym(rect_fine, mu=1.0)
        rng = np.random.default_rng(3)
        for _ in range(5):
            v = rng.standard_normal(K.shape[0])
            assert v @ (K @ v) >= -1e-12 * (v @ v)

    def test_pure_shear_energy(self, rect_fine):
        # u = (y, 0): D(u) has entries 1/2 off-diagonal, 2 mu |D|^2 = mu
        mu = 0.8
        K = fem.assemble_stiffness_sym(rect_fine, mu=mu)
        v = np.zeros(2 * rect_fine.num_vertices)
        v[0::2] = rect_fine.vertices[:, 1]
        assert v @ (K @ v) == pytest.approx(mu * rect_fine.area(), rel=1e-13)

    def test_nonpositive_viscosity_rejected(self, rect_fine):
        with pytest.raises(ValueError):
            fem.assemble_stiffness_sym(rect_fine, mu=0.0)


class TestProlongation:
    def test_affine_exact(self, rect, rect_fine):
        P = fem.prolongation(rect_fine)
        coarse_vals = affine_scalar(rect.vertices)
        fine_vals = P @ coarse_vals
        assert np.allclose(fine_vals, affine_scalar(rect_fine.vertices), atol=1e-14)

    def test_requires_lineage(self, rect):
        with pytest.raises(ValueError):
            fem.prolongation(rect)


class TestGradP:
    def test_discrete_divergence_identity(self, rect, rect_fine):
        """G^T u equals the boundary flux data for divergence-free affine u."""
        P = fem.prolongation(rect_fine)
        G = fem.assemble_grad_p(rect_fine, P)
        pts = rect_fine.vertices
        u = np.column_stack([2.0 + 0.3 * pts[:, 1],
                             np.full(len(pts), -1.0)]).ravel()  # div u = 0
        flux = fem.assemble_normal_flux_rhs(rect_fine, BoundaryTag.OUTER_GAMMA,
                                            u)
        assert np.allclose(G.T @ u, P.T @ flux, atol=1e-13)

    def test_linear_pressure_gradient(self, rect, rect_fine):
        """int grad(p).v for p = x recovers int v_x exactly."""
        P = fem.prolongation(rect_fine)
        G = fem.assemble_grad_p(rect_fine, P)
        p = rect.vertices[:, 0]
        Mv = fem.assemble_mass_vector(rect_fine)
        ex = np.tile([1.0, 0.0], rect_fine.num_vertices)
        v = np.random.default_rng(1).standard_normal(2 * rect_fine.num_vertices)
        assert (G @ p) @ v == pytest.approx((Mv @ ex) @ v, rel=1e-12)


class TestNormalFlux:
    def test_divergence_theorem_roundoff(self, ellipse_fine):
        # u = (x, y): int_gamma u.n = 2 * area for the closed particle boundary
        u = ellipse_fine.vertices.ravel()
        flux = fem.assemble_normal_flux_rhs(
            ellipse_fine, BoundaryTag.PARTICLE_GAMMA, u)
        # hats sum to one, so the total flux is the boundary integral of u.n;
        # gamma is a polygon, whose enclosed area the identity is exact for
        poly_area = ellipse_fine.area()
        assert flux.sum() == pytest.approx(2.0 * poly_area, rel=1e-12)

    def test_constant_field_closed_boundary(self, ellipse_fine):
        u = np.tile([0.8, -0.4], ellipse_fine.num_vertices)
        flux = fem.assemble_normal_flux_rhs(
            ellipse_fine, BoundaryTag.PARTICLE_GAMMA, u)
        assert abs(flux.sum()) < 1e-13


@pytest.fixture(scope="module")
def loc():
    return fem.PointLocator(refine_midpoint(build_rect_mesh((0.0, 0.0, 2.0, 1.0), 0.25)))


class TestPointLocator:

    @given(x=st.floats(0.0, 2.0), y=st.floats(0.0, 1.0))
    @settings(max_examples=60, deadline=None)
    def test_affine_evaluation_exact(self, loc, x, y):
        pts = np.array([[x, y]])
        vals = affine_scalar(loc.mesh.vertices)
        assert loc.eval_scalar(vals, pts)[0] == pytest.approx(
            affine_scalar(pts)[0], abs=1e-12)

    def test_affine_vector_and_gradient_exact(self, loc):
        field = affine_vector(loc.mesh.vertices).ravel()
        pts = np.array([[0.13, 0.77], [1.99, 0.01], [1.0, 0.5]])
        vals = loc.eval_vector(field, pts)
        assert np.allclose(vals, affine_vector(pts), atol=1e-12)
        grads = loc.eval_gradient(field, pts)
        expect = np.array([[2.0, -0.5], [0.7, 1.1]])
        assert np.allclose(grads, expect[None], atol=1e-12)

    def test_interp_matrix_partition_of_unity(self, loc):
        rng = np.random.default_rng(5)
        pts = np.column_stack([rng.uniform(0, 2, 40), rng.uniform(0, 1, 40)])
        S = loc.interp_matrix(pts)
        assert np.allclose(np.asarray(S.sum(axis=1)).ravel(), 1.0, atol=1e-12)

    def test_outside_point_raises(self, loc):
        with pytest.raises(fem.OutOfDomainError):
            loc.find(np.array([[5.0, 5.0]]))

    def test_boundary_grazing_point_recovered(self, loc):
        idx = loc.find(np.array([[2.0, 1.0]]))
        assert idx[0] >= 0


class TestConstraints:
    def test_dirichlet_eliminates_boundary(self, rect_fine):
        con = fem.dirichlet_constraint(rect_fine, BoundaryTag.OUTER_GAMMA)
        nodes = rect_fine.boundary_vertices(BoundaryTag.OUTER_GAMMA)
        assert con.n_free == 2 * (rect_fine.num_vertices - len(nodes))
        free = np.random.default_rng(2).standard_normal(con.n_free)
        full = (con.Z @ free).reshape(-1, 2)
        assert np.allclose(full[nodes], 0.0)

    def test_lift_reproduces_boundary_values(self, rect_fine):
        con = fem.dirichlet_constraint(rect_fine, BoundaryTag.OUTER_GAMMA)
        field = affine_vector(rect_fine.vertices).ravel()
        gvals = con.gvals_from_field(field)
        lifted = con.lift(gvals).reshape(-1, 2)
        nodes = rect_fine.boundary_vertices(BoundaryTag.OUTER_GAMMA)
        assert np.allclose(lifted[nodes], field.reshape(-1, 2)[nodes], atol=1e-13)

    def test_slip_frees_tangential_only(self, ellipse_fine):
        con = fem.slip_constraint(ellipse_fine, BoundaryTag.PARTICLE_GAMMA)
        from slipfd.mesh import nodal_normals
        nodes, normals = nodal_normals(ellipse_fine, BoundaryTag.PARTICLE_GAMMA)
        free = np.random.default_rng(4).standard_normal(con.n_free)
        full = (con.Z @ free).reshape(-1, 2)
        # every representable field has zero nodal normal trace
        tr = np.einsum("nd,nd->n", full[nodes], normals)
        assert np.max(np.abs(tr)) < 1e-13

    def test_noslip_pins_both_components(self, ellipse_fine):
        con = fem.noslip_constraint(ellipse_fine, BoundaryTag.PARTICLE_GAMMA)
        nodes = ellipse_fine.boundary_vertices(BoundaryTag.PARTICLE_GAMMA)
        free = np.random.default_rng(6).standard_normal(con.n_free)
        full = (con.Z @ free).reshape(-1, 2)
        assert np.allclose(full[nodes], 0.0)

    def test_basis_complementarity(self, rect_fine):
        con = fem.dirichlet_constraint(rect_fine, BoundaryTag.OUTER_GAMMA)
        cross = con.Z.T @ con.pinned_basis
        assert abs(cross).max() < 1e-14
