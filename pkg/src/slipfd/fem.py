"""P1 finite-element machinery on the two meshes.

The velocity/pressure pair is the Bercovier--Pironneau one: continuous P1
pressure on a coarse triangulation, continuous P1 velocity (per component) on
its midpoint refinement.  Vector degrees of freedom are interleaved as
``[u0x, u0y, u1x, u1y, ...]``.

All P1 x P1 products are integrated exactly, including the boundary terms;
the least-squares gradient identities rely on this.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from matplotlib.tri import Triangulation, TrapezoidMapTriFinder

from .mesh import BoundaryTag, TriMesh, nodal_normals


class OutOfDomainError(RuntimeError):
    """A particle-mesh point (or characteristic foot) left the flow domain."""


# ---------------------------------------------------------------------------
# element geometry


def p1_gradients(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Areas (T,) and constant P1 shape-function gradients (T, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    areas = mesh.triangle_areas()
    grads = np.empty((mesh.num_triangles, 3, 2))
    for k in range(3):
        opp = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
        # gradient of the hat at vertex k: rotate opposite edge by 90 deg
        grads[:, k, 0] = -opp[:, 1]
        grads[:, k, 1] = opp[:, 0]
    grads /= (2.0 * areas)[:, None, None]
    return areas, grads


def _scatter(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


# ---------------------------------------------------------------------------
# volume forms


def assemble_mass_scalar(mesh: TriMesh) -> sp.csr_matrix:
    areas = mesh.triangle_areas()
    tri = mesh.triangles
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    vals = areas[:, None, None] * local[None]
    rows = np.repeat(tri, 3, axis=1)
    cols = np.tile(tri, (1, 3))
    n = mesh.num_vertices
    return _scatter(rows, cols, vals, (n, n))


def assemble_mass_vector(mesh: TriMesh) -> sp.csr_matrix:
    return sp.kron(assemble_mass_scalar(mesh), sp.eye(2), format="csr")


def assemble_stiffness_scalar(mesh: TriMesh) -> sp.csr_matrix:
    """Neumann Laplacian ``int grad(p) . grad(q)`` (pressure preconditioner)."""
    areas, grads = p1_gradients(mesh)
    vals = np.einsum("t,tid,tjd->tij", areas, grads, grads)
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1)
    cols = np.tile(tri, (1, 3))
    n = mesh.num_vertices
    return _scatter(rows, cols, vals, (n, n))


def assemble_stiffness_sym(mesh: TriMesh, mu: float) -> sp.csr_matrix:
    """``2 mu int D(u):D(v)`` with D the symmetric gradient.

    The kernel contains the rigid motions: both translations and the
    linearized rotation (-y, x).
    """
    if mu <= 0:
        raise ValueError("viscosity must be positive")
    areas, grads = p1_gradients(mesh)
    dots = np.einsum("tid,tjd->tij", grads, grads)  # grad(phi_i).grad(phi_j)
    vals = np.empty((mesh.num_triangles, 6, 6))
    for alpha in range(2):
        for beta in range(2):
            blk = grads[:, :, alpha][:, None, :] * grads[:, :, beta][:, :, None]
            # blk[t, i, j] = d_alpha phi_j * d_beta phi_i
            term = (dots if alpha == beta else 0.0) + blk
            vals[:, alpha::2, beta::2] = mu * areas[:, None, None] * term
    dofs = (2 * mesh.triangles[:, :, None] + np.arange(2)).reshape(-1, 6)
    rows = np.repeat(dofs, 6, axis=1)
    cols = np.tile(dofs, (1, 6))
    n = 2 * mesh.num_vertices
    return _scatter(rows, cols, vals, (n, n))


def prolongation(fine: TriMesh) -> sp.csr_matrix:
    """Coarse-to-fine nodal injection for a midpoint-refined mesh."""
    if fine.midpoint_of is None or fine.n_coarse_vertices is None:
        raise ValueError("mesh has no refinement lineage")
    nc = fine.n_coarse_vertices
    nf = fine.num_vertices
    rows = np.concatenate([np.arange(nc), np.arange(nc, nf), np.arange(nc, nf)])
    cols = np.concatenate([np.arange(nc), fine.midpoint_of[:, 0], fine.midpoint_of[:, 1]])
    vals = np.concatenate([np.ones(nc), np.full(2 * (nf - nc), 0.5)])
    return sp.coo_matrix((vals, (rows, cols)), shape=(nf, nc)).tocsr()


def assemble_grad_p(fine: TriMesh, prolong: sp.csr_matrix) -> sp.csr_matrix:
    """``int grad(p) . v`` with p coarse P1, v fine vector P1.

    Assembled on the fine mesh against fine nodal pressures and composed
    with the prolongation; exact, since a coarse hat is itself fine P1.
    """
    areas, grads = p1_gradients(fine)
    tri = fine.triangles
    nfd = 2 * fine.num_vertices
    blocks = []
    for alpha in range(2):
        vals = (areas[:, None, None] / 3.0) * np.broadcast_to(
            grads[:, None, :, alpha], (fine.num_triangles, 3, 3)
        )
        rows = np.repeat(2 * tri + alpha, 3, axis=1)
        cols = np.tile(tri, (1, 3))
        blocks.append(_scatter(rows, cols, vals, (nfd, fine.num_vertices)))
    gf = blocks[0] + blocks[1]
    return (gf @ prolong).tocsr()


# ---------------------------------------------------------------------------
# boundary forms


def assemble_boundary_mass_scalar(mesh: TriMesh, tag: BoundaryTag) -> sp.csr_matrix:
    edges = mesh._tagged_edges(tag)
    lengths = mesh.boundary_edge_lengths(tag)
    local = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    vals = lengths[:, None, None] * local[None]
    rows = np.repeat(edges, 2, axis=1)
    cols = np.tile(edges, (1, 2))
    n = mesh.num_vertices
    return _scatter(rows, cols, vals, (n, n))


def assemble_boundary_mass_gamma(mesh: TriMesh, tag: BoundaryTag = BoundaryTag.PARTICLE_GAMMA) -> sp.csr_matrix:
    return sp.kron(assemble_boundary_mass_scalar(mesh, tag), sp.eye(2), format="csr")


def assemble_normal_flux_rhs(mesh: TriMesh, tag: BoundaryTag, field: np.ndarray) -> np.ndarray:
    """``d_j = int_bnd (w . n) q_j`` for a nodal vector field w on this mesh.

    Uses the exact per-edge normal and exact quadrature for the quadratic
    integrand, so the discrete divergence theorem holds to roundoff for
    divergence-free affine fields.
    """
    edges = mesh._tagged_edges(tag)
    d = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    lengths = np.hypot(d[:, 0], d[:, 1])
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]
    w = field.reshape(-1, 2)
    f0 = np.einsum("ed,ed->e", w[edges[:, 0]], normals)
    f1 = np.einsum("ed,ed->e", w[edges[:, 1]], normals)
    out = np.zeros(mesh.num_vertices)
    np.add.at(out, edges[:, 0], lengths / 6.0 * (2.0 * f0 + f1))
    np.add.at(out, edges[:, 1], lengths / 6.0 * (f0 + 2.0 * f1))
    return out


def integration_weights(mass_scalar: sp.csr_matrix) -> np.ndarray:
    """Exact nodal weights for integrating a P1 function: w_j = int phi_j."""
    return np.asarray(mass_scalar.sum(axis=1)).ravel()


# ---------------------------------------------------------------------------
# point location and the inter-mesh interpolation operator


class PointLocator:
    """Point location + P1 evaluation on one triangulation."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self._tri = Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)
        self._finder = TrapezoidMapTriFinder(self._tri)
        self._areas, self._grads = p1_gradients(mesh)
        self._centroid = mesh.vertices.mean(axis=0)

    def find(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        idx = self._finder(pts[:, 0], pts[:, 1])
        if (idx < 0).any():
            # boundary-grazing points: pull slightly toward the interior
            bad = np.flatnonzero(idx < 0)
            for shrink in (1e-12, 1e-9, 1e-6):
                moved = pts[bad] + shrink * (self._centroid - pts[bad])
                idx[bad] = self._finder(moved[:, 0], moved[:, 1])
                bad = bad[idx[bad] < 0]
                if bad.size == 0:
                    break
            if bad.size:
                raise OutOfDomainError(f"{bad.size} points outside the mesh, e.g. {pts[bad[0]]}")
        return idx

    def barycentric(self, points: np.ndarray, tri_idx: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        verts = self.mesh.vertices[self.mesh.triangles[tri_idx]]
        # lambda_k(x) affine with gradient grads[:, k]; anchor at vertex k
        lam = np.empty((len(pts), 3))
        g = self._grads[tri_idx]
        for k in range(3):
            dx = pts - verts[:, k]
            lam[:, k] = 1.0 + np.einsum("nd,nd->n", dx, g[:, k])
        return lam

    def interp_matrix(self, points: np.ndarray) -> sp.csr_matrix:
        """Sparse nodal-interpolation matrix (n_points x n_vertices), scalar."""
        idx = self.find(points)
        lam = self.barycentric(points, idx)
        tri = self.mesh.triangles[idx]
        rows = np.repeat(np.arange(len(idx)), 3)
        return sp.coo_matrix(
            (lam.ravel(), (rows, tri.ravel())),
            shape=(len(idx), self.mesh.num_vertices),
        ).tocsr()

    def eval_scalar(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        idx = self.find(points)
        lam = self.barycentric(points, idx)
        return np.einsum("nk,nk->n", lam, values[self.mesh.triangles[idx]])

    def eval_vector(self, field: np.ndarray, points: np.ndarray) -> np.ndarray:
        idx = self.find(points)
        lam = self.barycentric(points, idx)
        vals = field.reshape(-1, 2)[self.mesh.triangles[idx]]
        return np.einsum("nk,nkd->nd", lam, vals)

    def eval_gradient(self, field: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Elementwise-constant gradient of a vector P1 field: (n, 2, 2),
        entry [n, i, j] = d u_i / d x_j in the containing triangle."""
        idx = self.find(points)
        g = self._grads[idx]
        vals = field.reshape(-1, 2)[self.mesh.triangles[idx]]
        return np.einsum("nki,nkj->nij", vals, g)


def vector_interp(scalar_interp: sp.csr_matrix) -> sp.csr_matrix:
    """Lift a scalar nodal interpolation matrix to interleaved vector dofs."""
    return sp.kron(scalar_interp, sp.eye(2), format="csr")


# ---------------------------------------------------------------------------
# constrained velocity spaces


class DofConstraint:
    """Linear change of basis eliminating pinned velocity directions.

    Full dof vectors decompose as ``u = Z u_free + pinned_basis g`` with the
    columns of ``pinned_basis`` orthonormal unit directions (coordinate axes
    for Dirichlet nodes, nodal normals for slip nodes).
    """

    def __init__(self, ndof: int, pinned_dirs: list[tuple[int, np.ndarray]]):
        # pinned_dirs: (node, unit direction) pairs; a node may appear twice
        self.ndof = ndof
        rows, cols, vals = [], [], []
        for col, (node, direction) in enumerate(pinned_dirs):
            rows.extend([2 * node, 2 * node + 1])
            cols.extend([col, col])
            vals.extend(direction)
        self.pinned_basis = sp.coo_matrix(
            (vals, (rows, cols)), shape=(ndof, len(pinned_dirs))
        ).tocsr()
        self.pinned_nodes = np.array([n for n, _ in pinned_dirs], dtype=np.int64)

        per_node: dict[int, list[np.ndarray]] = {}
        for node, direction in pinned_dirs:
            per_node.setdefault(node, []).append(np.asarray(direction))
        rows, cols, vals = [], [], []
        col = 0
        for node in range(ndof // 2):
            dirs = per_node.get(node)
            if dirs is None:
                for comp in range(2):
                    rows.append(2 * node + comp)
                    cols.append(col)
                    vals.append(1.0)
                    col += 1
            elif len(dirs) == 1:
                n = dirs[0]
                t = np.array([-n[1], n[0]])
                rows.extend([2 * node, 2 * node + 1])
                cols.extend([col, col])
                vals.extend(t)
                col += 1
            # both directions pinned: no free column
        self.Z = sp.coo_matrix((vals, (rows, cols)), shape=(ndof, col)).tocsr()

    @property
    def n_free(self) -> int:
        return self.Z.shape[1]

    def lift(self, gvals: np.ndarray) -> np.ndarray:
        return self.pinned_basis @ gvals

    def gvals_from_field(self, field: np.ndarray) -> np.ndarray:
        """Pinned components of a full nodal field (normal traces for slip)."""
        return self.pinned_basis.T @ field


def dirichlet_constraint(mesh: TriMesh, tag: BoundaryTag = BoundaryTag.OUTER_GAMMA) -> DofConstraint:
    nodes = mesh.boundary_vertices(tag)
    dirs = []
    for n in nodes:
        dirs.append((int(n), np.array([1.0, 0.0])))
        dirs.append((int(n), np.array([0.0, 1.0])))
    return DofConstraint(2 * mesh.num_vertices, dirs)


def slip_constraint(mesh: TriMesh, tag: BoundaryTag = BoundaryTag.PARTICLE_GAMMA) -> DofConstraint:
    """Pin the normal component at every tagged boundary node (v.n free data)."""
    nodes, normals = nodal_normals(mesh, tag)
    dirs = [(int(n), normals[k]) for k, n in enumerate(nodes)]
    return DofConstraint(2 * mesh.num_vertices, dirs)


def noslip_constraint(mesh: TriMesh, tag: BoundaryTag = BoundaryTag.PARTICLE_GAMMA) -> DofConstraint:
    """Pin both components at tagged nodes (the slip-length-zero limit)."""
    nodes = mesh.boundary_vertices(tag)
    dirs = []
    for n in nodes:
        dirs.append((int(n), np.array([1.0, 0.0])))
        dirs.append((int(n), np.array([0.0, 1.0])))
    return DofConstraint(2 * mesh.num_vertices, dirs)
