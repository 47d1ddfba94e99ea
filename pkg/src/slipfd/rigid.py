"""Rigid-particle kinetics.

Holds the particle state, the explicit hydrodynamic force/torque prediction
of the translational and angular velocities, the correction by the converged
virtual-control terms, and the explicit position update.  The particle mesh
is never deformed: it is re-placed by an exact isometry, so all pairwise
vertex distances are preserved to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fem import PointLocator
from .mesh import BoundaryTag, TriMesh, boundary_normals


class ProximityError(RuntimeError):
    """Particle boundary came within one coarse element of the outer wall."""


@dataclass
class ParticleState:
    X: np.ndarray       # center (2,)
    theta: float
    U: np.ndarray       # (2,)
    omega: float
    a: float
    b: float
    rho_s: float

    @property
    def mass(self) -> float:
        # per unit depth
        return self.rho_s * np.pi * self.a * self.b

    @property
    def inertia(self) -> float:
        return self.mass * (self.a**2 + self.b**2) / 4.0

    @property
    def theta_wrapped(self) -> float:
        """Orientation wrapped to (-pi, pi], reporting only."""
        return float(np.arctan2(np.sin(self.theta), np.cos(self.theta)))


def surface_force_torque(
    placed_fine_b: TriMesh,
    center,
    box_locator: PointLocator,
    u_field: np.ndarray,
    p_fine: np.ndarray,
    mu: float,
    offset: float = 0.0,
):
    """Hydrodynamic force and torque from one-sided box-field stresses.

    The stress sigma = -p I + 2 mu D(u) is evaluated at every particle
    boundary-edge midpoint from the box solution (pressure by P1 evaluation,
    the velocity gradient elementwise constant); with normals pointing out of
    the particle into the fluid, the force on the particle is
    int sigma n dgamma.

    The evaluation points are pushed a distance ``offset`` along the outward
    normal so the stress is sampled on the fluid side of the interface, where
    the box field carries the physical traction; sampling inside the particle
    picks up the fictitious-flow stress instead.
    """
    edges = placed_fine_b._tagged_edges(BoundaryTag.PARTICLE_GAMMA)
    normals, lengths = boundary_normals(placed_fine_b, BoundaryTag.PARTICLE_GAMMA)
    mids = 0.5 * (placed_fine_b.vertices[edges[:, 0]] + placed_fine_b.vertices[edges[:, 1]])
    pts = mids + offset * normals

    p = box_locator.eval_scalar(p_fine, pts)
    grad = box_locator.eval_gradient(u_field, pts)
    sym = 0.5 * (grad + np.transpose(grad, (0, 2, 1)))
    sigma = 2.0 * mu * sym
    sigma[:, 0, 0] -= p
    sigma[:, 1, 1] -= p

    traction = np.einsum("eij,ej->ei", sigma, normals)
    force = np.einsum("ei,e->i", traction, lengths)
    r = mids - np.asarray(center, dtype=float)
    torque = float(np.sum((r[:, 0] * traction[:, 1] - r[:, 1] * traction[:, 0]) * lengths))
    return force, torque


def interior_surface_force_torque(
    placed_fine_b: TriMesh,
    center,
    u_nodal: np.ndarray,
    p_nodal: np.ndarray,
    mu: float,
):
    """Force and torque from the interior-side stress of particle-mesh fields.

    Takes fields carried on the particle mesh vertices (typically the box
    solution interpolated there) and evaluates sigma = -p I + 2 mu D(u) on
    the boundary triangles, one-sided from inside the particle.  This is the
    cheap estimate used for the explicit velocity prediction; it sees the
    fictitious interior flow, so its error does not vanish with dt and the
    implicit correction step has an O(1) velocity mismatch to absorb.
    """
    edges = placed_fine_b._tagged_edges(BoundaryTag.PARTICLE_GAMMA)
    normals, lengths = boundary_normals(placed_fine_b, BoundaryTag.PARTICLE_GAMMA)
    tris = placed_fine_b.triangles
    owner = {}
    for t in range(len(tris)):
        a, b, c = tris[t]
        owner[(a, b)] = t
        owner[(b, c)] = t
        owner[(c, a)] = t
    tri_of_edge = np.array([owner[(i, j)] for i, j in edges])

    verts = placed_fine_b.vertices
    uu = u_nodal.reshape(-1, 2)
    tr = tris[tri_of_edge]
    x = verts[tr]                                  # (E, 3, 2)
    # P1 gradients: grad phi_k = rot90(opposite edge) / (2 area)
    e0 = x[:, 2] - x[:, 1]
    e1 = x[:, 0] - x[:, 2]
    e2 = x[:, 1] - x[:, 0]
    two_area = e2[:, 0] * (-e1[:, 1]) - e2[:, 1] * (-e1[:, 0])
    gphi = np.stack([
        np.stack([-e0[:, 1], e0[:, 0]], axis=1),
        np.stack([-e1[:, 1], e1[:, 0]], axis=1),
        np.stack([-e2[:, 1], e2[:, 0]], axis=1),
    ], axis=1) / two_area[:, None, None]           # (E, 3, 2)
    grad = np.einsum("eki,ekj->eij", uu[tr], gphi)  # du_i/dx_j
    sym = 0.5 * (grad + np.transpose(grad, (0, 2, 1)))
    p_mid = 0.5 * (p_nodal[edges[:, 0]] + p_nodal[edges[:, 1]])
    sigma = 2.0 * mu * sym
    sigma[:, 0, 0] -= p_mid
    sigma[:, 1, 1] -= p_mid

    traction = np.einsum("eij,ej->ei", sigma, normals)
    force = np.einsum("ei,e->i", traction, lengths)
    mids = 0.5 * (verts[edges[:, 0]] + verts[edges[:, 1]])
    r = mids - np.asarray(center, dtype=float)
    torque = float(np.sum((r[:, 0] * traction[:, 1] - r[:, 1] * traction[:, 0]) * lengths))
    return force, torque


def predict_velocity(
    state: ParticleState,
    placed_fine_b: TriMesh,
    box_locator: PointLocator,
    u_star: np.ndarray,
    p_star_fine: np.ndarray,
    mu: float,
    dt: float,
    gravity,
    stress_offset: float = 0.0,
):
    """Explicit prediction (U~, omega~) before the implicit correction."""
    force, torque = surface_force_torque(
        placed_fine_b, state.X, box_locator, u_star, p_star_fine, mu,
        offset=stress_offset,
    )
    U_tilde = state.U + dt * np.asarray(gravity, dtype=float) + (dt / state.mass) * force
    omega_tilde = state.omega + (dt / state.inertia) * torque
    return U_tilde, omega_tilde


def correct_velocity(state: ParticleState, C1, C2: float, dt: float,
                     U_tilde, omega_tilde) -> ParticleState:
    """Apply the converged control corrections: U = U~ + C1/dt, etc."""
    return replace(
        state,
        U=np.asarray(U_tilde, dtype=float) + np.asarray(C1, dtype=float) / dt,
        omega=float(omega_tilde) + float(C2) / dt,
    )


def update_position(state: ParticleState, dt: float) -> ParticleState:
    return replace(
        state,
        X=state.X + dt * state.U,
        theta=state.theta + dt * state.omega,
    )


def check_clearance(placed_fine_b: TriMesh, extents, clearance: float) -> None:
    x0, y0, x1, y1 = extents
    v = placed_fine_b.vertices
    if (
        v[:, 0].min() < x0 + clearance
        or v[:, 0].max() > x1 - clearance
        or v[:, 1].min() < y0 + clearance
        or v[:, 1].max() > y1 - clearance
    ):
        raise ProximityError("particle within one coarse element of the outer wall")


def pairwise_distance_signature(mesh: TriMesh, sample: int = 64) -> np.ndarray:
    """Deterministic subset of pairwise vertex distances (rigidity checks)."""
    n = mesh.num_vertices
    idx = np.unique(np.linspace(0, n - 1, min(sample, n)).astype(int))
    pts = mesh.vertices[idx]
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff**2).sum(-1))[np.triu_indices(len(idx), 1)]
