"""Pure advection substep by the backward method of characteristics.

Each velocity node is traced backward through the frozen carrier field with
one midpoint (RK2) correction, substepped so no backtrack exceeds half an
element; the transported field is then P1-interpolated at the foot.  Feet
leaving the box are clamped to the wall, where inflow nodes take the wall
data.  Feet inside the particle simply pick up the fictitious carrier values,
which exist on the whole box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import OutOfDomainError, PointLocator
from .mesh import BoundaryTag, nodal_normals


class CharacteristicEscapeError(RuntimeError):
    pass


@dataclass
class AdvectionProblem:
    locator: PointLocator       # box fine mesh
    carrier: np.ndarray         # frozen velocity u^{n+1/2}, (2N)
    field: np.ndarray           # transported field at t^n, (2N)
    dt: float
    wall_data: np.ndarray       # Dirichlet data on the outer wall, (2N)
    extents: tuple              # (x0, y0, x1, y1)


def _clamp(points: np.ndarray, extents) -> np.ndarray:
    x0, y0, x1, y1 = extents
    out = points.copy()
    out[:, 0] = np.clip(out[:, 0], x0, x1)
    out[:, 1] = np.clip(out[:, 1], y0, y1)
    return out


def advect(problem: AdvectionProblem) -> np.ndarray:
    """Transport the field over dt; returns the new nodal field."""
    loc = problem.locator
    mesh = loc.mesh
    pts = mesh.vertices.copy()

    speed = np.abs(problem.carrier).max()
    h = np.sqrt(2.0 * np.median(mesh.triangle_areas()))
    n_sub = max(1, int(np.ceil(2.0 * speed * problem.dt / max(h, 1e-300))))
    tau = problem.dt / n_sub

    try:
        for _ in range(n_sub):
            k1 = loc.eval_vector(problem.carrier, pts)
            mid = _clamp(pts - 0.5 * tau * k1, problem.extents)
            k2 = loc.eval_vector(problem.carrier, mid)
            pts = _clamp(pts - tau * k2, problem.extents)
        result = loc.eval_vector(problem.field, pts).ravel()
    except OutOfDomainError as exc:
        raise CharacteristicEscapeError(str(exc)) from exc

    # inflow nodes take the prescribed wall data
    nodes, normals = nodal_normals(mesh, BoundaryTag.OUTER_GAMMA)
    wall = problem.wall_data.reshape(-1, 2)
    inflow = np.einsum("nd,nd->n", wall[nodes], normals) < 0.0
    res2 = result.reshape(-1, 2)
    res2[nodes[inflow]] = wall[nodes[inflow]]
    return res2.ravel()
