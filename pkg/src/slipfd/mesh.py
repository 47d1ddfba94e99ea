"""Triangulations for the flow box and the particle.

Two nonmatching meshes are used throughout: a fixed structured mesh of the
rectangular flow domain, and a particle mesh built once for the ellipse in
reference pose (center at the origin, zero orientation) and rigidly moved to
the current particle placement.  Velocity unknowns live on the midpoint
refinement of each mesh, pressures on the unrefined one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class BoundaryTag(Enum):
    OUTER_GAMMA = "outer"
    PARTICLE_GAMMA = "particle"


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class EllipseGeom:
    """Elliptic particle geometry: semi-axes a >= b > 0, placement (X, theta)."""

    a: float
    b: float
    center: tuple[float, float] = (0.0, 0.0)
    theta: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.b <= self.a):
            raise MeshError(f"need 0 < b <= a, got a={self.a}, b={self.b}")

    @property
    def aspect_ratio(self) -> float:
        return self.b / self.a

    @property
    def area(self) -> float:
        return np.pi * self.a * self.b

    @property
    def perimeter(self) -> float:
        # Ramanujan's approximation; used only to pick boundary resolution.
        a, b = self.a, self.b
        return np.pi * (3.0 * (a + b) - np.sqrt((3.0 * a + b) * (a + 3.0 * b)))


@dataclass
class TriMesh:
    """Conforming triangulation with tagged, positively oriented boundary.

    vertices       (N, 2) float
    triangles      (T, 3) int, counterclockwise
    boundary_edges (E, 2) int, directed so the domain lies on the left
    boundary_tags  (E,) array of BoundaryTag
    parent_map     for a midpoint-refined mesh, (T,) coarse parent indices
    midpoint_of    for a midpoint-refined mesh, (N - Nc, 2) coarse endpoints
                   of the edge each new vertex bisects
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    parent_map: np.ndarray | None = None
    midpoint_of: np.ndarray | None = None
    n_coarse_vertices: int | None = None
    _areas: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def triangle_areas(self) -> np.ndarray:
        if self._areas is None:
            p = self.vertices[self.triangles]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            self._areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return self._areas

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def boundary_edge_lengths(self, tag: BoundaryTag | None = None) -> np.ndarray:
        e = self._tagged_edges(tag)
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def boundary_length(self, tag: BoundaryTag | None = None) -> float:
        return float(self.boundary_edge_lengths(tag).sum())

    def _tagged_edges(self, tag: BoundaryTag | None) -> np.ndarray:
        if tag is None:
            return self.boundary_edges
        mask = self.boundary_tags == tag
        if not mask.any():
            raise MeshError(f"no boundary edges tagged {tag}")
        return self.boundary_edges[mask]

    def boundary_vertices(self, tag: BoundaryTag | None = None) -> np.ndarray:
        return np.unique(self._tagged_edges(tag))

    def validate(self) -> None:
        if (self.triangle_areas() <= 0.0).any():
            raise MeshError("mesh contains a non-positive triangle area")


def _extract_boundary(triangles: np.ndarray) -> np.ndarray:
    """Directed boundary edges of a CCW triangulation (domain on the left)."""
    edges = np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    seen = set(map(tuple, edges))
    boundary = [e for e in edges if (e[1], e[0]) not in seen]
    return np.asarray(boundary, dtype=np.int64).reshape(-1, 2)


def build_rect_mesh(extents, h1: float) -> TriMesh:
    """Structured triangulation of the rectangle ``(x0, y0, x1, y1)``.

    The grid spacing in each direction is the largest value <= h1 that
    divides the side evenly; each cell is split into two CCW triangles.
    """
    x0, y0, x1, y1 = map(float, extents)
    if x1 <= x0 or y1 <= y0:
        raise MeshError(f"degenerate rectangle {extents}")
    if h1 <= 0 or h1 > min(x1 - x0, y1 - y0):
        raise MeshError(f"resolution h1={h1} invalid for rectangle {extents}")
    nx = int(np.ceil((x1 - x0) / h1 - 1e-12))
    ny = int(np.ceil((y1 - y0) / h1 - 1e-12))
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    triangles = np.asarray(tris, dtype=np.int64)
    boundary = _extract_boundary(triangles)
    tags = np.full(len(boundary), BoundaryTag.OUTER_GAMMA, dtype=object)
    mesh = TriMesh(vertices, triangles, boundary, tags)
    mesh.validate()
    return mesh


def build_ellipse_mesh(geom: EllipseGeom, h2: float) -> TriMesh:
    """Structured mesh of the ellipse in reference pose.

    A structured disk mesh (rings of equal angular spacing) is mapped through
    (x, y) -> (a x, b y), so boundary vertices land exactly on the ellipse.
    """
    if h2 <= 0 or h2 >= geom.b:
        raise MeshError(f"resolution h2={h2} invalid for ellipse b={geom.b}")
    n_r = max(2, int(np.ceil(geom.a / h2)))
    n_t = max(8, int(np.ceil(geom.perimeter / h2)))
    n_t += n_t % 2

    verts = [(0.0, 0.0)]
    angles = 2.0 * np.pi * np.arange(n_t) / n_t
    for j in range(1, n_r + 1):
        rho = j / n_r
        verts.extend(zip(rho * np.cos(angles), rho * np.sin(angles)))
    vertices = np.asarray(verts)
    vertices[:, 0] *= geom.a
    vertices[:, 1] *= geom.b

    def ring(j, i):
        return 1 + (j - 1) * n_t + (i % n_t)

    tris = []
    for i in range(n_t):
        tris.append((0, ring(1, i), ring(1, i + 1)))
    for j in range(1, n_r):
        for i in range(n_t):
            a_, b_ = ring(j, i), ring(j, i + 1)
            c_, d_ = ring(j + 1, i + 1), ring(j + 1, i)
            if (i + j) % 2 == 0:
                tris.append((a_, d_, c_))
                tris.append((a_, c_, b_))
            else:
                tris.append((a_, d_, b_))
                tris.append((b_, d_, c_))
    triangles = np.asarray(tris, dtype=np.int64)
    boundary = _extract_boundary(triangles)
    tags = np.full(len(boundary), BoundaryTag.PARTICLE_GAMMA, dtype=object)
    mesh = TriMesh(vertices, triangles, boundary, tags)
    mesh.validate()
    return mesh


def refine_midpoint(mesh: TriMesh) -> TriMesh:
    """Split every triangle into four by joining the edge midpoints.

    Coarse vertices keep their indices (they are a prefix of the fine
    vertices); each new vertex records the coarse edge it bisects.
    """
    mesh.validate()
    nv = mesh.num_vertices
    edge_ids: dict[tuple[int, int], int] = {}
    mid_of = []

    def midpoint(i, j):
        key = (i, j) if i < j else (j, i)
        if key not in edge_ids:
            edge_ids[key] = nv + len(mid_of)
            mid_of.append(key)
        return edge_ids[key]

    fine_tris = []
    parents = []
    for t, (a, b, c) in enumerate(mesh.triangles):
        mab, mbc, mca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        fine_tris.extend([(a, mab, mca), (b, mbc, mab), (c, mca, mbc), (mab, mbc, mca)])
        parents.extend([t, t, t, t])

    mid_of = np.asarray(mid_of, dtype=np.int64)
    new_vertices = 0.5 * (mesh.vertices[mid_of[:, 0]] + mesh.vertices[mid_of[:, 1]])
    vertices = np.vstack([mesh.vertices, new_vertices])

    bedges = []
    btags = []
    for (i, j), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        m = midpoint(i, j)
        bedges.extend([(i, m), (m, j)])
        btags.extend([tag, tag])

    fine = TriMesh(
        vertices,
        np.asarray(fine_tris, dtype=np.int64),
        np.asarray(bedges, dtype=np.int64),
        np.asarray(btags, dtype=object),
        parent_map=np.asarray(parents, dtype=np.int64),
        midpoint_of=mid_of,
        n_coarse_vertices=nv,
    )
    fine.validate()
    return fine


def boundary_normals(mesh: TriMesh, tag: BoundaryTag) -> tuple[np.ndarray, np.ndarray]:
    """Outward unit normal and length per tagged boundary edge.

    With CCW-oriented boundary loops the outward normal of the directed
    edge (i -> j) is the tangent rotated clockwise.
    """
    edges = mesh._tagged_edges(tag)
    d = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    lengths = np.hypot(d[:, 0], d[:, 1])
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]
    return normals, lengths


def nodal_normals(mesh: TriMesh, tag: BoundaryTag) -> tuple[np.ndarray, np.ndarray]:
    """Length-weighted averaged unit normals at tagged boundary vertices.

    Returns (vertex indices, unit normals).  Used for the nodal v.n = 0
    constraint; edge-wise normals stay the quadrature-exact ones.
    """
    edges = mesh._tagged_edges(tag)
    normals, lengths = boundary_normals(mesh, tag)
    acc = np.zeros((mesh.num_vertices, 2))
    weighted = normals * lengths[:, None]
    np.add.at(acc, edges[:, 0], 0.5 * weighted)
    np.add.at(acc, edges[:, 1], 0.5 * weighted)
    nodes = np.unique(edges)
    nrm = acc[nodes]
    mag = np.hypot(nrm[:, 0], nrm[:, 1])
    if (mag < 1e-14).any():
        raise MeshError("zero-length nodal normal on boundary")
    return nodes, nrm / mag[:, None]


def place_mesh(mesh: TriMesh, center, theta: float) -> TriMesh:
    """Rigidly transform a reference mesh to placement (center, theta)."""
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    vertices = mesh.vertices @ rot.T + np.asarray(center, dtype=float)
    return TriMesh(
        vertices,
        mesh.triangles,
        mesh.boundary_edges,
        mesh.boundary_tags,
        parent_map=mesh.parent_map,
        midpoint_of=mesh.midpoint_of,
        n_coarse_vertices=mesh.n_coarse_vertices,
    )


def write_vtk(path, mesh: TriMesh, point_data: dict[str, np.ndarray] | None = None) -> None:
    """Legacy ASCII VTK (UNSTRUCTURED_GRID) export for inspection."""
    lines = [
        "# vtk DataFile Version 3.0",
        "slipfd mesh",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.num_vertices} double",
    ]
    for x, y in mesh.vertices:
        lines.append(f"{x:.17g} {y:.17g} 0")
    nt = mesh.num_triangles
    lines.append(f"CELLS {nt} {4 * nt}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["5"] * nt)
    if point_data:
        lines.append(f"POINT_DATA {mesh.num_vertices}")
        for name, values in point_data.items():
            values = np.asarray(values)
            if values.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(f"{v:.17g}" for v in values)
            else:
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{v[0]:.17g} {v[1]:.17g} 0" for v in values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
