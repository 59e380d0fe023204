"""Deformable tetrahedral grid and the marching-tetrahedra extraction layer.

Field values follow the inner-positive convention: a vertex with a positive
value is inside the shape.  Extraction places one vertex on every grid edge
whose endpoints change sign and orients triangles so their normals point
toward the negative (outside) side.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .mesh import TriMesh, provenance_code

ZERO_PERTURBATION = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass
class TetGrid:
    vertices: np.ndarray
    tets: np.ndarray
    psi_b: np.ndarray
    psi_e: np.ndarray
    offsets: np.ndarray
    focal_dist: np.ndarray
    bounds: np.ndarray
    resolution: tuple

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def cell_size(self) -> np.ndarray:
        return (self.bounds[1] - self.bounds[0]) / np.asarray(self.resolution, dtype=np.float64)

    @property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.cell_size))

    def positions(self) -> np.ndarray:
        """Vertex positions with the current offsets applied."""
        return self.vertices + self.offsets

    def with_base_sdf(self, values) -> "TetGrid":
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if len(values) != self.n_vertices:
            raise ValueError("base SDF must have one value per grid vertex")
        return dataclasses.replace(self, psi_b=_frozen(values))

    def copy(self) -> "TetGrid":
        return dataclasses.replace(
            self,
            psi_e=self.psi_e.copy(),
            offsets=self.offsets.copy(),
            focal_dist=self.focal_dist.copy(),
        )

    def signed_volumes(self, positions: Optional[np.ndarray] = None) -> np.ndarray:
        p = self.positions() if positions is None else positions
        t = p[self.tets]
        return np.einsum(
            "ij,ij->i", t[:, 1] - t[:, 0], np.cross(t[:, 2] - t[:, 0], t[:, 3] - t[:, 0])
        ) / 6.0

    def vertex_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk)
        ny, nz = self.resolution[1] + 1, self.resolution[2] + 1
        return (ijk[..., 0] * ny + ijk[..., 1]) * nz + ijk[..., 2]

    def locate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Vertex ids (N, 4) and barycentric weights (N, 4) of the rest-pose tet
        containing each point.  Points outside the bounds are clamped in."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        res = np.asarray(self.resolution)
        f = (p - self.bounds[0]) / self.cell_size
        f = np.clip(f, 0.0, res)
        cell = np.minimum(np.floor(f).astype(np.int64), res - 1)
        frac = f - cell
        order = np.argsort(-frac, axis=1, kind="stable")
        fs = np.take_along_axis(frac, order, axis=1)
        weights = np.stack([1.0 - fs[:, 0], fs[:, 0] - fs[:, 1], fs[:, 1] - fs[:, 2], fs[:, 2]], axis=1)
        steps = np.zeros((len(p), 4, 3), dtype=np.int64)
        rows = np.arange(len(p))
        for k in range(3):
            steps[rows, k + 1:, order[:, k]] += 1
        ids = self.vertex_index(cell[:, None, :] + steps)
        return ids, weights

    def interpolate(self, values, points) -> np.ndarray:
        """Piecewise-linear interpolation of a per-vertex field (rest pose)."""
        ids, w = self.locate(points)
        return np.sum(np.asarray(values)[ids] * w, axis=1)


# Kuhn decomposition of the unit cube: one tet per axis permutation, all
# sharing the main diagonal.  Every cell uses the same pattern, so the
# triangulation of a shared face is the same from both sides.
def _cube_tets() -> np.ndarray:
    tets = []
    for perm in itertools.permutations(range(3)):
        corner = np.zeros(3, dtype=np.int64)
        chain = [corner.copy()]
        for axis in perm:
            corner[axis] = 1
            chain.append(corner.copy())
        chain = np.array(chain, dtype=np.float64)
        vol = np.dot(chain[1] - chain[0], np.cross(chain[2] - chain[0], chain[3] - chain[0]))
        if vol < 0:
            chain[[1, 2]] = chain[[2, 1]]
        tets.append(chain.astype(np.int64))
    return np.array(tets)


_CUBE_TETS = _cube_tets()


def build_grid(resolution, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))) -> TetGrid:
    """Regular lattice of ``resolution`` cells per axis, six tets per cell."""
    res = np.broadcast_to(np.asarray(resolution, dtype=np.int64), (3,)).copy()
    if np.any(res < 1):
        raise ValueError(f"grid resolution must be at least 1 cell per axis, got {tuple(res)}")
    bounds = np.asarray(bounds, dtype=np.float64).reshape(2, 3)
    if np.any(bounds[1] <= bounds[0]):
        raise ValueError("grid bounds must have positive extent on every axis")

    axes = [np.linspace(bounds[0, k], bounds[1, k], res[k] + 1) for k in range(3)]
    vertices = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)

    cells = np.stack(
        np.meshgrid(*[np.arange(r) for r in res], indexing="ij"), axis=-1
    ).reshape(-1, 1, 1, 3)
    corners = cells + _CUBE_TETS[None]  # (C, 6, 4, 3)
    ny, nz = res[1] + 1, res[2] + 1
    tets = ((corners[..., 0] * ny + corners[..., 1]) * nz + corners[..., 2]).reshape(-1, 4)

    n = len(vertices)
    zeros = np.zeros(n)
    return TetGrid(
        vertices=vertices,
        tets=tets,
        psi_b=_frozen(zeros),
        psi_e=zeros.copy(),
        offsets=np.zeros((n, 3)),
        focal_dist=zeros.copy(),
        bounds=bounds,
        resolution=tuple(int(r) for r in res),
    )


def _perturb_zeros(field: np.ndarray) -> np.ndarray:
    field = np.array(field, dtype=np.float64, copy=True)
    field[field == 0.0] = ZERO_PERTURBATION
    return field


def marching_tetrahedra(grid: TetGrid, field, label="editable", positions=None) -> TriMesh:
    """Extract the zero level set of a per-vertex field on the (offset) grid."""
    s = _perturb_zeros(np.asarray(field, dtype=np.float64).reshape(-1))
    if len(s) != grid.n_vertices:
        raise ValueError("field must have one value per grid vertex")
    code = provenance_code(label)
    pos = grid.positions() if positions is None else np.asarray(positions, dtype=np.float64)
    n_vert = grid.n_vertices

    inside = s[grid.tets] > 0
    n_in = inside.sum(axis=1)
    active = (n_in > 0) & (n_in < 4)
    tets = grid.tets[active]
    inside = inside[active]
    n_in = n_in[active]

    tri_edges = []  # list of (T, 3, 2) global-vertex edge arrays
    tri_tets = []

    # one vertex on one side: a single triangle around the lone vertex
    lone = (n_in == 1) | (n_in == 3)
    if np.any(lone):
        t = tets[lone]
        ins = inside[lone]
        lone_is_in = n_in[lone] == 1
        lone_local = np.where(lone_is_in, np.argmax(ins, axis=1), np.argmin(ins, axis=1))
        rows = np.arange(len(t))
        others = np.array([[j for j in range(4) if j != i] for i in range(4)])[lone_local]
        apex = t[rows, lone_local]
        rest = np.take_along_axis(t, others, axis=1)
        tri_edges.append(np.stack([np.repeat(apex[:, None], 3, axis=1), rest], axis=-1))
        tri_tets.append(t)

    # two in, two out: quad (a,c)(a,d)(b,d)(b,c), split along (a,c)-(b,d)
    quad = n_in == 2
    if np.any(quad):
        t = tets[quad]
        ins = inside[quad]
        pos_v = np.sort(t[ins].reshape(-1, 2), axis=1)
        neg_v = np.sort(t[~ins].reshape(-1, 2), axis=1)
        a, b = pos_v[:, 0], pos_v[:, 1]
        c, d = neg_v[:, 0], neg_v[:, 1]
        ac = np.stack([a, c], 1)
        ad = np.stack([a, d], 1)
        bd = np.stack([b, d], 1)
        bc = np.stack([b, c], 1)
        tri_edges.append(np.stack([ac, ad, bd], axis=1))
        tri_edges.append(np.stack([ac, bd, bc], axis=1))
        tri_tets.extend([t, t])

    if not tri_edges:
        return TriMesh(
            np.zeros((0, 3)),
            np.zeros((0, 3), dtype=np.int64),
            np.zeros(0, dtype=np.int8),
            crossing_edges=np.zeros((0, 2), dtype=np.int64),
            crossing_values=np.zeros((0, 2)),
        )

    edges = np.concatenate(tri_edges)  # (F, 3, 2)
    face_tets = np.concatenate(tri_tets)  # (F, 4)
    lo = np.minimum(edges[..., 0], edges[..., 1])
    hi = np.maximum(edges[..., 0], edges[..., 1])
    keys = lo * n_vert + hi
    uniq, inverse = np.unique(keys.reshape(-1), return_inverse=True)
    faces = inverse.reshape(-1, 3)

    ea, eb = uniq // n_vert, uniq % n_vert
    sa, sb = s[ea], s[eb]
    t_cross = sa / (sa - sb)
    verts = pos[ea] + t_cross[:, None] * (pos[eb] - pos[ea])

    # orient toward the outside: the normal must point from the positive
    # vertices of the parent tet to the negative ones
    tri = verts[faces]
    normal = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    tet_pos = pos[face_tets]
    tet_in = s[face_tets] > 0
    n_pos = tet_in.sum(axis=1, keepdims=True)
    c_in = (tet_pos * tet_in[..., None]).sum(axis=1) / n_pos
    c_out = (tet_pos * ~tet_in[..., None]).sum(axis=1) / (4 - n_pos)
    flip = np.einsum("ij,ij->i", normal, c_out - c_in) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]

    return TriMesh(
        verts,
        faces,
        np.full(len(faces), code, dtype=np.int8),
        crossing_edges=np.stack([ea, eb], axis=1),
        crossing_values=np.stack([sa, sb], axis=1),
    )


def mt_vertex_gradient(p_a, p_b, s_a, s_b, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Chain an upstream gradient on crossing positions back to (s_a, s_b).

    The crossing is x = p_a + s_a / (s_a - s_b) * (p_b - p_a).
    """
    p_a = np.asarray(p_a, dtype=np.float64)
    p_b = np.asarray(p_b, dtype=np.float64)
    s_a = np.asarray(s_a, dtype=np.float64)
    s_b = np.asarray(s_b, dtype=np.float64)
    up = np.asarray(upstream, dtype=np.float64)
    denom = (s_a - s_b) ** 2
    proj = np.sum(up * (p_b - p_a), axis=-1)
    return -s_b * proj / denom, s_a * proj / denom


def mt_backward(grid: TetGrid, mesh: TriMesh, grad_positions, positions=None):
    """Gradients of a loss on extracted vertex positions w.r.t. the grid field
    and the grid vertex positions (hence offsets)."""
    pos = grid.positions() if positions is None else positions
    ea, eb = mesh.crossing_edges[:, 0], mesh.crossing_edges[:, 1]
    sa, sb = mesh.crossing_values[:, 0], mesh.crossing_values[:, 1]
    g = np.asarray(grad_positions, dtype=np.float64)
    gsa, gsb = mt_vertex_gradient(pos[ea], pos[eb], sa, sb, g)
    grad_field = np.bincount(ea, gsa, grid.n_vertices) + np.bincount(eb, gsb, grid.n_vertices)
    t = (sa / (sa - sb))[:, None]
    grad_pos = np.zeros((grid.n_vertices, 3))
    np.add.at(grad_pos, ea, (1.0 - t) * g)
    np.add.at(grad_pos, eb, t * g)
    return grad_field, grad_pos


def apply_offset_mask(grid: TetGrid, margin: float, offsets=None) -> tuple[np.ndarray, np.ndarray]:
    """Zero offsets at vertices deep outside the editable part.

    Returns the masked offsets and the boolean mask of vertices allowed to move
    (``psi_e >= -margin``).
    """
    offsets = grid.offsets if offsets is None else offsets
    movable = grid.psi_e >= -margin
    return np.where(movable[:, None], offsets, 0.0), movable


def _min_incident_edge(grid: TetGrid) -> np.ndarray:
    v = grid.vertices
    out = np.full(grid.n_vertices, np.inf)
    for i, j in itertools.combinations(range(4), 2):
        a, b = grid.tets[:, i], grid.tets[:, j]
        length = np.linalg.norm(v[a] - v[b], axis=1)
        np.minimum.at(out, a, length)
        np.minimum.at(out, b, length)
    return out


def clamp_offsets(grid: TetGrid, offsets, fraction: float = 0.25, max_repairs: int = 60,
                  edge_limit: Optional[np.ndarray] = None) -> np.ndarray:
    """Limit each offset to ``fraction`` of the shortest incident rest edge,
    then shrink offsets around any tet that would still invert.

    ``edge_limit`` may carry a cached ``_min_incident_edge(grid)``.
    """
    if not 0.0 <= fraction <= 0.5:
        raise ValueError("offset clamp fraction must be in [0, 0.5]")
    offsets = np.array(offsets, dtype=np.float64, copy=True)
    limit = fraction * (_min_incident_edge(grid) if edge_limit is None else edge_limit)
    norm = np.linalg.norm(offsets, axis=1)
    scale = np.where(norm > limit, limit / np.where(norm > 0, norm, 1.0), 1.0)
    offsets *= scale[:, None]
    moved = np.any(offsets != 0.0, axis=1)
    if not np.any(moved):
        return offsets
    tets = grid.tets[moved[grid.tets].any(axis=1)]

    def inverted():
        p = grid.vertices + offsets
        a, b, c, d = (p[tets[:, i]] for i in range(4))
        vol = np.einsum("ij,ij->i", np.cross(b - a, c - a), d - a)
        return vol <= 0

    for _ in range(max_repairs):
        bad = inverted()
        if not np.any(bad):
            return offsets
        offsets[np.unique(tets[bad])] *= 0.5
    offsets[np.unique(tets[inverted()])] = 0.0
    return offsets


def save_grid(path, grid: TetGrid) -> None:
    np.savez_compressed(
        path,
        vertices=grid.vertices,
        tets=grid.tets,
        psi_b=grid.psi_b,
        psi_e=grid.psi_e,
        offsets=grid.offsets,
        focal_dist=grid.focal_dist,
        bounds=grid.bounds,
        resolution=np.asarray(grid.resolution),
    )


def load_grid(path) -> TetGrid:
    path = Path(path)
    with np.load(path) as data:
        return TetGrid(
            vertices=data["vertices"],
            tets=data["tets"],
            psi_b=_frozen(data["psi_b"]),
            psi_e=data["psi_e"].copy(),
            offsets=data["offsets"].copy(),
            focal_dist=data["focal_dist"].copy(),
            bounds=data["bounds"],
            resolution=tuple(int(r) for r in data["resolution"]),
        )
