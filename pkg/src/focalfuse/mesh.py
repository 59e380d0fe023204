"""Indexed triangle meshes with per-face provenance labels."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

BACKGROUND = 0
BASE = 1
EDITABLE = 2

_LABELS = {"background": BACKGROUND, "base": BASE, "editable": EDITABLE}


def provenance_code(label) -> int:
    if isinstance(label, str):
        try:
            return _LABELS[label]
        except KeyError:
            raise ValueError(f"unknown provenance label {label!r}") from None
    code = int(label)
    if code not in (BASE, EDITABLE):
        raise ValueError(f"face provenance must be base or editable, got {label!r}")
    return code


@dataclass
class TriMesh:
    """Triangle mesh. Faces are CCW seen from outside.

    ``crossing_edges``/``crossing_values`` are only set for meshes that came
    out of marching tetrahedra: per vertex, the parent grid edge ``(a, b)``
    and the field values ``(s_a, s_b)`` used to place it.
    """

    positions: np.ndarray
    faces: np.ndarray
    face_provenance: np.ndarray = None
    crossing_edges: Optional[np.ndarray] = None
    crossing_values: Optional[np.ndarray] = None
    # per-face material slot, used when several frozen texture paths share a label
    face_material: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.face_provenance is None:
            self.face_provenance = np.full(len(self.faces), BASE, dtype=np.int8)
        else:
            self.face_provenance = np.asarray(self.face_provenance, dtype=np.int8).reshape(-1)
        if len(self.face_provenance) != len(self.faces):
            raise ValueError("face_provenance length must match face count")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.positions)):
            raise ValueError("face index out of range")
        if self.face_material is not None:
            self.face_material = np.asarray(self.face_material, dtype=np.int64).reshape(-1)

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def triangles(self) -> np.ndarray:
        return self.positions[self.faces]

    def face_normals(self, normalize: bool = True) -> np.ndarray:
        tri = self.triangles()
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        if normalize:
            length = np.linalg.norm(n, axis=1, keepdims=True)
            n = n / np.where(length > 0, length, 1.0)
        return n

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(normalize=False), axis=1)

    def vertex_normals(self) -> np.ndarray:
        vn = np.zeros_like(self.positions)
        fn = self.face_normals(normalize=False)
        for k in range(3):
            np.add.at(vn, self.faces[:, k], fn)
        length = np.linalg.norm(vn, axis=1, keepdims=True)
        return vn / np.where(length > 0, length, 1.0)

    def edge_face_counts(self) -> np.ndarray:
        """Number of faces incident to each undirected edge."""
        if self.is_empty():
            return np.zeros(0, dtype=np.int64)
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_watertight(self) -> bool:
        counts = self.edge_face_counts()
        return len(counts) > 0 and bool(np.all(counts == 2))

    def select_faces(self, mask) -> "TriMesh":
        """Submesh of the selected faces, with unused vertices dropped."""
        mask = np.asarray(mask)
        faces = self.faces[mask]
        used, inverse = np.unique(faces.reshape(-1), return_inverse=True)
        kwargs = {}
        if self.crossing_edges is not None:
            kwargs["crossing_edges"] = self.crossing_edges[used]
            kwargs["crossing_values"] = self.crossing_values[used]
        if self.face_material is not None:
            kwargs["face_material"] = self.face_material[mask]
        return TriMesh(
            self.positions[used],
            inverse.reshape(-1, 3),
            self.face_provenance[mask],
            **kwargs,
        )

    def with_provenance(self, label) -> "TriMesh":
        code = provenance_code(label)
        return TriMesh(
            self.positions.copy(),
            self.faces.copy(),
            np.full(len(self.faces), code, dtype=np.int8),
            self.crossing_edges,
            self.crossing_values,
            self.face_material,
        )

    def volume(self) -> float:
        tri = self.triangles()
        return float(np.sum(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2]))) / 6.0)


def merge_meshes(*meshes: TriMesh) -> TriMesh:
    """Concatenate meshes; face order follows argument order."""
    positions, faces, prov, material = [], [], [], []
    offset = 0
    any_material = any(m.face_material is not None for m in meshes)
    for m in meshes:
        positions.append(m.positions)
        faces.append(m.faces + offset)
        prov.append(m.face_provenance)
        if any_material:
            material.append(
                m.face_material if m.face_material is not None else np.zeros(m.n_faces, dtype=np.int64)
            )
        offset += m.n_vertices
    return TriMesh(
        np.concatenate(positions) if positions else np.zeros((0, 3)),
        np.concatenate(faces) if faces else np.zeros((0, 3), dtype=np.int64),
        np.concatenate(prov) if prov else np.zeros(0, dtype=np.int8),
        face_material=np.concatenate(material) if any_material else None,
    )


def icosphere(subdivisions: int = 4, radius: float = 1.0) -> TriMesh:
    """Subdivided icosahedron with all vertices on the sphere."""
    t = (1.0 + 5.0 ** 0.5) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    for _ in range(subdivisions):
        edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        edges.sort(axis=1)
        uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        mid = verts[uniq[:, 0]] + verts[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        mid_idx = inverse.reshape(3, -1).T + len(verts)
        a, b, c = faces.T
        ab, bc, ca = mid_idx.T
        faces = np.concatenate(
            [
                np.stack([a, ab, ca], 1),
                np.stack([b, bc, ab], 1),
                np.stack([c, ca, bc], 1),
                np.stack([ab, bc, ca], 1),
            ]
        )
        verts = np.concatenate([verts, mid])
    return TriMesh(verts * radius, faces)


def box_mesh(half_extents=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriMesh:
    h = np.asarray(half_extents, dtype=np.float64)
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    faces = np.array(
        [
            [0, 1, 3], [0, 3, 2],  # -x
            [4, 6, 7], [4, 7, 5],  # +x
            [0, 4, 5], [0, 5, 1],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [0, 2, 6], [0, 6, 4],  # -z
            [1, 5, 7], [1, 7, 3],  # +z
        ]
    )
    return TriMesh(corners * h + np.asarray(center, dtype=np.float64), faces)
