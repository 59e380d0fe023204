"""Geometric preservation metrics for an edited scene."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .focal import FocalRegion, region_union_sdf
from .mesh import BASE, EDITABLE, TriMesh
from .sdf import MeshSdf

DEFAULT_OVERLAP_SAMPLES = 100_000


@dataclass
class PreservationReport:
    hausdorff_base: float
    editable_outside_fraction: float
    overlap_volume_fraction: float

    def as_dict(self) -> dict:
        return asdict(self)


def surface_samples(mesh: TriMesh) -> np.ndarray:
    """Vertices, edge midpoints and face centroids."""
    tri = mesh.triangles()
    mids = np.concatenate([(tri[:, 0] + tri[:, 1]) / 2, (tri[:, 1] + tri[:, 2]) / 2, (tri[:, 2] + tri[:, 0]) / 2])
    return np.concatenate([mesh.positions, mids, tri.mean(axis=1)])


def hausdorff_distance(a: TriMesh, b: TriMesh) -> float:
    """Symmetric Hausdorff distance estimated from surface samples of each mesh
    against the exact surface of the other."""
    if a.is_empty() or b.is_empty():
        return 0.0 if a.is_empty() and b.is_empty() else float("inf")
    if a.n_faces == b.n_faces and np.array_equal(a.triangles(), b.triangles()):
        return 0.0
    d_ab = MeshSdf(b).unsigned_distance(surface_samples(a))
    d_ba = MeshSdf(a).unsigned_distance(surface_samples(b))
    return float(max(d_ab.max(), d_ba.max()))


def editable_outside_fraction(edited: TriMesh, regions: Sequence[FocalRegion], margin: float = 0.0) -> float:
    """Area fraction of editable faces whose centroid lies farther than
    ``margin`` outside every focal region."""
    edit = edited.select_faces(edited.face_provenance == EDITABLE)
    if edit.is_empty():
        return 0.0
    area = edit.face_areas()
    sd = region_union_sdf(regions, edit.triangles().mean(axis=1))
    return float(area[sd < -margin].sum() / area.sum())


def overlap_volume_fraction(base_sdf: Callable, editable_sdf: Callable, sample_bounds, n_samples: int = DEFAULT_OVERLAP_SAMPLES,
                            seed: int = 0) -> float:
    """Monte-Carlo volume of {psi_b > 0 and psi_e > 0} over the volume of
    {psi_e > 0}, sampled uniformly in ``sample_bounds``."""
    lo, hi = np.asarray(sample_bounds, dtype=np.float64).reshape(2, 3)
    pts = np.random.default_rng(seed).uniform(lo, hi, size=(int(n_samples), 3))
    inside_e = editable_sdf(pts) > 0
    if not np.any(inside_e):
        return 0.0
    both = inside_e & (base_sdf(pts) > 0)
    return float(both.sum() / inside_e.sum())


def _check_labels(mesh: TriMesh) -> None:
    prov = getattr(mesh, "face_provenance", None)
    if prov is None or len(prov) != mesh.n_faces:
        raise ValueError("edited mesh carries no provenance labels")
    if not np.all(np.isin(prov, (BASE, EDITABLE))):
        raise ValueError("edited mesh has faces without a base/editable label")


def eval_preservation(base_mesh: TriMesh, edited_mesh: TriMesh, regions: Sequence[FocalRegion] = (),
                      margin: float = 0.0, base_sdf: Optional[Callable] = None,
                      editable_sdf: Optional[Callable] = None, sample_bounds=None,
                      n_samples: int = DEFAULT_OVERLAP_SAMPLES, seed: int = 0) -> PreservationReport:
    """Base fidelity, locality and purity of an edit.

    Without explicit fields, the base and editable parts' volumes come from
    the labeled meshes, which then must be closed.
    """
    _check_labels(edited_mesh)
    base_part = edited_mesh.select_faces(edited_mesh.face_provenance == BASE)
    edit_part = edited_mesh.select_faces(edited_mesh.face_provenance == EDITABLE)
    hausdorff = hausdorff_distance(base_mesh, base_part)
    outside = editable_outside_fraction(edited_mesh, regions, margin) if len(regions) else 0.0

    overlap = 0.0
    if not edit_part.is_empty() or editable_sdf is not None:
        base_sdf = base_sdf or MeshSdf(base_mesh)
        editable_sdf = editable_sdf or MeshSdf(edit_part)
        if sample_bounds is None:
            p = edit_part.positions
            sample_bounds = np.stack([p.min(axis=0), p.max(axis=0)])
        overlap = overlap_volume_fraction(base_sdf, editable_sdf, sample_bounds, n_samples, seed)
    return PreservationReport(hausdorff, outside, overlap)
