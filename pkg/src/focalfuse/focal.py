"""Focal regions: deformed spheres that bound where the editable part may grow."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mesh import TriMesh, icosphere
from .optim import Adam
from .sdf import MeshSdf
from .tetgrid import TetGrid

log = logging.getLogger(__name__)

DEFAULT_INIT_BATCH = 10240
DEFAULT_INIT_ITERS = 15000
SPHERE_SUBDIVISIONS = 4


def rotation_xyz(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Rotation about X by alpha, then Y by beta, then Z by gamma (radians)."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cg, -sg, 0], [sg, cg, 0], [0, 0, 1]])
    return rz @ ry @ rx


def affine_matrix(stretch, rotation, translation) -> np.ndarray:
    """Homogeneous T · S · R mapping canonical sphere points into the region."""
    t = np.eye(4)
    t[:3, 3] = translation
    s = np.diag([*stretch, 1.0])
    r = np.eye(4)
    r[:3, :3] = rotation_xyz(*rotation)
    return t @ s @ r


@dataclass
class FocalRegion:
    stretch: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    boundary: TriMesh
    sdf: MeshSdf = field(repr=False)

    @property
    def matrix(self) -> np.ndarray:
        return affine_matrix(self.stretch, self.rotation, self.translation)

    def transform(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        m = self.matrix
        return p @ m[:3, :3].T + m[:3, 3]

    def signed_distance(self, points) -> np.ndarray:
        return self.sdf.signed_distance(np.atleast_2d(points))

    def bbox(self) -> np.ndarray:
        p = self.boundary.positions
        return np.stack([p.min(axis=0), p.max(axis=0)])


def make_focal_region(stretch, rotation=(0.0, 0.0, 0.0), translation=(0.0, 0.0, 0.0),
                      subdivisions: int = SPHERE_SUBDIVISIONS) -> FocalRegion:
    stretch = np.asarray(stretch, dtype=np.float64).reshape(3)
    if np.any(stretch <= 0):
        raise ValueError(f"focal region stretch must be positive, got {stretch.tolist()}")
    rotation = np.asarray(rotation, dtype=np.float64).reshape(3)
    translation = np.asarray(translation, dtype=np.float64).reshape(3)
    sphere = icosphere(subdivisions)
    m = affine_matrix(stretch, rotation, translation)
    boundary = TriMesh(sphere.positions @ m[:3, :3].T + m[:3, 3], sphere.faces)
    return FocalRegion(stretch, rotation, translation, boundary, MeshSdf(boundary))


def region_union_sdf(regions: Sequence[FocalRegion], points) -> np.ndarray:
    """Pointwise max of region SDFs: positive inside any region."""
    if not regions:
        raise ValueError("at least one focal region is required")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return np.max([r.signed_distance(pts) for r in regions], axis=0)


def _check_representable(grid: TetGrid, regions, vertex_sdf: np.ndarray) -> None:
    lo, hi = grid.bounds
    for i, r in enumerate(regions):
        box = r.bbox()
        if np.any(box[1] < lo) or np.any(box[0] > hi):
            raise ValueError(f"focal region {i} lies entirely outside the grid bounds")
    if not np.any(vertex_sdf > 0):
        raise ValueError("no grid vertex falls inside the focal regions; the editable part cannot be represented")


@dataclass
class InitSamples:
    """Pool of points with target SDF values used by the initial fit."""

    points: np.ndarray
    values: np.ndarray
    vertex_ids: np.ndarray
    weights: np.ndarray


def sample_init_pool(grid: TetGrid, regions, n_random: int = 65536, seed: int = 0) -> InitSamples:
    """Grid vertices, uniform points and near-boundary points with region SDF values."""
    rng = np.random.default_rng(seed)
    lo, hi = grid.bounds
    uniform = rng.uniform(lo, hi, size=(n_random, 3))
    near = []
    for r in regions:
        p = r.boundary.positions
        jitter = rng.normal(scale=0.5 * grid.cell_diagonal, size=(4, *p.shape))
        near.append((p[None] + jitter).reshape(-1, 3))
    near = np.clip(np.concatenate(near), lo, hi)
    points = np.concatenate([grid.vertices, uniform, near])
    values = region_union_sdf(regions, points)
    ids, w = grid.locate(points)
    return InitSamples(points, values, ids, w)


def fit_rms(psi_e: np.ndarray, pool: InitSamples) -> float:
    pred = np.sum(psi_e[pool.vertex_ids] * pool.weights, axis=1)
    return float(np.sqrt(np.mean((pred - pool.values) ** 2)))


def init_editable_sdf(grid: TetGrid, regions, iters: int = DEFAULT_INIT_ITERS,
                      batch: int = DEFAULT_INIT_BATCH, lr: float = 1e-2, seed: int = 0,
                      pool: InitSamples | None = None, callback=None) -> np.ndarray:
    """Fit per-vertex editable SDF values to the union of region SDFs.

    Least squares on the piecewise-linear grid field, minimized by Adam over
    random batches drawn from a precomputed sample pool.  The step size decays
    on a cosine schedule so late iterations only refine.
    """
    regions = list(regions)
    if not regions:
        raise ValueError("at least one focal region is required")
    if iters < 0 or batch < 1:
        raise ValueError("iters must be >= 0 and batch >= 1")
    if pool is None:
        pool = sample_init_pool(grid, regions, seed=seed)
    vertex_sdf = pool.values[: grid.n_vertices]
    _check_representable(grid, regions, vertex_sdf)

    psi = grid.psi_e.copy()
    if iters == 0:
        return psi
    rng = np.random.default_rng(seed + 1)
    opt = Adam(psi.shape, lr)
    n = len(pool.values)
    for it in range(iters):
        idx = rng.integers(0, n, size=batch)
        ids, w = pool.vertex_ids[idx], pool.weights[idx]
        resid = np.sum(psi[ids] * w, axis=1) - pool.values[idx]
        grad = np.bincount(ids.reshape(-1), (2.0 / batch * resid[:, None] * w).reshape(-1), len(psi))
        step_lr = lr * 0.5 * (1.0 + np.cos(np.pi * it / iters))
        psi = opt.step(psi, grad, step_lr)
        if callback is not None:
            callback(it + 1, psi)
    log.info("editable SDF init: rms %.4g after %d iterations", fit_rms(psi, pool), iters)
    return psi


def precompute_outside_distances(grid: TetGrid, regions, positions=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex distance to the nearest region boundary, zero inside regions.

    Returns ``(focal_dist, outside)`` where ``outside`` flags vertices that
    take part in the focal loss.
    """
    regions = list(regions)
    pts = grid.vertices if positions is None else positions
    sdfs = np.stack([r.signed_distance(pts) for r in regions])
    outside = np.all(sdfs < 0, axis=0)
    dist = np.where(outside, np.min(np.abs(sdfs), axis=0), 0.0)
    return dist, outside
