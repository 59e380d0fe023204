"""Signed distances to triangle meshes and primitives, and the soft union.

Every field here is inner-positive: values are positive inside a shape.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriMesh

SOFT_UNION_GAIN = 0.1


def soft_union(psi_b, psi_e, k: float = 0.15):
    """max(psi_b, psi_e) + 0.1 * h**2 / k with h = max(k - |psi_b - psi_e|, 0)."""
    k = np.asarray(k, dtype=np.float64)
    if not np.all(k > 0):
        raise ValueError(f"soft union blend width must be positive, got {k}")
    a = np.asarray(psi_b, dtype=np.float64)
    b = np.asarray(psi_e, dtype=np.float64)
    h = np.maximum(k - np.abs(a - b), 0.0)
    out = np.maximum(a, b) + SOFT_UNION_GAIN * h * h / k
    return float(out) if out.ndim == 0 else out


def soft_union_grad(psi_b, psi_e, k: float = 0.15):
    """Partial derivatives of :func:`soft_union` w.r.t. (psi_b, psi_e)."""
    if not k > 0:
        raise ValueError(f"soft union blend width must be positive, got {k}")
    a = np.asarray(psi_b, dtype=np.float64)
    b = np.asarray(psi_e, dtype=np.float64)
    diff = a - b
    h = np.maximum(k - np.abs(diff), 0.0)
    # d(h^2)/da = -2 h sign(a - b)
    blend = -2.0 * SOFT_UNION_GAIN * h * np.sign(diff) / k
    a_wins = (a >= b).astype(np.float64)
    return a_wins + blend, (1.0 - a_wins) - blend


def sphere_sdf(center, radius, p):
    if not radius > 0:
        raise ValueError("sphere radius must be positive")
    p = np.asarray(p, dtype=np.float64)
    out = radius - np.linalg.norm(p - np.asarray(center, dtype=np.float64), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def box_sdf(center, half_extents, p):
    """Exact inner-positive distance to an axis-aligned box."""
    p = np.asarray(p, dtype=np.float64)
    q = np.abs(p - np.asarray(center, dtype=np.float64)) - np.asarray(half_extents, dtype=np.float64)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    out = -(outside + inside)
    return float(out) if np.ndim(out) == 0 else out


def ellipsoid_sdf(center, radii, p):
    """Inner-positive first-order ellipsoid distance: exact on the surface,
    correct sign everywhere."""
    r = np.asarray(radii, dtype=np.float64)
    q = (np.atleast_2d(p) - np.asarray(center, dtype=np.float64)) / r
    return (1.0 - np.linalg.norm(q, axis=1)) * r.min()


def point_triangle_distance(p, a, b, c) -> np.ndarray:
    """Distance from points to triangles, row by row (closest-feature regions)."""
    p, a, b, c = (np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    # default: interior of the face
    denom = va + vb + vc
    safe = np.where(denom != 0, denom, 1.0)
    v = vb / safe
    w = vc / safe
    closest = a + ab * v[:, None] + ac * w[:, None]

    def _set(mask, point):
        closest[mask] = point[mask]

    with np.errstate(divide="ignore", invalid="ignore"):
        # edge bc
        m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        _set(m, b + (c - b) * np.nan_to_num(t)[:, None])
        # edge ac
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        _set(m, a + ac * np.nan_to_num(t)[:, None])
        # edge ab
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        _set(m, a + ab * np.nan_to_num(t)[:, None])
    # vertex regions last so they take precedence
    _set((d6 >= 0) & (d5 <= d6), c)
    _set((d3 >= 0) & (d4 <= d3), b)
    _set((d1 <= 0) & (d2 <= 0), a)
    return np.linalg.norm(p - closest, axis=1)


class MeshSdf:
    """Signed distance to a triangle mesh.

    The unsigned part is the exact nearest point-to-triangle distance.  Only
    triangles whose bounding ball can beat the nearest mesh vertex are tested;
    both candidate searches run on KD-trees.  The sign is a majority vote of
    ray-parity tests along three fixed random directions.
    """

    def __init__(self, mesh: TriMesh, inner_positive: bool = True, n_rays: int = 3, seed: int = 7):
        if mesh.is_empty():
            raise ValueError("cannot build a signed distance over an empty mesh")
        self.mesh = mesh
        self.inner_positive = inner_positive
        self.watertight = mesh.is_watertight()
        self.diagnostics = {"non_watertight_queries": 0}
        self._tri = mesh.triangles()
        self._centroids = self._tri.mean(axis=1)
        self._radius = float(np.max(np.linalg.norm(self._tri - self._centroids[:, None], axis=2)))
        self._vertex_tree = cKDTree(mesh.positions)
        self._centroid_tree = cKDTree(self._centroids)
        rng = np.random.default_rng(seed)
        dirs = rng.normal(size=(n_rays, 3))
        self._ray_dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        self._ray_bins = [self._build_ray_bins(d) for d in self._ray_dirs]

    # unsigned distance

    def unsigned_distance(self, points, chunk: int = 4096) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty(len(pts))
        for start in range(0, len(pts), chunk):
            out[start:start + chunk] = self._unsigned_chunk(pts[start:start + chunk])
        return out

    def _unsigned_chunk(self, pts: np.ndarray) -> np.ndarray:
        upper, _ = self._vertex_tree.query(pts)
        cand = self._centroid_tree.query_ball_point(pts, upper + self._radius * (1 + 1e-9) + 1e-12)
        counts = np.fromiter((len(c) for c in cand), dtype=np.int64, count=len(pts))
        tri_idx = np.fromiter((i for c in cand for i in c), dtype=np.int64, count=int(counts.sum()))
        pt_idx = np.repeat(np.arange(len(pts)), counts)
        tri = self._tri[tri_idx]
        d = point_triangle_distance(pts[pt_idx], tri[:, 0], tri[:, 1], tri[:, 2])
        best = upper.copy()
        np.minimum.at(best, pt_idx, d)
        return best

    # sign

    def _build_ray_bins(self, direction: np.ndarray):
        e1 = np.cross(direction, [1.0, 0.0, 0.0])
        if np.linalg.norm(e1) < 1e-3:
            e1 = np.cross(direction, [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(direction, e1)
        frame = np.stack([e1, e2, direction])
        tri = self._tri @ frame.T  # (F, 3, 3) in (u, v, depth)
        lo = tri[:, :, :2].min(axis=1)
        hi = tri[:, :, :2].max(axis=1)
        box_lo = lo.min(axis=0)
        box_hi = hi.max(axis=0)
        n_bins = max(1, int(np.sqrt(len(tri))))
        cell = (box_hi - box_lo) / n_bins
        cell = np.where(cell > 0, cell, 1.0)
        b_lo = np.clip(((lo - box_lo) / cell).astype(np.int64), 0, n_bins - 1)
        b_hi = np.clip(((hi - box_lo) / cell).astype(np.int64), 0, n_bins - 1)
        spans = b_hi - b_lo + 1
        per_tri = spans[:, 0] * spans[:, 1]
        tri_ids = np.repeat(np.arange(len(tri)), per_tri)
        local = np.arange(len(tri_ids)) - np.repeat(np.cumsum(per_tri) - per_tri, per_tri)
        bx = b_lo[tri_ids, 0] + local // spans[tri_ids, 1]
        by = b_lo[tri_ids, 1] + local % spans[tri_ids, 1]
        bin_id = bx * n_bins + by
        order = np.argsort(bin_id, kind="stable")
        starts = np.searchsorted(bin_id[order], np.arange(n_bins * n_bins + 1))
        return frame, tri, box_lo, box_hi, cell, n_bins, tri_ids[order], starts

    def _ray_hits(self, pts: np.ndarray, bins) -> np.ndarray:
        frame, tri, box_lo, box_hi, cell, n_bins, tri_sorted, starts = bins
        q = pts @ frame.T
        hits = np.zeros(len(pts), dtype=np.int64)
        inside_box = np.all((q[:, :2] >= box_lo) & (q[:, :2] <= box_hi), axis=1)
        idx = np.nonzero(inside_box)[0]
        if len(idx) == 0:
            return hits
        b = np.clip(((q[idx, :2] - box_lo) / cell).astype(np.int64), 0, n_bins - 1)
        bin_id = b[:, 0] * n_bins + b[:, 1]
        counts = starts[bin_id + 1] - starts[bin_id]
        pt = np.repeat(idx, counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        t = tri_sorted[np.repeat(starts[bin_id], counts) + offs]
        a, bb, c = tri[t, 0], tri[t, 1], tri[t, 2]
        pu, pv = q[pt, 0], q[pt, 1]

        def edge(p0, p1):
            return (p1[:, 0] - p0[:, 0]) * (pv - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (pu - p0[:, 0])

        w0, w1, w2 = edge(bb, c), edge(c, a), edge(a, bb)
        area = w0 + w1 + w2
        ok = area != 0
        same = ((w0 >= 0) & (w1 >= 0) & (w2 >= 0)) | ((w0 <= 0) & (w1 <= 0) & (w2 <= 0))
        ok &= same
        safe = np.where(area != 0, area, 1.0)
        depth = (w0 * a[:, 2] + w1 * bb[:, 2] + w2 * c[:, 2]) / safe
        ok &= depth > q[pt, 2]
        np.add.at(hits, pt[ok], 1)
        return hits

    def inside(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        votes = np.zeros(len(pts), dtype=np.int64)
        for bins in self._ray_bins:
            votes += self._ray_hits(pts, bins) % 2
        if not self.watertight:
            self.diagnostics["non_watertight_queries"] += len(pts)
        return 2 * votes > len(self._ray_bins)

    def __call__(self, points) -> np.ndarray:
        return self.signed_distance(points)

    def signed_distance(self, points):
        p = np.asarray(points, dtype=np.float64)
        pts = np.atleast_2d(p)
        d = self.unsigned_distance(pts)
        sign = np.where(self.inside(pts), 1.0, -1.0)
        if not self.inner_positive:
            sign = -sign
        out = sign * d
        return float(out[0]) if p.ndim == 1 else out


def signed_distance(msdf: MeshSdf, p):
    return msdf.signed_distance(p)


def _segment_distance(p, a, b):
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def brute_force_unsigned(mesh: TriMesh, points) -> np.ndarray:
    """All-triangles scan used as a reference for :class:`MeshSdf`.

    Deliberately uses a different formulation: plane distance when the
    projection falls inside the triangle, otherwise the nearest edge segment.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tri = mesh.triangles()
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        rep = np.broadcast_to(p, a.shape)
        h = np.einsum("ij,ij->i", rep - a, n)
        proj = rep - h[:, None] * n
        inside = np.ones(len(a), dtype=bool)
        for u, v in ((a, b), (b, c), (c, a)):
            inside &= np.einsum("ij,ij->i", np.cross(v - u, proj - u), n) >= 0
        d = np.minimum.reduce([_segment_distance(rep, a, b), _segment_distance(rep, b, c), _segment_distance(rep, c, a)])
        d = np.where(inside, np.minimum(np.abs(h), d), d)
        out[i] = d.min()
    return out
