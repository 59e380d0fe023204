"""Dense trilinear PBR texture fields.

A field stores 8 raw channels per lattice node: diffuse (3), roughness,
metalness, and a tangent-space normal offset (3).  Corner values are squashed
into their valid ranges before interpolation, so every interpolated diffuse,
roughness and metalness value is a convex combination of valid values.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .mesh import TriMesh

log = logging.getLogger(__name__)

N_CHANNELS = 8
KD = slice(0, 3)
KRM = slice(3, 5)
KN = slice(5, 8)
DIELECTRIC_F0 = 0.04
_UP = np.array([0.0, 0.0, 1.0])


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit(y):
    y = np.clip(np.asarray(y, dtype=np.float64), 1e-6, 1 - 1e-6)
    return np.log(y / (1.0 - y))


def _normalize(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0), n


class TextureField:
    """Material field over an axis-aligned box, sampled on a resolution³ lattice."""

    def __init__(self, params, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)), trainable: bool = True):
        params = np.asarray(params, dtype=np.float64)
        if params.ndim != 4 or params.shape[3] != N_CHANNELS or min(params.shape[:3]) < 2:
            raise ValueError(f"texture params must be (R, R, R, {N_CHANNELS}) with R >= 2")
        self.params = params
        self.bounds = np.asarray(bounds, dtype=np.float64).reshape(2, 3)
        self.trainable = trainable

    @classmethod
    def constant(cls, kd=(0.5, 0.5, 0.5), roughness: float = 0.5, metalness: float = 0.0,
                 resolution: int = 32, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)), trainable: bool = True):
        raw = np.zeros(N_CHANNELS)
        raw[KD] = _logit(kd)
        raw[3] = _logit(roughness)
        raw[4] = _logit(metalness)
        params = np.broadcast_to(raw, (resolution,) * 3 + (N_CHANNELS,)).copy()
        return cls(params, bounds, trainable)

    @property
    def resolution(self) -> tuple:
        return self.params.shape[:3]

    def copy(self, trainable: bool | None = None) -> "TextureField":
        return TextureField(self.params.copy(), self.bounds.copy(), self.trainable if trainable is None else trainable)

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.params).tobytes()).hexdigest()

    # lattice decoding

    def decoded(self) -> np.ndarray:
        """Squashed per-node values, shape (R, R, R, 8)."""
        out = np.empty_like(self.params)
        out[..., :5] = _sigmoid(self.params[..., :5])
        out[..., KN], _ = _normalize(self.params[..., KN] + _UP)
        return out

    def _corners(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        res = np.asarray(self.resolution)
        f = (p - self.bounds[0]) / (self.bounds[1] - self.bounds[0]) * (res - 1)
        f = np.clip(f, 0.0, res - 1)
        i0 = np.minimum(np.floor(f).astype(np.int64), res - 2)
        t = f - i0
        ids = np.empty((len(p), 8), dtype=np.int64)
        w = np.empty((len(p), 8))
        for c in range(8):
            bits = np.array([(c >> 2) & 1, (c >> 1) & 1, c & 1])
            idx = i0 + bits
            ids[:, c] = (idx[:, 0] * res[1] + idx[:, 1]) * res[2] + idx[:, 2]
            w[:, c] = np.prod(np.where(bits, t, 1.0 - t), axis=1)
        return ids, w

    def _interp(self, points):
        ids, w = self._corners(points)
        flat = self.decoded().reshape(-1, N_CHANNELS)
        mixed = np.einsum("nc,nck->nk", w, flat[ids])
        return mixed, ids, w

    def eval_packed(self, points) -> np.ndarray:
        """(N, 8) materials: kd (3), roughness, metalness, unit normal (3)."""
        mixed, _, _ = self._interp(points)
        mixed[:, KN], _ = _normalize(mixed[:, KN])
        return mixed

    def eval(self, points):
        m = self.eval_packed(points)
        return m[:, KD], m[:, KRM], m[:, KN]

    def backward(self, points, grad_packed) -> np.ndarray:
        """Gradient w.r.t. ``params`` of sum(grad_packed * eval_packed(points))."""
        g = np.asarray(grad_packed, dtype=np.float64).reshape(-1, N_CHANNELS).copy()
        mixed, ids, w = self._interp(points)
        kn, length = _normalize(mixed[:, KN])
        g_kn = g[:, KN]
        g[:, KN] = (g_kn - kn * np.sum(kn * g_kn, axis=1, keepdims=True)) / np.where(length > 0, length, 1.0)

        n_nodes = int(np.prod(self.resolution))
        flat_ids = ids.reshape(-1)
        g_nodes = np.empty((n_nodes, N_CHANNELS))
        for ch in range(N_CHANNELS):
            g_nodes[:, ch] = np.bincount(flat_ids, (w * g[:, ch:ch + 1]).reshape(-1), n_nodes)

        raw = self.params.reshape(-1, N_CHANNELS)
        out = np.empty_like(g_nodes)
        s = _sigmoid(raw[:, :5])
        out[:, :5] = g_nodes[:, :5] * s * (1.0 - s)
        n, vlen = _normalize(raw[:, KN] + _UP)
        gn = g_nodes[:, KN]
        out[:, KN] = (gn - n * np.sum(n * gn, axis=1, keepdims=True)) / np.where(vlen > 0, vlen, 1.0)
        return out.reshape(self.params.shape)


def eval_material(field: TextureField, p):
    """(k_d, k_rm, k_n) at one point or a batch of points."""
    kd, krm, kn = field.eval(p)
    if np.ndim(p) == 1:
        return kd[0], krm[0], kn[0]
    return kd, krm, kn


def specular_color(kd, m):
    """k_s = (1 - m) * 0.04 + m * k_d."""
    m_arr = np.asarray(m, dtype=np.float64)
    if np.any(m_arr < 0) or np.any(m_arr > 1):
        raise ValueError("metalness must lie in [0, 1]")
    kd = np.asarray(kd, dtype=np.float64)
    if m_arr.ndim and m_arr.ndim == kd.ndim - 1:
        m_arr = m_arr[..., None]
    return (1.0 - m_arr) * DIELECTRIC_F0 + m_arr * kd


# UV atlas and baking


def atlas_uvs(n_faces: int, resolution: int) -> np.ndarray:
    """Per-face UV triangles, two faces per square chart cell. Shape (F, 3, 2)."""
    n_cells = (n_faces + 1) // 2
    side = max(1, int(np.ceil(np.sqrt(n_cells))))
    size = 1.0 / side
    pad = min(0.2, 1.0 / max(resolution * size, 1e-9)) * size
    cell = np.arange(n_faces) // 2
    origin = np.stack([cell % side, cell // side], axis=1) * size
    lower = np.array([[pad, pad], [size - 2 * pad, pad], [pad, size - 2 * pad]])
    upper = np.array([[size - pad, size - pad], [2 * pad, size - pad], [size - pad, 2 * pad]])
    tri = np.where((np.arange(n_faces) % 2 == 0)[:, None, None], lower, upper)
    return origin[:, None, :] + tri


def _uv_face_lookup(uv: np.ndarray, n_faces: int):
    """Face owning each UV point and the point's local cell coordinates."""
    n_cells = (n_faces + 1) // 2
    side = max(1, int(np.ceil(np.sqrt(n_cells))))
    g = np.clip(uv * side, 0, side - 1e-9)
    cx, cy = np.floor(g[:, 0]).astype(np.int64), np.floor(g[:, 1]).astype(np.int64)
    local = g - np.stack([cx, cy], axis=1)
    face = 2 * (cy * side + cx) + (local.sum(axis=1) > 1.0)
    return face


def _barycentric_2d(p, tri):
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    v0, v1, v2 = b - a, c - a, p - a
    d00 = np.sum(v0 * v0, 1)
    d01 = np.sum(v0 * v1, 1)
    d11 = np.sum(v1 * v1, 1)
    d20 = np.sum(v2 * v0, 1)
    d21 = np.sum(v2 * v1, 1)
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    return np.stack([1.0 - v - w, v, w], axis=1)


@dataclass
class BakedMaps:
    kd: np.ndarray
    krm: np.ndarray
    kn: np.ndarray
    uvs: np.ndarray
    skipped_faces: int

    def sample(self, uv) -> np.ndarray:
        """Bilinear lookup of the packed (kd, krm, kn) maps at UV points."""
        img = np.concatenate([self.kd, self.krm, self.kn], axis=2)
        h, w = img.shape[:2]
        uv = np.atleast_2d(uv)
        x = np.clip(uv[:, 0] * w - 0.5, 0, w - 1)
        y = np.clip(uv[:, 1] * h - 0.5, 0, h - 1)
        x0 = np.minimum(np.floor(x).astype(int), max(w - 2, 0))
        y0 = np.minimum(np.floor(y).astype(int), max(h - 2, 0))
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        tx = (x - x0)[:, None]
        ty = (y - y0)[:, None]
        top = img[y0, x0] * (1 - tx) + img[y0, x1] * tx
        bot = img[y1, x0] * (1 - tx) + img[y1, x1] * tx
        return top * (1 - ty) + bot * ty


def bake_texture_maps(field, mesh: TriMesh, resolution: int, face_field=None) -> BakedMaps:
    """Sample the material field into UV-atlas images (row index = v).

    ``field`` may be a list of fields, in which case ``face_field`` gives the
    index of the field each face samples from.
    """
    if mesh.is_empty():
        raise ValueError("cannot bake textures for an empty mesh")
    res = int(resolution)
    uvs = atlas_uvs(mesh.n_faces, res)
    areas = mesh.face_areas()
    degenerate = areas <= 1e-14
    if np.any(degenerate):
        log.warning("texture bake: skipping %d degenerate faces", int(degenerate.sum()))

    ys, xs = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    uv = np.stack([(xs.reshape(-1) + 0.5) / res, (ys.reshape(-1) + 0.5) / res], axis=1)
    face = _uv_face_lookup(uv, mesh.n_faces)
    valid = face < mesh.n_faces
    valid[valid] &= ~degenerate[face[valid]]

    packed = np.zeros((res * res, 8))
    f = face[valid]
    bary = _barycentric_2d(uv[valid], uvs[f])
    bary = np.clip(bary, 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    pts = np.einsum("nk,nkd->nd", bary, mesh.positions[mesh.faces[f]])
    if isinstance(field, TextureField):
        packed[valid] = field.eval_packed(pts)
    else:
        slot = np.asarray(face_field, dtype=np.int64)[f]
        vals = np.zeros((len(f), 8))
        for k, fld in enumerate(field):
            sel = slot == k
            if np.any(sel):
                vals[sel] = fld.eval_packed(pts[sel])
        packed[valid] = vals
    img = packed.reshape(res, res, 8)
    return BakedMaps(
        kd=img[..., KD].copy(),
        krm=img[..., KRM].copy(),
        kn=img[..., KN].copy(),
        uvs=uvs,
        skipped_faces=int(degenerate.sum()),
    )
