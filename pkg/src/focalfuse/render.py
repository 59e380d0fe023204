"""Camera sampling, CPU rasterization, PBR shading and PDM composition.

Visibility (coverage, depth test, PDM) is computed once per frame and is not
differentiated; gradients flow through shading at fixed visibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mesh import BACKGROUND, BASE, EDITABLE, TriMesh
from .texture import DIELECTRIC_F0, KD, KN, TextureField

R_DEFAULT = 3.0
THETA_MIN = -np.pi / 18
THETA_MAX = np.pi / 4
EVAL_ELEVATION = THETA_MAX
DEFAULT_FOV = np.deg2rad(45.0)
DEFAULT_RESOLUTION = 256
ENCODING_SIZE = 64
ROUGHNESS_FLOOR = 1e-3
_PIXEL_CHUNK = 4096


@dataclass
class Camera:
    radius: float
    elevation: float
    azimuth: float
    fov: float = DEFAULT_FOV
    resolution: tuple = (DEFAULT_RESOLUTION, DEFAULT_RESOLUTION)
    target: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("camera radius must be positive")
        if isinstance(self.resolution, (int, np.integer)):
            self.resolution = (int(self.resolution), int(self.resolution))

    @property
    def eye(self) -> np.ndarray:
        ce, se = np.cos(self.elevation), np.sin(self.elevation)
        offset = self.radius * np.array([ce * np.sin(self.azimuth), se, ce * np.cos(self.azimuth)])
        return np.asarray(self.target, dtype=np.float64) + offset

    def basis(self) -> np.ndarray:
        """Rows: right, up, forward (world space)."""
        fwd = np.asarray(self.target, dtype=np.float64) - self.eye
        fwd /= np.linalg.norm(fwd)
        world_up = np.array([0.0, 1.0, 0.0])
        if abs(np.dot(fwd, world_up)) > 1 - 1e-9:
            world_up = np.array([0.0, 0.0, -1.0])
        right = np.cross(fwd, world_up)
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return np.stack([right, up, fwd])

    @property
    def focal(self) -> float:
        return 0.5 * self.resolution[0] / np.tan(0.5 * self.fov)


def sample_cameras(s: int, l: int, r_range=(R_DEFAULT, R_DEFAULT), theta_range=(THETA_MIN, THETA_MAX),
                   seed=None, fov: float = DEFAULT_FOV, resolution=DEFAULT_RESOLUTION) -> list[Camera]:
    """s*l cameras; camera k takes its azimuth from segment d = k mod l of [0, 2pi)."""
    if s < 1 or l < 1:
        raise ValueError("s and l must both be at least 1")
    r_lo, r_hi = r_range
    t_lo, t_hi = theta_range
    if r_lo > r_hi or t_lo > t_hi or r_lo <= 0:
        raise ValueError("camera radius and elevation ranges must be non-empty with positive radius")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cams = []
    for k in range(s * l):
        d = k % l
        lo, hi = segment_bounds(d, l)
        phi = rng.uniform(lo, hi)
        if phi >= hi:
            phi = np.nextafter(hi, lo)
        r = r_lo if r_lo == r_hi else rng.uniform(r_lo, r_hi)
        theta = t_lo if t_lo == t_hi else rng.uniform(t_lo, t_hi)
        cams.append(Camera(float(r), float(theta), float(phi), fov, resolution))
    return cams


def segment_bounds(d: int, l: int) -> tuple[float, float]:
    return 2 * d * np.pi / l, 2 * (d + 1) * np.pi / l


def eval_cameras(n: int, fov: float = DEFAULT_FOV, resolution=DEFAULT_RESOLUTION) -> list[Camera]:
    """Evenly spaced evaluation views at r = 3 and elevation pi/4."""
    return [Camera(R_DEFAULT, EVAL_ELEVATION, 2 * np.pi * k / n, fov, resolution) for k in range(n)]


@dataclass
class RenderBuffers:
    depth: np.ndarray
    face_id: np.ndarray
    bary: np.ndarray
    normal: np.ndarray
    mask: np.ndarray
    pdm: np.ndarray
    position: np.ndarray
    world_normal: np.ndarray
    camera: Camera

    @property
    def shape(self) -> tuple:
        return self.depth.shape


def _empty_buffers(cam: Camera) -> RenderBuffers:
    h, w = cam.resolution
    return RenderBuffers(
        depth=np.full((h, w), np.inf),
        face_id=np.full((h, w), -1, dtype=np.int64),
        bary=np.zeros((h, w, 3)),
        normal=np.zeros((h, w, 3)),
        mask=np.zeros((h, w), dtype=np.uint8),
        pdm=np.full((h, w), BACKGROUND, dtype=np.int8),
        position=np.zeros((h, w, 3)),
        world_normal=np.zeros((h, w, 3)),
        camera=cam,
    )


def rasterize(mesh: TriMesh, cam: Camera, smooth_normals: bool = False, normal_space: str = "world",
              near: float = 1e-4) -> RenderBuffers:
    """Z-buffered perspective rasterization with pixel centers at (j + 0.5, i + 0.5)."""
    if normal_space not in ("world", "camera"):
        raise ValueError("normal_space must be 'world' or 'camera'")
    buf = _empty_buffers(cam)
    if mesh.is_empty():
        return buf
    h, w = cam.resolution
    basis = cam.basis()
    pc = (mesh.positions - cam.eye) @ basis.T
    z = pc[:, 2]
    f = cam.focal
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = 0.5 * w + f * pc[:, 0] / z
        sy = 0.5 * h - f * pc[:, 1] / z

    faces = mesh.faces
    ok = np.all(z[faces] > near, axis=1)
    fx, fy = sx[faces], sy[faces]
    x0 = np.ceil(fx.min(1) - 0.5).astype(np.int64)
    x1 = np.floor(fx.max(1) - 0.5).astype(np.int64)
    y0 = np.ceil(fy.min(1) - 0.5).astype(np.int64)
    y1 = np.floor(fy.max(1) - 0.5).astype(np.int64)
    ok &= (x1 >= 0) & (y1 >= 0) & (x0 < w) & (y0 < h)
    fid = np.nonzero(ok)[0]
    x0, x1 = np.clip(x0[fid], 0, w - 1), np.clip(x1[fid], 0, w - 1)
    y0, y1 = np.clip(y0[fid], 0, h - 1), np.clip(y1[fid], 0, h - 1)
    bw, bh = x1 - x0 + 1, y1 - y0 + 1
    keep = (bw > 0) & (bh > 0)
    fid, x0, y0, bw, bh = fid[keep], x0[keep], y0[keep], bw[keep], bh[keep]
    if len(fid) == 0:
        return buf

    counts = bw * bh
    pair_face = np.repeat(fid, counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    bw_r = np.repeat(bw, counts)
    px = np.repeat(x0, counts) + local % bw_r
    py = np.repeat(y0, counts) + local // bw_r
    cx, cy = px + 0.5, py + 0.5

    tri = faces[pair_face]
    ax, ay = sx[tri[:, 0]], sy[tri[:, 0]]
    bx, by = sx[tri[:, 1]], sy[tri[:, 1]]
    qx, qy = sx[tri[:, 2]], sy[tri[:, 2]]
    area = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax)
    e0 = (bx - cx) * (qy - cy) - (by - cy) * (qx - cx)
    e1 = (qx - cx) * (ay - cy) - (qy - cy) * (ax - cx)
    e2 = (ax - cx) * (by - cy) - (ay - cy) * (bx - cx)
    safe = np.where(area != 0, area, 1.0)
    l0, l1, l2 = e0 / safe, e1 / safe, e2 / safe
    inside = (area != 0) & (l0 >= 0) & (l1 >= 0) & (l2 >= 0)

    pair_face, px, py = pair_face[inside], px[inside], py[inside]
    lam = np.stack([l0[inside], l1[inside], l2[inside]], axis=1)
    zt = z[tri[inside]]
    q = lam / zt
    denom = q.sum(axis=1)
    depth = 1.0 / denom
    bary = q / denom[:, None]

    pix = py * w + px
    order = np.lexsort((pair_face, depth, pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]
    pix_w = pix[win]

    flat = lambda a: a.reshape((h * w,) + a.shape[2:])  # noqa: E731
    flat(buf.depth)[pix_w] = depth[win]
    flat(buf.face_id)[pix_w] = pair_face[win]
    flat(buf.bary)[pix_w] = bary[win]
    flat(buf.mask)[pix_w] = 1
    flat(buf.pdm)[pix_w] = mesh.face_provenance[pair_face[win]]
    corners = mesh.positions[faces[pair_face[win]]]
    b = bary[win]
    flat(buf.position)[pix_w] = b[:, 0:1] * corners[:, 0] + b[:, 1:2] * corners[:, 1] + b[:, 2:3] * corners[:, 2]
    if smooth_normals:
        vn = mesh.vertex_normals()[faces[pair_face[win]]]
        n = b[:, 0:1] * vn[:, 0] + b[:, 1:2] * vn[:, 1] + b[:, 2:3] * vn[:, 2]
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
    else:
        n = mesh.face_normals()[pair_face[win]]
    flat(buf.world_normal)[pix_w] = n
    flat(buf.normal)[pix_w] = n if normal_space == "world" else n @ basis.T
    return buf


@dataclass
class EnvLight:
    """Fixed environment light as N directional samples with solid-angle weights."""

    directions: np.ndarray
    radiance: np.ndarray
    solid_angle: np.ndarray

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.float64)
        self.radiance = np.asarray(self.radiance, dtype=np.float64).reshape(-1, 3)
        self.solid_angle = np.asarray(self.solid_angle, dtype=np.float64).reshape(-1)
        if np.any(self.radiance < 0):
            raise ValueError("environment radiance must be nonnegative")
        norms = np.linalg.norm(self.directions, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("light directions must be unit length")

    @staticmethod
    def sphere_directions(n: int) -> np.ndarray:
        """Fibonacci-sphere stratification: near-equal solid angle per sample."""
        i = np.arange(n) + 0.5
        z = 1.0 - 2.0 * i / n
        phi = np.pi * (1.0 + 5.0 ** 0.5) * i
        r = np.sqrt(1.0 - z * z)
        d = np.stack([r * np.cos(phi), z, r * np.sin(phi)], axis=1)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    @classmethod
    def constant(cls, radiance=1.0, n: int = 128) -> "EnvLight":
        d = cls.sphere_directions(n)
        rad = np.broadcast_to(np.asarray(radiance, dtype=np.float64), (n, 3)).copy()
        return cls(d, rad, np.full(n, 4 * np.pi / n))

    @classmethod
    def from_latlong(cls, image, n: int = 128) -> "EnvLight":
        """Discretize an equirectangular HDR image (row 0 = +Y pole)."""
        img = np.asarray(image, dtype=np.float64)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        h, w = img.shape[:2]
        d = cls.sphere_directions(n)
        theta = np.arccos(np.clip(d[:, 1], -1, 1))
        phi = np.mod(np.arctan2(d[:, 0], d[:, 2]), 2 * np.pi)
        row = np.clip((theta / np.pi * h).astype(int), 0, h - 1)
        col = np.clip((phi / (2 * np.pi) * w).astype(int), 0, w - 1)
        return cls(d, img[row, col, :3], np.full(n, 4 * np.pi / n))

    def scaled(self, c: float) -> "EnvLight":
        return EnvLight(self.directions, self.radiance * c, self.solid_angle)


@dataclass
class ShadeCache:
    """Per-pixel intermediates needed to push image gradients into a texture."""

    pixels: np.ndarray
    points: np.ndarray
    material: np.ndarray
    e_diffuse: np.ndarray
    e_specular: np.ndarray
    de_specular: np.ndarray
    specular: bool


def _tangent_frame(n):
    helper = np.where(np.abs(n[:, 1:2]) < 0.9, np.array([[0.0, 1.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
    t = np.cross(helper, n)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    b = np.cross(n, t)
    return t, b


def _dot3(a, b):
    # explicit sum keeps each pixel's result independent of batch size
    return a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1] + a[:, 2] * b[:, 2]


def _light_integrals(n, wo, roughness, light: EnvLight, specular: bool):
    d = light.directions
    cos_i = n[:, 0:1] * d[None, :, 0] + n[:, 1:2] * d[None, :, 1] + n[:, 2:3] * d[None, :, 2]
    weight = np.maximum(cos_i, 0.0) * light.solid_angle[None, :]
    e_d = np.sum(weight[:, :, None] * light.radiance[None], axis=1)
    if not specular:
        zero = np.zeros_like(e_d)
        return e_d, zero, zero
    i_dot_o = wo[:, 0:1] * d[None, :, 0] + wo[:, 1:2] * d[None, :, 1] + wo[:, 2:3] * d[None, :, 2]
    n_dot_o = _dot3(n, wo)[:, None]
    c = np.maximum(2.0 * cos_i * n_dot_o - i_dot_o, 0.0)
    r2 = np.maximum(roughness * roughness, ROUGHNESS_FLOOR)
    e = (2.0 / r2 - 2.0)[:, None]
    lit = c > 0
    safe_c = np.where(lit, c, 1.0)
    ce = np.where(lit, safe_c ** e, 0.0)
    lobe = (e + 2.0) / (2.0 * np.pi) * ce
    dlobe = np.where(lit, ce / (2.0 * np.pi) * (1.0 + (e + 2.0) * np.log(safe_c)), 0.0)
    e_s = np.sum((weight * lobe)[:, :, None] * light.radiance[None], axis=1)
    de_s = np.sum((weight * dlobe)[:, :, None] * light.radiance[None], axis=1)
    return e_d, e_s, de_s


def shade(buffers: RenderBuffers, mesh: TriMesh, tex: TextureField, light: EnvLight,
          select: Optional[np.ndarray] = None, specular: bool = True, background=0.0,
          return_cache: bool = False):
    """PBR shading of covered pixels (optionally only those in ``select``).

    Per pixel: sum over light samples of radiance * f * max(w_i . n, 0) * dw
    with a Lambertian lobe scaled by (1 - m) and a normalized Phong lobe with
    color k_s and exponent 2 / roughness^2 - 2.
    """
    h, w = buffers.shape
    image = np.empty((h, w, 3))
    image[...] = background
    cover = buffers.mask.astype(bool)
    if select is not None:
        cover &= np.asarray(select, dtype=bool)
    pixels = np.flatnonzero(cover)
    points = buffers.position.reshape(-1, 3)[pixels]
    n_geo = buffers.world_normal.reshape(-1, 3)[pixels]
    eye = buffers.camera.eye
    material = tex.eval_packed(points) if len(pixels) else np.zeros((0, 8))

    e_d = np.zeros((len(pixels), 3))
    e_s = np.zeros_like(e_d)
    de_s = np.zeros_like(e_d)
    for start in range(0, len(pixels), _PIXEL_CHUNK):
        sl = slice(start, start + _PIXEL_CHUNK)
        wo = eye - points[sl]
        wo /= np.linalg.norm(wo, axis=1, keepdims=True)
        n = n_geo[sl]
        n = np.where((_dot3(n, wo) < 0)[:, None], -n, n)
        t, b = _tangent_frame(n)
        kn = material[sl, KN]
        ns = kn[:, 0:1] * t + kn[:, 1:2] * b + kn[:, 2:3] * n
        ns /= np.linalg.norm(ns, axis=1, keepdims=True)
        e_d[sl], e_s[sl], de_s[sl] = _light_integrals(ns, wo, material[sl, 3], light, specular)

    kd = material[:, KD]
    m = material[:, 4:5]
    ks = (1.0 - m) * DIELECTRIC_F0 + m * kd
    color = (1.0 - m) * kd / np.pi * e_d + ks * e_s
    image.reshape(-1, 3)[pixels] = color
    if return_cache:
        return image, ShadeCache(pixels, points, material, e_d, e_s, de_s, specular)
    return image


def shade_backward(cache: ShadeCache, tex: TextureField, grad_image: np.ndarray) -> np.ndarray:
    """Texture-parameter gradient of sum(grad_image * shaded image).

    Diffuse color, roughness and metalness receive gradients; the normal
    channels are held at fixed visibility and shading frame.
    """
    up = np.asarray(grad_image, dtype=np.float64).reshape(-1, 3)[cache.pixels]
    mat = cache.material
    kd = mat[:, KD]
    m = mat[:, 4:5]
    rough = mat[:, 3]
    g = np.zeros_like(mat)
    g[:, KD] = up * ((1.0 - m) / np.pi * cache.e_diffuse + m * cache.e_specular)
    g[:, 4] = np.sum(up * (-kd / np.pi * cache.e_diffuse + (kd - DIELECTRIC_F0) * cache.e_specular), axis=1)
    if cache.specular:
        r2 = rough * rough
        de_drough = np.where(r2 > ROUGHNESS_FLOOR, -4.0 / np.maximum(rough, 1e-12) ** 3, 0.0)
        ks = (1.0 - m) * DIELECTRIC_F0 + m * kd
        g[:, 3] = np.sum(up * ks * cache.de_specular, axis=1) * de_drough
    return tex.backward(cache.points, g)


def compose(base_img, edit_img, pdm, background=0.0) -> np.ndarray:
    """Select base pixels, editable pixels and background by PDM label."""
    base_img = np.asarray(base_img)
    edit_img = np.asarray(edit_img)
    pdm = np.asarray(pdm)
    if base_img.shape != edit_img.shape or base_img.shape[:2] != pdm.shape:
        raise ValueError(f"compose inputs differ in shape: {base_img.shape}, {edit_img.shape}, {pdm.shape}")
    out = np.empty_like(base_img, dtype=np.float64)
    out[...] = background
    out[pdm == BASE] = base_img[pdm == BASE]
    out[pdm == EDITABLE] = edit_img[pdm == EDITABLE]
    return out


def compose_backward(grad_merged, pdm) -> np.ndarray:
    """Gradient reaching the editable image; the base path is truncated."""
    g = np.zeros_like(np.asarray(grad_merged, dtype=np.float64))
    sel = np.asarray(pdm) == EDITABLE
    g[sel] = np.asarray(grad_merged)[sel]
    return g


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages input samples over [i, i+1) * n_in / n_out."""
    edges = np.arange(n_out + 1) * n_in / n_out
    a = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = edges[i], edges[i + 1]
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            a[i, j] = min(hi, j + 1) - max(lo, j)
        a[i] /= a[i].sum()
    return a


def coarse_shape_encoding(n_map, o_mask, size: int = ENCODING_SIZE) -> np.ndarray:
    """Concatenate normal map and object mask, area-average to size x size x 4."""
    n_map = np.asarray(n_map, dtype=np.float64)
    o = np.asarray(o_mask, dtype=np.float64)
    if o.ndim == 2:
        o = o[..., None]
    if n_map.shape[:2] != o.shape[:2]:
        raise ValueError("normal map and mask must have the same resolution")
    h, w = n_map.shape[:2]
    if h < size or w < size:
        raise ValueError(f"input resolution {h}x{w} is below {size}x{size}")
    stacked = np.concatenate([n_map, o], axis=2)
    ah, aw = _area_matrix(h, size), _area_matrix(w, size)
    return np.einsum("ih,hwc,jw->ijc", ah, stacked, aw)


def render_paths(mesh: TriMesh, cam: Camera, base_textures, tex_e: TextureField, light: EnvLight,
                 smooth_normals: bool = False, specular: bool = True, background=0.0):
    """Dual-path render of a merged mesh.

    ``base_textures`` is a list of frozen fields indexed by the base faces'
    ``face_material`` slot (slot 0 when the mesh carries none).  Returns the
    composed image, the editable-path image with its shade cache, and the
    visibility buffers.
    """
    buf = rasterize(mesh, cam, smooth_normals=smooth_normals)
    if isinstance(base_textures, TextureField):
        base_textures = [base_textures]
    slot = np.zeros(mesh.n_faces, dtype=np.int64) if mesh.face_material is None else mesh.face_material
    pix_slot = np.where(buf.face_id >= 0, slot[np.maximum(buf.face_id, 0)], -1)
    base_img = np.empty((*buf.shape, 3))
    base_img[...] = background
    for k, tex in enumerate(base_textures):
        sel = (buf.pdm == BASE) & (pix_slot == k)
        if np.any(sel):
            img = shade(buf, mesh, tex, light, select=sel, specular=specular, background=background)
            base_img[sel] = img[sel]
    edit_img, cache = shade(buf, mesh, tex_e, light, select=buf.pdm == EDITABLE, specular=specular,
                            background=background, return_cache=True)
    return compose(base_img, edit_img, buf.pdm, background), edit_img, cache, buf
