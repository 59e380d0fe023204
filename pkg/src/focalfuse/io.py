"""Mesh and image I/O: Wavefront OBJ/MTL, PNG and PPM."""

from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .mesh import TriMesh
from .texture import BakedMaps

log = logging.getLogger(__name__)

DEFAULT_FILL = 0.8


@dataclass(frozen=True)
class Normalization:
    """Uniform scale plus centering: ``normalized = (world - center) * scale``."""

    center: tuple
    scale: float

    @classmethod
    def identity(cls) -> "Normalization":
        return cls((0.0, 0.0, 0.0), 1.0)

    @classmethod
    def fit(cls, positions, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)), fill: float = DEFAULT_FILL):
        """Center the bounding box in ``bounds`` and scale its longest side
        to ``fill`` of the shortest bounds side."""
        p = np.asarray(positions, dtype=np.float64)
        b = np.asarray(bounds, dtype=np.float64).reshape(2, 3)
        lo, hi = p.min(axis=0), p.max(axis=0)
        extent = float(np.max(hi - lo))
        if extent <= 0:
            raise ValueError("cannot normalize a mesh with zero extent")
        scale = fill * float(np.min(b[1] - b[0])) / extent
        center = (lo + hi) / 2 - (b[0] + b[1]) / 2 / scale
        return cls(tuple(float(c) for c in center), scale)

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.center)) * self.scale

    def invert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + np.asarray(self.center)

    def apply_length(self, length):
        return np.asarray(length, dtype=np.float64) * self.scale


def _parse_index(token: str, n: int) -> int:
    i = int(token.split("/")[0])
    return i - 1 if i > 0 else n + i


def read_obj(path) -> TriMesh:
    """Positions and faces of an OBJ file; polygons are fan-triangulated."""
    path = Path(path)
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise ValueError(f"cannot read mesh file {path}: {exc}") from exc
    verts, faces = [], []
    polygons = 0
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [_parse_index(t, len(verts)) for t in parts[1:]]
                if len(idx) < 3:
                    raise ValueError("face with fewer than 3 vertices")
                if len(idx) > 3:
                    polygons += 1
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    if polygons:
        log.warning("%s: triangulated %d non-triangular faces", path, polygons)
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def import_mesh(path, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)), fill: float = DEFAULT_FILL,
                normalize: bool = True) -> tuple[TriMesh, Normalization]:
    """Load a triangle mesh and normalize it into ``bounds``.

    Returns the normalized mesh and the transform, which must also be applied
    to anything else declared in the file's world units (focal regions,
    targets).
    """
    mesh = read_obj(path)
    if mesh.is_empty():
        raise ValueError(f"{path}: mesh has no faces")
    norm = Normalization.fit(mesh.positions, bounds, fill) if normalize else Normalization.identity()
    return TriMesh(norm.apply(mesh.positions), mesh.faces), norm


def _fmt(x: float) -> str:
    return repr(float(x))


def write_obj(path, mesh: TriMesh, uvs=None, mtl_name: str | None = None, material: str = "material0") -> None:
    """Write an OBJ; ``uvs`` is an optional (F, 3, 2) per-corner UV array."""
    lines = []
    if mtl_name:
        lines.append(f"mtllib {mtl_name}")
    for p in mesh.positions:
        lines.append("v " + " ".join(_fmt(c) for c in p))
    if uvs is not None:
        for uv in np.asarray(uvs).reshape(-1, 2):
            lines.append(f"vt {_fmt(uv[0])} {_fmt(uv[1])}")
    if mtl_name:
        lines.append(f"usemtl {material}")
    for fi, f in enumerate(mesh.faces + 1):
        if uvs is None:
            lines.append(f"f {f[0]} {f[1]} {f[2]}")
        else:
            t = 3 * fi + 1
            lines.append(f"f {f[0]}/{t} {f[1]}/{t + 1} {f[2]}/{t + 2}")
    Path(path).write_text("\n".join(lines) + "\n")


def linear_to_srgb(x) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def _to_uint8(img) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, image, srgb: bool = True) -> Path:
    """Save a float image in [0, 1]; the suffix picks PNG or PPM."""
    path = Path(path)
    img = np.asarray(image, dtype=np.float64)
    if srgb:
        img = linear_to_srgb(img)
    arr = _to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    fmt = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"unsupported image format {path.suffix!r}; use .png or .ppm")
    if fmt == "PPM" and arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    Image.fromarray(arr).save(path, format=fmt)
    return path


def save_png16(path, image) -> Path:
    """Write an RGB float image in [0, 1] as a 16-bit-per-channel PNG.

    Pillow cannot write 48-bit RGB, so the chunks are assembled directly.
    """
    arr = np.round(np.clip(np.asarray(image, dtype=np.float64), 0, 1) * 65535).astype(">u2")
    h, w, _ = arr.shape
    raw = b"".join(b"\x00" + arr[y].tobytes() for y in range(h))

    def chunk(tag: bytes, data: bytes) -> bytes:
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    header = struct.pack(">IIBBBBB", w, h, 16, 2, 0, 0, 0)
    png = b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")
    Path(path).write_bytes(png)
    return Path(path)


def save_normal_map(path, normals, sixteen_bit: bool = True) -> Path:
    """Encode unit normals as (n + 1) / 2 colors."""
    enc = (np.asarray(normals, dtype=np.float64) + 1.0) / 2.0
    return save_png16(path, enc) if sixteen_bit else save_image(path, enc, srgb=False)


def export_mesh(mesh: TriMesh, maps: BakedMaps, out_dir, name: str = "mesh",
                normalization: Normalization | None = None) -> dict:
    """Write ``name.obj`` with UVs, ``name.mtl`` and PNG material maps.

    Positions are mapped back to world units when ``normalization`` is given.
    """
    if mesh.is_empty():
        raise ValueError("cannot export an empty mesh")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = mesh if normalization is None else TriMesh(normalization.invert(mesh.positions), mesh.faces,
                                                       mesh.face_provenance)
    files = {
        "obj": out / f"{name}.obj",
        "mtl": out / f"{name}.mtl",
        "kd": out / f"{name}_kd.png",
        "roughness": out / f"{name}_roughness.png",
        "metalness": out / f"{name}_metalness.png",
        "normal": out / f"{name}_normal.png",
    }
    save_image(files["kd"], maps.kd[::-1], srgb=True)
    save_image(files["roughness"], maps.krm[::-1, :, 0], srgb=False)
    save_image(files["metalness"], maps.krm[::-1, :, 1], srgb=False)
    save_normal_map(files["normal"], maps.kn[::-1], sixteen_bit=False)
    mtl = [
        "newmtl material0",
        "Kd 1 1 1",
        f"map_Kd {files['kd'].name}",
        f"map_Pr {files['roughness'].name}",
        f"map_Pm {files['metalness'].name}",
        f"norm {files['normal'].name}",
    ]
    files["mtl"].write_text("\n".join(mtl) + "\n")
    write_obj(files["obj"], world, maps.uvs, mtl_name=files["mtl"].name)
    return files
