"""Two-stage editing pipeline: geometry, then appearance, optionally chained."""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .focal import (
    DEFAULT_INIT_BATCH,
    DEFAULT_INIT_ITERS,
    FocalRegion,
    init_editable_sdf,
    precompute_outside_distances,
    region_union_sdf,
)
from .losses import (
    LAMBDA_B,
    LAMBDA_CA,
    LAMBDA_GF,
    LAMBDA_SC,
    FocalLossParams,
    LossReport,
    collision_loss,
    geometric_focal_loss,
    standin_appearance_objective,
    standin_geometry_objective,
    standin_sample_mask,
    style_consistency_terms,
)
from .mesh import BASE, EDITABLE, TriMesh, merge_meshes
from .optim import Adam
from .render import (
    EnvLight,
    R_DEFAULT,
    THETA_MAX,
    THETA_MIN,
    DEFAULT_FOV,
    _area_matrix,
    coarse_shape_encoding,
    compose_backward,
    rasterize,
    render_paths,
    sample_cameras,
    shade_backward,
)
from .sdf import MeshSdf, soft_union, soft_union_grad
from .tetgrid import (
    TetGrid,
    _min_incident_edge,
    apply_offset_mask,
    build_grid,
    clamp_offsets,
    marching_tetrahedra,
    mt_backward,
)
from .texture import TextureField

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "standin", "gf", "ca", "sc_g", "sc_b", "total")


class NonFiniteLossError(FloatingPointError):
    """Raised after a non-finite loss; the session is rolled back first."""


def field_gradient(fn: Callable, points: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference spatial gradient of a scalar field."""
    pts = np.asarray(points, dtype=np.float64)
    g = np.empty_like(pts)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[:, k] = (fn(pts + e) - fn(pts - e)) / (2 * h)
    return g


@dataclass
class GeometryConfig:
    steps: int = 600
    lr: float = 1e-3
    lambda_gf: float = LAMBDA_GF
    lambda_ca: float = LAMBDA_CA
    focal: FocalLossParams = field(default_factory=FocalLossParams)
    k: float = 0.15
    offset_margin: Optional[float] = None  # defaults to one cell width
    offset_fraction: float = 0.25
    coarse_fraction: float = 2.0 / 3.0
    coarse_objective: str = "field"  # or "encoding"
    refined_objective: str = "field"  # or "normal"
    image_resolution: int = 64
    checkpoint_fraction: float = 0.1

    def coarse_steps(self) -> int:
        return math.ceil(self.coarse_fraction * self.steps - 1e-9)


@dataclass
class AppearanceConfig:
    steps: int = 400
    lr: float = 1e-2
    lambda_sc: float = LAMBDA_SC
    lambda_b: float = LAMBDA_B
    delta_scale: float = 0.01
    s: int = 1
    l: int = 4
    r_range: tuple = (R_DEFAULT, R_DEFAULT)
    theta_range: tuple = (THETA_MIN, THETA_MAX)
    fov: float = DEFAULT_FOV
    resolution: int = 64
    specular: bool = True
    boundary_cells: float = 1.5
    checkpoint_fraction: float = 0.1


@dataclass
class EditSession:
    grid: TetGrid
    base_mesh: TriMesh
    base_sdf: MeshSdf
    regions: list
    base_textures: list
    tex_e: TextureField
    target_sdf: Optional[Callable] = None
    target_image: Optional[Callable] = None
    light: EnvLight = field(default_factory=EnvLight.constant)
    k: float = 0.15
    seed: int = 0
    stage: str = "geometry"
    geometry_step: int = 0
    appearance_step: int = 0
    outside: np.ndarray = None
    inside: np.ndarray = None
    rng: np.random.Generator = None
    optimizer: dict = field(default_factory=dict)
    logs: dict = field(default_factory=lambda: {"geometry": [], "appearance": []})
    checkpoint: Optional[dict] = None
    out_dir: Optional[Path] = None
    render_hook: Optional[Callable] = None
    _edge_limit: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    @property
    def tex_b(self) -> TextureField:
        return self.base_textures[0]

    def frozen_digest(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.grid.psi_b).tobytes())
        for t in self.base_textures:
            h.update(t.digest().encode())
        return h.hexdigest()

    def union_field(self) -> np.ndarray:
        return soft_union(self.grid.psi_b, self.grid.psi_e, self.k)

    def editable_mesh(self) -> TriMesh:
        """Editable faces of the fused surface.

        Faces where the base field dominates the editable one (compared at
        the face's crossing points) belong to the base's own surface up to
        the small blend bump; they are dropped and the input base mesh
        stands in for them, so base geometry stays exact.
        """
        g = self.grid
        mesh = marching_tetrahedra(g, self.union_field(), "editable")
        if mesh.is_empty():
            return mesh
        ea, eb = mesh.crossing_edges[:, 0], mesh.crossing_edges[:, 1]
        sa, sb = mesh.crossing_values[:, 0], mesh.crossing_values[:, 1]
        t = sa / (sa - sb)
        gap = g.psi_e - g.psi_b
        vert_gap = gap[ea] + t * (gap[eb] - gap[ea])
        return mesh.select_faces(vert_gap[mesh.faces].mean(axis=1) >= 0.0)

    def merged_mesh(self) -> TriMesh:
        base = self.base_mesh
        if base.face_material is None:
            base = dataclasses.replace(base, face_material=np.zeros(base.n_faces, dtype=np.int64))
        edit = self.editable_mesh()
        edit = dataclasses.replace(edit, face_material=np.zeros(edit.n_faces, dtype=np.int64))
        return merge_meshes(base, edit)

    def editable_field(self, points) -> np.ndarray:
        return self.grid.interpolate(self.grid.psi_e, points)

    def edge_limit(self) -> np.ndarray:
        if self._edge_limit is None:
            self._edge_limit = _min_incident_edge(self.grid)
        return self._edge_limit

    # checkpoints

    def snapshot(self) -> dict:
        return {
            "psi_e": self.grid.psi_e.copy(),
            "offsets": self.grid.offsets.copy(),
            "tex_e": self.tex_e.params.copy(),
            "geometry_step": self.geometry_step,
            "appearance_step": self.appearance_step,
            "stage": self.stage,
            "rng": copy.deepcopy(self.rng.bit_generator.state),
            "optimizer": {k: v.state() for k, v in self.optimizer.items()},
            "logs": {k: list(v) for k, v in self.logs.items()},
        }

    def restore(self, snap: dict) -> None:
        self.grid.psi_e = snap["psi_e"].copy()
        self.grid.offsets = snap["offsets"].copy()
        self.tex_e.params = snap["tex_e"].copy()
        self.geometry_step = snap["geometry_step"]
        self.appearance_step = snap["appearance_step"]
        self.stage = snap["stage"]
        self.rng.bit_generator.state = copy.deepcopy(snap["rng"])
        for k, st in snap["optimizer"].items():
            if k in self.optimizer:
                self.optimizer[k].load_state(st)
        self.logs = {k: list(v) for k, v in snap["logs"].items()}

    def save_checkpoint(self) -> None:
        self.checkpoint = self.snapshot()
        if self.out_dir is not None:
            path = Path(self.out_dir) / "checkpoint.npz"
            path.parent.mkdir(parents=True, exist_ok=True)
            np.savez_compressed(
                path,
                psi_e=self.checkpoint["psi_e"],
                offsets=self.checkpoint["offsets"],
                tex_e=self.checkpoint["tex_e"],
                geometry_step=self.geometry_step,
                appearance_step=self.appearance_step,
            )


def create_session(base_mesh: TriMesh, regions: Sequence[FocalRegion], resolution=32,
                   bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)), base_texture: TextureField | None = None,
                   tex_e: TextureField | None = None, target_sdf=None, target_image=None,
                   light: EnvLight | None = None, k: float = 0.15, seed: int = 0,
                   init_iters: int = DEFAULT_INIT_ITERS, init_batch: int = DEFAULT_INIT_BATCH,
                   init_lr: float = 1e-2, texture_resolution: int = 32, base_psi: np.ndarray | None = None,
                   base_textures: list | None = None) -> EditSession:
    """Build the grid, freeze the base field, fit the editable part and
    precompute focal distances."""
    regions = list(regions)
    grid = build_grid(resolution, bounds)
    base_mesh = base_mesh.with_provenance("base") if base_mesh.face_material is None else base_mesh
    base_sdf = MeshSdf(base_mesh)
    psi_b = base_sdf.signed_distance(grid.vertices) if base_psi is None else base_psi
    grid = grid.with_base_sdf(psi_b)
    grid.psi_e = init_editable_sdf(grid, regions, iters=init_iters, batch=init_batch, lr=init_lr, seed=seed)
    dist, outside = precompute_outside_distances(grid, regions)
    grid.focal_dist = dist
    if base_textures is None:
        base_textures = [base_texture or TextureField.constant(resolution=texture_resolution, bounds=bounds)]
    for t in base_textures:
        t.trainable = False
    if tex_e is None:
        tex_e = TextureField.constant(resolution=texture_resolution, bounds=bounds)
    return EditSession(
        grid=grid,
        base_mesh=base_mesh,
        base_sdf=base_sdf,
        regions=regions,
        base_textures=base_textures,
        tex_e=tex_e,
        target_sdf=target_sdf,
        target_image=target_image,
        light=light or EnvLight.constant(),
        k=k,
        seed=seed,
        outside=outside,
        inside=~outside,
    )


def _write_log(path: Path, rows: list) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([r["step"]] + [repr(float(r[k])) for k in LOG_FIELDS[1:]])


def write_loss_csv(path, rows) -> None:
    _write_log(Path(path), rows)


# geometry stage


def _face_normal_backward(mesh: TriMesh, grad_normals: np.ndarray) -> np.ndarray:
    """Vertex-position gradient of sum(grad_normals * unit face normals)."""
    tri = mesh.triangles()
    e1, e2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    c = np.cross(e1, e2)
    length = np.linalg.norm(c, axis=1, keepdims=True)
    n = c / np.where(length > 0, length, 1.0)
    gc = (grad_normals - n * np.sum(n * grad_normals, axis=1, keepdims=True)) / np.where(length > 0, length, 1.0)
    # c = e1 x e2 ; d/de1 (gc . c) = e2 x gc ; d/de2 = gc x e1
    g1 = np.cross(e2, gc)
    g2 = np.cross(gc, e1)
    gv = np.zeros_like(mesh.positions)
    np.add.at(gv, mesh.faces[:, 0], -g1 - g2)
    np.add.at(gv, mesh.faces[:, 1], g1)
    np.add.at(gv, mesh.faces[:, 2], g2)
    return gv


def _target_mesh(session: EditSession) -> TriMesh:
    g = session.grid
    t = session.target_sdf(g.vertices)
    return marching_tetrahedra(g, soft_union(g.psi_b, t, session.k), "editable")


def image_geometry_objective(session: EditSession, cfg: GeometryConfig, encoded: bool, target_mesh: TriMesh):
    """Normal-map (or coarse n/o encoding) matching against the target shape
    for one random view; gradients reach psi_e and offsets through the
    marching-tetrahedra vertices at fixed visibility."""
    g = session.grid
    cam = sample_cameras(1, 1, seed=session.rng, resolution=cfg.image_resolution)[0]
    psi_u = session.union_field()
    mesh = marching_tetrahedra(g, psi_u, "editable")
    merged = merge_meshes(session.base_mesh.with_provenance("base"), mesh)
    buf = rasterize(merged, cam)
    tbuf = rasterize(merge_meshes(session.base_mesh.with_provenance("base"), target_mesh), cam)
    n_img = buf.normal
    t_img = tbuf.normal
    if encoded:
        enc = coarse_shape_encoding(n_img, buf.mask)
        tenc = coarse_shape_encoding(t_img, tbuf.mask)
        diff = enc - tenc
        value = float(np.mean(diff * diff))
        g_enc = 2.0 * diff / diff.size
        h, w = buf.shape
        ah, aw = _area_matrix(h, enc.shape[0]), _area_matrix(w, enc.shape[1])
        g_n = np.einsum("ih,ijc,jw->hwc", ah, g_enc[..., :3], aw)
    else:
        diff = n_img - t_img
        value = float(np.sum(diff * diff) / diff[..., 0].size)
        g_n = 2.0 * diff / diff[..., 0].size

    grad_psi = np.zeros(g.n_vertices)
    grad_pos = np.zeros((g.n_vertices, 3))
    nb = session.base_mesh.n_faces
    fid = buf.face_id.reshape(-1)
    sel = fid >= nb
    if np.any(sel) and not mesh.is_empty():
        g_faces = np.zeros((mesh.n_faces, 3))
        np.add.at(g_faces, fid[sel] - nb, g_n.reshape(-1, 3)[sel])
        g_verts = _face_normal_backward(mesh, g_faces)
        g_field, grad_pos = mt_backward(g, mesh, g_verts)
        _, du_de = soft_union_grad(g.psi_b, g.psi_e, session.k)
        grad_psi = g_field * du_de
    return value, grad_psi, grad_pos


def geometry_step(session: EditSession, cfg: GeometryConfig, phase: str, target_mesh=None) -> LossReport:
    g = session.grid
    psi = g.psi_e
    margin = g.cell_size.min() if cfg.offset_margin is None else cfg.offset_margin
    _, movable = apply_offset_mask(g, margin)

    objective = cfg.coarse_objective if phase == "coarse" else cfg.refined_objective
    if objective == "field":
        if session.target_sdf is None:
            raise ValueError("the field objective needs a target SDF")
        sample = standin_sample_mask(psi, session.inside, session.k)
        pos = g.positions()[sample]
        tv = session.target_sdf(pos)
        tg = field_gradient(session.target_sdf, pos)
        standin, g_s, g_pos_s = standin_geometry_objective(psi[sample], tv, tg)
        grad_psi = np.zeros_like(psi)
        grad_psi[sample] = g_s
        grad_off = np.zeros_like(g.offsets)
        grad_off[sample] = g_pos_s
    elif objective in ("encoding", "normal"):
        standin, grad_psi, grad_off = image_geometry_objective(session, cfg, objective == "encoding", target_mesh)
    else:
        raise ValueError(f"unknown geometry objective {objective!r}")

    out = session.outside
    gf, g_gf = geometric_focal_loss(psi[out], g.focal_dist[out], cfg.focal)
    ca, g_ca = collision_loss(g.psi_b, psi)
    grad_psi = grad_psi.copy()
    grad_psi[out] += cfg.lambda_gf * g_gf
    grad_psi += cfg.lambda_ca * g_ca
    grad_off = np.where(movable[:, None], grad_off, 0.0)
    return LossReport(
        "geometry",
        {"standin": standin, "gf": gf, "ca": ca},
        {"gf": cfg.lambda_gf, "ca": cfg.lambda_ca},
        {"psi_e": grad_psi, "offsets": grad_off},
    )


def _check_finite(session: EditSession, report: LossReport) -> None:
    if not np.isfinite(report.total):
        if session.checkpoint is not None:
            session.restore(session.checkpoint)
        raise NonFiniteLossError(f"non-finite loss at {session.stage} step; rolled back to last checkpoint")


def run_geometry_stage(session: EditSession, cfg: GeometryConfig | None = None, log_path=None):
    """Optimize psi_e and vertex offsets; returns them."""
    cfg = cfg or GeometryConfig()
    if session.stage != "geometry":
        raise RuntimeError("geometry stage can only run before the appearance stage")
    g = session.grid
    opt_psi = session.optimizer.setdefault("psi_e", Adam(g.psi_e.shape, cfg.lr))
    opt_off = session.optimizer.setdefault("offsets", Adam(g.offsets.shape, cfg.lr))
    coarse_end = cfg.coarse_steps()
    every = max(1, int(round(cfg.checkpoint_fraction * cfg.steps)))
    margin = g.cell_size.min() if cfg.offset_margin is None else cfg.offset_margin
    needs_target_mesh = "encoding" in (cfg.coarse_objective,) or cfg.refined_objective == "normal"
    target_mesh = _target_mesh(session) if needs_target_mesh and cfg.steps else None
    session.save_checkpoint()

    for step in range(cfg.steps):
        phase = "coarse" if step < coarse_end else "refined"
        report = geometry_step(session, cfg, phase, target_mesh)
        _check_finite(session, report)
        session.logs["geometry"].append(report.row(session.geometry_step))
        g.psi_e = opt_psi.step(g.psi_e, report.grads["psi_e"])
        new_off = opt_off.step(g.offsets, report.grads["offsets"])
        new_off, _ = apply_offset_mask(g, margin, new_off)
        g.offsets = clamp_offsets(g, new_off, cfg.offset_fraction, edge_limit=session.edge_limit())
        session.geometry_step += 1
        if session.render_hook is not None:
            session.render_hook("geometry", session.geometry_step, session)
        if (step + 1) % every == 0:
            session.save_checkpoint()

    if log_path is not None:
        _write_log(Path(log_path), session.logs["geometry"])
    return g.psi_e, g.offsets


# appearance stage


def junction_points(session: EditSession, edit_mesh: TriMesh, cells: float = 1.5):
    """Interior samples on the editable surface and the subset near the base."""
    if edit_mesh.is_empty():
        return np.zeros((0, 3)), np.zeros((0, 3))
    pts = edit_mesh.positions
    d = session.base_sdf.unsigned_distance(pts)
    return pts, pts[d < cells * session.grid.cell_diagonal]


def base_material_at(session: EditSession, points) -> np.ndarray:
    """Frozen base material at points, taken from the nearest base face's slot."""
    pts = np.atleast_2d(points)
    if len(session.base_textures) == 1 or session.base_mesh.face_material is None:
        return session.base_textures[0].eval_packed(pts)
    tree = cKDTree(session.base_mesh.triangles().mean(axis=1))
    _, fid = tree.query(pts)
    slot = session.base_mesh.face_material[fid]
    out = np.empty((len(pts), 8))
    for k, tex in enumerate(session.base_textures):
        sel = slot == k
        if np.any(sel):
            out[sel] = tex.eval_packed(pts[sel])
    return out


class _PackedBase:
    """Adapter letting the style loss read precomputed base materials."""

    def __init__(self, values):
        self.values = values

    def eval_packed(self, points):
        return self.values


def constant_target(color) -> Callable:
    color = np.asarray(color, dtype=np.float64)

    def target(cam, buf):
        return np.broadcast_to(color, (*buf.shape, 3)).copy()

    return target


def appearance_step(session: EditSession, cfg: AppearanceConfig, merged: TriMesh,
                    interior: np.ndarray, boundary: np.ndarray, base_vals: np.ndarray) -> LossReport:
    tex_e = session.tex_e
    cams = sample_cameras(cfg.s, cfg.l, cfg.r_range, cfg.theta_range, seed=session.rng,
                          fov=cfg.fov, resolution=cfg.resolution)
    standin = 0.0
    grad = np.zeros_like(tex_e.params)
    for cam in cams:
        img, _, cache, buf = render_paths(merged, cam, session.base_textures, tex_e, session.light,
                                          specular=cfg.specular)
        if session.target_image is None:
            raise ValueError("the appearance objective needs a target image")
        target = session.target_image(cam, buf)
        value, g_img = standin_appearance_objective(img, target, buf.pdm == EDITABLE)
        standin += value / len(cams)
        if value:
            grad += shade_backward(cache, tex_e, compose_backward(g_img, buf.pdm)) / len(cams)
    l_g, g_g, l_b, g_b = style_consistency_terms(
        tex_e, _PackedBase(base_vals), interior, boundary, cfg.delta_scale, rng=session.rng
    )
    if cfg.lambda_sc:
        grad += cfg.lambda_sc * (g_g + cfg.lambda_b * g_b)
    return LossReport(
        "appearance",
        {"standin": standin, "sc_g": l_g, "sc_b": l_b},
        {"sc": cfg.lambda_sc, "b": cfg.lambda_b},
        {"tex_e": grad},
    )


def run_appearance_stage(session: EditSession, cfg: AppearanceConfig | None = None, log_path=None):
    """Optimize the editable texture through dual-path rendering; returns it."""
    cfg = cfg or AppearanceConfig()
    session.stage = "appearance"
    merged = session.merged_mesh()
    edit_mesh = merged.select_faces(merged.face_provenance == EDITABLE)
    interior, boundary = junction_points(session, edit_mesh, cfg.boundary_cells)
    base_vals = base_material_at(session, boundary) if len(boundary) else np.zeros((0, 8))
    opt = session.optimizer.setdefault("tex_e", Adam(session.tex_e.params.shape, cfg.lr))
    every = max(1, int(round(cfg.checkpoint_fraction * cfg.steps)))
    session.save_checkpoint()
    for step in range(cfg.steps):
        report = appearance_step(session, cfg, merged, interior, boundary, base_vals)
        _check_finite(session, report)
        session.logs["appearance"].append(report.row(session.appearance_step))
        session.tex_e.params = opt.step(session.tex_e.params, report.grads["tex_e"])
        session.appearance_step += 1
        if session.render_hook is not None:
            session.render_hook("appearance", session.appearance_step, session)
        if (step + 1) % every == 0:
            session.save_checkpoint()
    if log_path is not None:
        _write_log(Path(log_path), session.logs["appearance"])
    return session.tex_e


# progressive editing


def progressive_edit(session: EditSession, new_regions: Sequence[FocalRegion], new_target_sdf=None,
                     new_target_image=None, init_iters: int = DEFAULT_INIT_ITERS,
                     init_batch: int = DEFAULT_INIT_BATCH, seed: int | None = None) -> EditSession:
    """Promote the merged result to the frozen base of a fresh session."""
    merged = session.merged_mesh()
    n_slots = len(session.base_textures)
    slots = np.where(merged.face_provenance == EDITABLE, n_slots, merged.face_material)
    new_base = TriMesh(merged.positions, merged.faces, np.full(merged.n_faces, BASE, dtype=np.int8),
                       face_material=slots)
    g = session.grid
    # resample: magnitude from the merged surface, sign from the fused field
    sign = np.where(session.union_field() > 0, 1.0, -1.0)
    psi_b = sign * MeshSdf(new_base).unsigned_distance(g.vertices)
    frozen_e = session.tex_e.copy(trainable=False)
    bounds = g.bounds
    return create_session(
        new_base,
        new_regions,
        resolution=g.resolution,
        bounds=bounds,
        tex_e=TextureField.constant(resolution=session.tex_e.resolution[0], bounds=bounds),
        target_sdf=new_target_sdf,
        target_image=new_target_image,
        light=session.light,
        k=session.k,
        seed=session.seed + 1 if seed is None else seed,
        init_iters=init_iters,
        init_batch=init_batch,
        base_psi=psi_b,
        base_textures=[*session.base_textures, frozen_e],
    )


# evaluation, export and persistence


def session_report(session: EditSession, n_samples: int = 100_000, seed: int = 0, margin_cells: float = 2.0):
    """Preservation metrics for the current state of a session."""
    from .metrics import eval_preservation

    g = session.grid
    positive = g.vertices[g.psi_e > 0]
    bounds = None
    if len(positive):
        pad = g.cell_size
        bounds = np.stack([positive.min(axis=0) - pad, positive.max(axis=0) + pad])
    return eval_preservation(
        session.base_mesh,
        session.merged_mesh(),
        session.regions,
        margin=margin_cells * float(g.cell_size.min()),
        base_sdf=lambda p: g.interpolate(g.psi_b, p),
        editable_sdf=lambda p: g.interpolate(g.psi_e, p),
        sample_bounds=bounds if bounds is not None else g.bounds,
        n_samples=n_samples,
        seed=seed,
    )


def export_session(session: EditSession, out_dir, resolution: int = 512, name: str = "edited", normalization=None):
    """Bake label-aware material maps for the merged mesh and write OBJ/MTL/PNG."""
    from .io import export_mesh
    from .texture import bake_texture_maps

    merged = session.merged_mesh()
    fields = [*session.base_textures, session.tex_e]
    slot = np.where(merged.face_provenance == EDITABLE, len(session.base_textures), merged.face_material)
    maps = bake_texture_maps(fields, merged, resolution, face_field=slot)
    return export_mesh(merged, maps, out_dir, name=name, normalization=normalization)


def save_session(path, session: EditSession) -> Path:
    g = session.grid
    arrays = {
        "resolution": np.asarray(g.resolution),
        "bounds": g.bounds,
        "psi_b": np.asarray(g.psi_b),
        "psi_e": g.psi_e,
        "offsets": g.offsets,
        "focal_dist": g.focal_dist,
        "outside": session.outside,
        "base_positions": session.base_mesh.positions,
        "base_faces": session.base_mesh.faces,
        "base_material": session.base_mesh.face_material
        if session.base_mesh.face_material is not None
        else np.zeros(session.base_mesh.n_faces, dtype=np.int64),
        "tex_e": session.tex_e.params,
        "tex_bounds": session.tex_e.bounds,
        "regions": np.array([[*r.stretch, *r.rotation, *r.translation] for r in session.regions]),
    }
    for i, t in enumerate(session.base_textures):
        arrays[f"tex_b{i}"] = t.params
    for name, opt in session.optimizer.items():
        st = opt.state()
        arrays[f"opt_{name}_m"], arrays[f"opt_{name}_v"] = st["m"], st["v"]
    meta = {
        "n_base_textures": len(session.base_textures),
        "k": session.k,
        "seed": session.seed,
        "stage": session.stage,
        "geometry_step": session.geometry_step,
        "appearance_step": session.appearance_step,
        "rng": session.rng.bit_generator.state,
        "optimizer": {n: {"t": o.t, "lr": o.lr} for n, o in session.optimizer.items()},
        "logs": session.logs,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_session(path, target_sdf=None, target_image=None, light: EnvLight | None = None) -> EditSession:
    from .focal import make_focal_region

    with np.load(path) as data:
        d = {k: data[k] for k in data.files}
    meta = json.loads(bytes(d["meta"]).decode())
    grid = build_grid(tuple(int(r) for r in d["resolution"]), d["bounds"]).with_base_sdf(d["psi_b"])
    grid.psi_e = d["psi_e"].copy()
    grid.offsets = d["offsets"].copy()
    grid.focal_dist = d["focal_dist"].copy()
    base = TriMesh(d["base_positions"], d["base_faces"], face_material=d["base_material"])
    regions = [make_focal_region(r[:3], r[3:6], r[6:9]) for r in d["regions"]]
    base_textures = [TextureField(d[f"tex_b{i}"], d["tex_bounds"], trainable=False)
                     for i in range(meta["n_base_textures"])]
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    optimizer = {}
    for name, st in meta["optimizer"].items():
        opt = Adam(d[f"opt_{name}_m"].shape, st["lr"])
        opt.load_state({"m": d[f"opt_{name}_m"], "v": d[f"opt_{name}_v"], "t": st["t"]})
        optimizer[name] = opt
    outside = d["outside"].astype(bool)
    return EditSession(
        grid=grid,
        base_mesh=base,
        base_sdf=MeshSdf(base),
        regions=regions,
        base_textures=base_textures,
        tex_e=TextureField(d["tex_e"], d["tex_bounds"]),
        target_sdf=target_sdf,
        target_image=target_image,
        light=light or EnvLight.constant(),
        k=meta["k"],
        seed=meta["seed"],
        stage=meta["stage"],
        geometry_step=meta["geometry_step"],
        appearance_step=meta["appearance_step"],
        outside=outside,
        inside=~outside,
        rng=rng,
        optimizer=optimizer,
        logs=meta["logs"],
    )


def make_dump_hook(out_dir, every: int, camera, fmt: str = "png") -> Callable:
    """Render hook writing the merged render every ``every`` steps of either stage."""
    from .io import save_image

    out = Path(out_dir)

    def hook(stage: str, step: int, session: EditSession) -> None:
        if every <= 0 or step % every:
            return
        merged = session.merged_mesh()
        img, _, _, _ = render_paths(merged, camera, session.base_textures, session.tex_e, session.light)
        out.mkdir(parents=True, exist_ok=True)
        save_image(out / f"{stage}_{step:06d}.{fmt}", img)

    return hook
