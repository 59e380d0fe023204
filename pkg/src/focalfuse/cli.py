"""Command-line entry point: ``focalfuse <subcommand> --scene <path> ...``.

Subcommands communicate only through files in the output directory, so each
one is idempotent for fixed inputs and seed:

    init             -> init.npz
    edit-geometry    init.npz -> geometry.npz, geometry_loss.csv
    edit-appearance  geometry.npz -> appearance.npz, appearance_loss.csv
    render, eval, export read the most advanced state available.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from functools import partial
from pathlib import Path

import numpy as np
from PIL import Image

from . import driver
from .config import ConfigError, SceneConfig, load_scene, write_scene_snapshot
from .focal import make_focal_region
from .io import import_mesh, read_obj, save_image, save_normal_map, write_obj
from .losses import FocalLossParams
from .mesh import TriMesh
from .render import EVAL_ELEVATION, R_DEFAULT, Camera, EnvLight, eval_cameras, rasterize, render_paths
from .sdf import MeshSdf, box_sdf, ellipsoid_sdf, sphere_sdf
from .texture import TextureField

log = logging.getLogger("focalfuse")

STATE_FILES = ("appearance.npz", "geometry.npz", "init.npz")
STEP_KEYS = {
    "init": ("geometry", "init_iters"),
    "edit-geometry": ("geometry", "steps"),
    "edit-appearance": ("appearance", "steps"),
}


def srgb_to_linear(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


class Scene:
    """Everything derived from a scene file, in normalized grid units."""

    def __init__(self, cfg: SceneConfig):
        self.cfg = cfg
        bounds = np.asarray(cfg.grid["bounds"], dtype=np.float64)
        self.bounds = bounds
        self.base_mesh, self.norm = import_mesh(
            cfg.base_mesh_path, bounds, fill=cfg.scene["fill"], normalize=cfg.scene["normalize"]
        )
        self.regions = [
            make_focal_region(
                self.norm.apply_length(r.stretch), r.rotation_radians(), self.norm.apply(r.translation)
            )
            for r in cfg.regions
        ]
        self.target_sdf = self._target_sdf()
        self.target_image = self._target_image()
        self.light = self._light()

    def _target_sdf(self):
        t = self.cfg.target
        center = self.norm.apply(t["center"])
        if t["shape"] == "box":
            return partial(box_sdf, center, self.norm.apply_length(t["half_extents"]))
        if t["shape"] == "sphere":
            return partial(sphere_sdf, center, float(self.norm.apply_length(t["radius"])))
        if t["shape"] == "ellipsoid":
            return partial(ellipsoid_sdf, center, self.norm.apply_length(t["half_extents"]))
        mesh = read_obj(self.cfg.resolve_path(t["path"]))
        return MeshSdf(TriMesh(self.norm.apply(mesh.positions), mesh.faces))

    def _target_image(self):
        t = self.cfg.target
        if t["image"] is None:
            return driver.constant_target(t["color"])
        img = Image.open(self.cfg.resolve_path(t["image"])).convert("RGB")

        def target(cam, buf):
            h, w = buf.shape
            arr = np.asarray(img.resize((w, h), Image.BILINEAR), dtype=np.float64) / 255.0
            return srgb_to_linear(arr)

        return target

    def _light(self) -> EnvLight:
        lt = self.cfg.light
        if lt["envmap"] is None:
            return EnvLight.constant(lt["radiance"], lt["directions"])
        img = np.asarray(Image.open(self.cfg.resolve_path(lt["envmap"])).convert("RGB"), dtype=np.float64) / 255.0
        return EnvLight.from_latlong(srgb_to_linear(img), lt["directions"]).scaled(lt["radiance"])

    def geometry_config(self) -> driver.GeometryConfig:
        g, lo = self.cfg.geometry, self.cfg.losses
        return driver.GeometryConfig(
            steps=int(g["steps"]),
            lr=g["lr"],
            lambda_gf=lo["lambda_gf"],
            lambda_ca=lo["lambda_ca"],
            focal=FocalLossParams(lo["sigma1"], lo["sigma2"], lo["xi"]),
            k=lo["k"],
            offset_fraction=g["offset_fraction"],
            coarse_objective=g["coarse_objective"],
            refined_objective=g["refined_objective"],
        )

    def appearance_config(self) -> driver.AppearanceConfig:
        a, lo = self.cfg.appearance, self.cfg.losses
        return driver.AppearanceConfig(
            steps=int(a["steps"]),
            lr=a["lr"],
            lambda_sc=lo["lambda_sc"],
            lambda_b=lo["lambda_b"],
            delta_scale=a["delta_scale"],
            s=a["s"],
            l=a["l"],
            r_range=tuple(a["r"]),
            theta_range=tuple(a["theta"]),
            fov=a["fov"],
            resolution=a["resolution"],
            specular=a["specular"],
        )

    def new_session(self) -> driver.EditSession:
        cfg = self.cfg
        tx = cfg.texture
        tres = tx["resolution"]
        base_tex = TextureField.constant(tx["base_kd"], tx["base_roughness"], tx["base_metalness"], tres, self.bounds)
        edit_tex = TextureField.constant(tx["edit_kd"], tx["base_roughness"], tx["base_metalness"], tres, self.bounds)
        return driver.create_session(
            self.base_mesh,
            self.regions,
            resolution=cfg.grid["resolution"],
            bounds=self.bounds,
            base_texture=base_tex,
            tex_e=edit_tex,
            target_sdf=self.target_sdf,
            target_image=self.target_image,
            light=self.light,
            k=cfg.losses["k"],
            seed=cfg.seed,
            init_iters=int(cfg.geometry["init_iters"]),
            init_batch=int(cfg.geometry["init_batch"]),
            init_lr=cfg.geometry["init_lr"],
        )

    def load(self, path) -> driver.EditSession:
        return driver.load_session(path, self.target_sdf, self.target_image, self.light)


def _latest_state(out: Path) -> Path:
    for name in STATE_FILES:
        if (out / name).exists():
            return out / name
    raise FileNotFoundError(f"no session state in {out}; run `focalfuse init` first")


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `focalfuse {producer}` first")
    return path


def _dump_hook(scene: Scene, out: Path):
    every = int(scene.cfg.render["dump_every"])
    if every <= 0:
        return None
    cam = Camera(R_DEFAULT, EVAL_ELEVATION, 0.0, resolution=scene.cfg.appearance["resolution"])
    return driver.make_dump_hook(out / "dumps", every, cam, scene.cfg.render["format"])


def cmd_init(scene: Scene, out: Path, args) -> None:
    session = scene.new_session()
    driver.save_session(out / "init.npz", session)
    log.info("initialized editable field on a %s grid", scene.cfg.grid["resolution"])


def cmd_edit_geometry(scene: Scene, out: Path, args) -> None:
    session = scene.load(_require(out / "init.npz", "init"))
    session.out_dir = out
    session.render_hook = _dump_hook(scene, out)
    driver.run_geometry_stage(session, scene.geometry_config(), log_path=out / "geometry_loss.csv")
    driver.save_session(out / "geometry.npz", session)
    merged = session.merged_mesh()
    write_obj(out / "geometry.obj", TriMesh(scene.norm.invert(merged.positions), merged.faces))


def cmd_edit_appearance(scene: Scene, out: Path, args) -> None:
    session = scene.load(_require(out / "geometry.npz", "edit-geometry"))
    session.out_dir = out
    session.render_hook = _dump_hook(scene, out)
    driver.run_appearance_stage(session, scene.appearance_config(), log_path=out / "appearance_loss.csv")
    driver.save_session(out / "appearance.npz", session)


def cmd_render(scene: Scene, out: Path, args) -> None:
    session = scene.load(_latest_state(out))
    r = scene.cfg.render
    merged = session.merged_mesh()
    target = out / "renders"
    target.mkdir(parents=True, exist_ok=True)
    palette = np.array([[0.0, 0.0, 0.0], [0.2, 0.4, 0.9], [0.95, 0.55, 0.1]])
    for i, cam in enumerate(eval_cameras(int(r["views"]), resolution=int(r["resolution"]))):
        img, _, _, buf = render_paths(merged, cam, session.base_textures, session.tex_e, session.light)
        save_image(target / f"view{i}.{r['format']}", img)
        save_image(target / f"pdm{i}.{r['format']}", palette[buf.pdm], srgb=False)
        if r["normal_space"] == "camera":
            buf = rasterize(merged, cam, normal_space="camera")
        save_normal_map(target / f"normal{i}.png", np.where(buf.mask[..., None], buf.normal, -1.0))


def cmd_eval(scene: Scene, out: Path, args) -> None:
    session = scene.load(_latest_state(out))
    report = driver.session_report(session, seed=scene.cfg.seed).as_dict()
    (out / "eval.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report, indent=2))


def cmd_export(scene: Scene, out: Path, args) -> None:
    session = scene.load(_latest_state(out))
    files = driver.export_session(session, out / "export", resolution=int(scene.cfg.texture["resolution"]) * 16,
                                  normalization=scene.norm)
    for path in files.values():
        log.info("wrote %s", path)


COMMANDS = {
    "init": cmd_init,
    "edit-geometry": cmd_edit_geometry,
    "edit-appearance": cmd_edit_appearance,
    "render": cmd_render,
    "eval": cmd_eval,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="focalfuse", description="Localized shape and texture editing.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scene", required=True, type=Path, help="scene TOML file")
        p.add_argument("--steps", type=int, default=None, help="override the stage's step count")
        p.add_argument("--seed", type=int, default=None, help="override scene.seed")
        p.add_argument("--out", type=Path, default=None, help="output directory (default scene.out)")
        p.add_argument("--preset", choices=("paper", "desk"), default=None, help="scale preset")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_scene(args.scene, preset=args.preset)
        if args.seed is not None:
            cfg.scene["seed"] = args.seed
        out = args.out if args.out is not None else cfg.resolve_path(cfg.scene["out"])
        cfg.scene["out"] = str(out)
        if args.steps is not None and args.command in STEP_KEYS:
            table, key = STEP_KEYS[args.command]
            getattr(cfg, table)[key] = args.steps
        write_scene_snapshot(cfg, out, name=f"config.{args.command}.toml")
        COMMANDS[args.command](Scene(cfg), out, args)
    except (ConfigError, FileNotFoundError, ValueError, driver.NonFiniteLossError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
