"""Scene configuration files (TOML) with presets, defaults and validation."""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

import tomli_w

from .losses import LAMBDA_B, LAMBDA_CA, LAMBDA_GF, LAMBDA_SC, FocalLossParams
from .render import DEFAULT_FOV, R_DEFAULT, THETA_MAX, THETA_MIN


class ConfigError(ValueError):
    """A scene file that cannot be parsed or fails validation."""


PRESETS = {
    "desk": {
        "grid": {"resolution": 32},
        "geometry": {"steps": 600, "init_iters": 3000, "init_batch": 10240},
        "appearance": {"steps": 400, "resolution": 64},
        "texture": {"resolution": 32},
    },
    "paper": {
        "grid": {"resolution": 64},
        "geometry": {"steps": 3000, "init_iters": 15000, "init_batch": 10240},
        "appearance": {"steps": 2000, "resolution": 256},
        "texture": {"resolution": 64},
    },
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "scene": {"base_mesh": None, "seed": 0, "out": "run", "preset": "desk", "normalize": True, "fill": 0.8},
    "grid": {"resolution": 32, "bounds": [[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]},
    "losses": {
        "lambda_gf": LAMBDA_GF,
        "lambda_ca": LAMBDA_CA,
        "lambda_sc": LAMBDA_SC,
        "lambda_b": LAMBDA_B,
        "sigma1": FocalLossParams.sigma1,
        "sigma2": FocalLossParams.sigma2,
        "xi": FocalLossParams.xi,
        "k": 0.15,
    },
    "geometry": {
        "steps": 600,
        "lr": 1e-3,
        "init_iters": 3000,
        "init_batch": 10240,
        "init_lr": 1e-2,
        "coarse_objective": "field",
        "refined_objective": "field",
        "offset_fraction": 0.25,
    },
    "appearance": {
        "steps": 400,
        "lr": 1e-2,
        "s": 1,
        "l": 4,
        "r": [R_DEFAULT, R_DEFAULT],
        "theta": [THETA_MIN, THETA_MAX],
        "fov": float(DEFAULT_FOV),
        "resolution": 64,
        "delta_scale": 0.01,
        "specular": True,
    },
    "texture": {
        "resolution": 32,
        "base_kd": [0.6, 0.6, 0.6],
        "base_roughness": 0.5,
        "base_metalness": 0.0,
        "edit_kd": [0.5, 0.5, 0.5],
    },
    "light": {"radiance": 1.0, "directions": 128, "envmap": None},
    "render": {"views": 4, "resolution": 256, "format": "png", "dump_every": 0, "normal_space": "world"},
    "target": {
        "shape": "box",
        "center": [0.0, 0.0, 0.0],
        "half_extents": [0.1, 0.1, 0.1],
        "radius": 0.1,
        "path": None,
        "color": [0.5, 0.5, 0.5],
        "image": None,
    },
}

REGION_KEYS = {"stretch", "rotation_deg", "translation"}
TARGET_SHAPES = ("box", "sphere", "ellipsoid", "mesh")


@dataclass
class RegionSpec:
    stretch: list
    rotation_deg: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    translation: list = field(default_factory=lambda: [0.0, 0.0, 0.0])

    def rotation_radians(self) -> list:
        return [math.radians(a) for a in self.rotation_deg]


@dataclass
class SceneConfig:
    path: Optional[Path]
    scene: dict
    grid: dict
    losses: dict
    geometry: dict
    appearance: dict
    texture: dict
    light: dict
    render: dict
    target: dict
    regions: list

    @property
    def root(self) -> Path:
        return self.path.parent if self.path is not None else Path.cwd()

    def resolve_path(self, value) -> Optional[Path]:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.root / p

    @property
    def base_mesh_path(self) -> Path:
        return self.resolve_path(self.scene["base_mesh"])

    @property
    def seed(self) -> int:
        return int(self.scene["seed"])

    def to_dict(self) -> dict:
        out = {}
        for name in DEFAULTS:
            table = {k: v for k, v in getattr(self, name).items() if v is not None}
            out[name] = table
        out["scene"]["base_mesh"] = str(self.base_mesh_path)
        for key in ("path", "image"):
            if out["target"].get(key) is not None:
                out["target"][key] = str(self.resolve_path(out["target"][key]))
        if out["light"].get("envmap") is not None:
            out["light"]["envmap"] = str(self.resolve_path(out["light"]["envmap"]))
        out["regions"] = [
            {"stretch": r.stretch, "rotation_deg": r.rotation_deg, "translation": r.translation}
            for r in self.regions
        ]
        return out

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _line_of(text: str, key: str) -> Optional[int]:
    pattern = re.compile(rf"^\s*(\[+\s*)?{re.escape(key)}\b")
    for i, line in enumerate(text.splitlines(), 1):
        if pattern.match(line):
            return i
    return None


def _fail(text: str, key: str, message: str):
    line = _line_of(text, key)
    where = f"line {line}: " if line else ""
    raise ConfigError(f"{where}{message}")


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for name, table in update.items():
        out.setdefault(name, {}).update(copy.deepcopy(table))
    return out


def _vec3(value, name: str) -> list:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be three finite numbers, got {value!r}")
    return arr.tolist()


def parse_scene(text: str, path: Optional[Path] = None, preset: Optional[str] = None,
                check_paths: bool = True) -> SceneConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed scene file{f' {path}' if path else ''}: {exc}") from exc

    unknown_tables = set(raw) - set(DEFAULTS) - {"regions"}
    for name in sorted(unknown_tables):
        _fail(text, name, f"unknown table or key {name!r}")
    for name, table in raw.items():
        if name == "regions":
            continue
        if not isinstance(table, dict):
            _fail(text, name, f"{name!r} must be a table")
        for key in table:
            if key not in DEFAULTS[name]:
                _fail(text, key, f"unknown key {name}.{key}")

    chosen = preset or raw.get("scene", {}).get("preset", DEFAULTS["scene"]["preset"])
    if chosen not in PRESETS:
        _fail(text, "preset", f"unknown preset {chosen!r}; expected one of {sorted(PRESETS)}")
    merged = _merge(_merge(DEFAULTS, PRESETS[chosen]), {k: v for k, v in raw.items() if k != "regions"})
    merged["scene"]["preset"] = chosen

    regions_raw = raw.get("regions", [])
    if not isinstance(regions_raw, list) or not regions_raw:
        raise ConfigError("at least one [[regions]] entry is required")
    regions = []
    for i, r in enumerate(regions_raw):
        extra = set(r) - REGION_KEYS
        if extra:
            _fail(text, sorted(extra)[0], f"unknown key regions[{i}].{sorted(extra)[0]}")
        if "stretch" not in r:
            raise ConfigError(f"regions[{i}] needs a stretch")
        spec = RegionSpec(
            _vec3(r["stretch"], f"regions[{i}].stretch"),
            _vec3(r.get("rotation_deg", [0, 0, 0]), f"regions[{i}].rotation_deg"),
            _vec3(r.get("translation", [0, 0, 0]), f"regions[{i}].translation"),
        )
        if min(spec.stretch) <= 0:
            _fail(text, "stretch", f"regions[{i}].stretch must be positive")
        regions.append(spec)

    cfg = SceneConfig(path=Path(path) if path else None, regions=regions, **merged)
    _validate(cfg, text, check_paths)
    return cfg


def _validate(cfg: SceneConfig, text: str, check_paths: bool) -> None:
    for key, value in cfg.losses.items():
        if not isinstance(value, (int, float)) or value < 0 or not math.isfinite(value):
            _fail(text, key, f"losses.{key} must be a finite number >= 0, got {value!r}")
    for key in ("sigma1", "sigma2", "xi", "k"):
        if cfg.losses[key] <= 0:
            _fail(text, key, f"losses.{key} must be positive")
    for stage in ("geometry", "appearance"):
        table = getattr(cfg, stage)
        if int(table["steps"]) < 0:
            _fail(text, "steps", f"{stage}.steps must be >= 0")
        if table["lr"] <= 0:
            _fail(text, "lr", f"{stage}.lr must be positive")
    for key in ("coarse_objective", "refined_objective"):
        allowed = ("field", "encoding") if key == "coarse_objective" else ("field", "normal")
        if cfg.geometry[key] not in allowed:
            _fail(text, key, f"geometry.{key} must be one of {allowed}")
    res = cfg.grid["resolution"]
    if isinstance(res, int):
        res = [res] * 3
    if len(res) != 3 or min(res) < 1:
        _fail(text, "resolution", "grid.resolution must be >= 1")
    b = np.asarray(cfg.grid["bounds"], dtype=np.float64)
    if b.shape != (2, 3) or np.any(b[1] <= b[0]):
        _fail(text, "bounds", "grid.bounds must be [[lo x, y, z], [hi x, y, z]] with lo < hi")
    a = cfg.appearance
    if a["s"] < 1 or a["l"] < 1:
        _fail(text, "s", "appearance.s and appearance.l must be >= 1")
    if a["r"][0] > a["r"][1] or a["r"][0] <= 0:
        _fail(text, "r", "appearance.r must be a nonempty positive range")
    if a["theta"][0] > a["theta"][1]:
        _fail(text, "theta", "appearance.theta must be a nonempty range")
    if cfg.target["shape"] not in TARGET_SHAPES:
        _fail(text, "shape", f"target.shape must be one of {TARGET_SHAPES}")
    if cfg.render["format"] not in ("png", "ppm"):
        _fail(text, "format", "render.format must be png or ppm")
    if cfg.render["normal_space"] not in ("world", "camera"):
        _fail(text, "normal_space", "render.normal_space must be world or camera")
    if cfg.scene["base_mesh"] is None:
        raise ConfigError("scene.base_mesh is required")
    if check_paths:
        paths = [("base_mesh", cfg.scene["base_mesh"]), ("path", cfg.target["path"]),
                 ("image", cfg.target["image"]), ("envmap", cfg.light["envmap"])]
        for key, value in paths:
            if value is not None and not cfg.resolve_path(value).exists():
                _fail(text, key, f"file not found: {cfg.resolve_path(value)}")


def load_scene(path, preset: Optional[str] = None, check_paths: bool = True) -> SceneConfig:
    """Parse and validate a scene file; omitted fields take the defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scene file {path}: {exc}") from exc
    return parse_scene(text, path, preset, check_paths)


def write_scene_snapshot(cfg: SceneConfig, out_dir, name: str = "config.resolved.toml") -> Path:
    """Write the fully resolved config next to the run's artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(cfg.dumps())
    return path
