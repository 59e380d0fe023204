"""Localized editing of a frozen base mesh through a learnable editable part.

The editable part lives on a deformable tetrahedral grid as a signed distance
field, is confined to focal regions, and is fused with the base by a soft
union. Its texture is a dense material field rendered through a separate
shading path, so the base's geometry and appearance stay untouched.
"""

from .driver import (
    AppearanceConfig,
    EditSession,
    GeometryConfig,
    create_session,
    progressive_edit,
    run_appearance_stage,
    run_geometry_stage,
)
from .focal import FocalRegion, init_editable_sdf, make_focal_region
from .mesh import BACKGROUND, BASE, EDITABLE, TriMesh, icosphere, merge_meshes
from .metrics import eval_preservation
from .render import Camera, EnvLight, compose, rasterize, render_paths, sample_cameras, shade
from .sdf import MeshSdf, soft_union
from .tetgrid import TetGrid, build_grid, marching_tetrahedra
from .texture import TextureField

__version__ = "0.1.0"

__all__ = [
    "AppearanceConfig",
    "BACKGROUND",
    "BASE",
    "Camera",
    "EDITABLE",
    "EditSession",
    "EnvLight",
    "FocalRegion",
    "GeometryConfig",
    "MeshSdf",
    "TetGrid",
    "TextureField",
    "TriMesh",
    "build_grid",
    "compose",
    "create_session",
    "eval_preservation",
    "icosphere",
    "init_editable_sdf",
    "make_focal_region",
    "marching_tetrahedra",
    "merge_meshes",
    "progressive_edit",
    "rasterize",
    "render_paths",
    "run_appearance_stage",
    "run_geometry_stage",
    "sample_cameras",
    "shade",
    "soft_union",
]
