"""End-to-end reconstruction: depth map -> per-level fields -> fused field -> mesh."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backends import ImplicitBackend
from .fusion import (DEFAULT_BETA, DEFAULT_TAU, DEFAULT_TAU_SDF, FusedField, fuse_hierarchy,
                     reconstruct_level, threshold_field)
from .geometry import Mesh, SceneSpec, scene_occupancy
from .meshing import IsoSpec, marching_cubes
from .patches import LevelConfig
from .render import DepthMap


@dataclass
class Level:
    cfg: LevelConfig
    backend: ImplicitBackend
    name: str = ""

    def __post_init__(self):
        if isinstance(self.cfg, int):
            self.cfg = LevelConfig(self.cfg)
        if not self.name:
            self.name = str(self.cfg.N)


def validate_hierarchy(levels: list[Level], width: int) -> None:
    if not levels:
        raise ValueError("hierarchy needs at least one level")
    if sum(lv.cfg.N == width for lv in levels) > 1:
        raise ValueError("at most one level may cover the whole image")
    for lv in levels:
        lv.cfg.validate_for(width)


@dataclass
class Reconstruction:
    level_fields: list[FusedField]
    fused: FusedField
    occupancy: np.ndarray
    mesh: Mesh
    names: list[str] = field(default_factory=list)


def reconstruct(depth: DepthMap, levels: list[Level], grid_res: int = 64, tau: float = DEFAULT_TAU,
                tau_sdf: float = DEFAULT_TAU_SDF, beta: float = DEFAULT_BETA, workers: int = 1,
                deterministic: bool = True) -> Reconstruction:
    validate_hierarchy(levels, max(depth.width, depth.height))
    fields = [reconstruct_level(depth, lv.cfg, lv.backend, grid_res, workers=workers,
                                deterministic=deterministic) for lv in levels]
    if len(fields) == 1 and fields[0].kind == "sdf":
        # an SDF-only hierarchy keeps its own iso convention
        fused = fields[0]
    else:
        fused = fuse_hierarchy(fields, beta)
    occ = threshold_field(fused, tau, tau_sdf)
    mesh = marching_cubes(fused, IsoSpec.for_field(fused, tau, tau_sdf))
    return Reconstruction(fields, fused, occ, mesh, [lv.name for lv in levels])


def voxel_centers(grid_res: int) -> np.ndarray:
    c = (np.arange(grid_res) + 0.5) / grid_res
    return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1)


def voxelize_scene(scene: SceneSpec, grid_res: int = 64) -> np.ndarray:
    """Ground-truth occupancy at fusion-grid voxel centers, indexed [ix, iy, iz]."""
    return scene_occupancy(scene, voxel_centers(grid_res).reshape(-1, 3)).reshape((grid_res,) * 3)
