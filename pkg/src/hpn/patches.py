"""Sliding-window patches over a depth map and their 3D part cuboids.

Under the orthographic camera a patch of ``N`` pixels maps to a cuboid of
side ``M = N / W`` in x and y that spans the full depth range z in [0, 1].
Inside a part, points are expressed in a local frame [-0.5, 0.5]^3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .render import FAR, DepthMap

_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class LevelConfig:
    """One hierarchy level: patch side ``N`` and strides in pixels.

    ``stride_infer`` defaults to ``N // 2`` for local levels and ``N`` for the
    global one (``N == W``).
    """

    N: int
    stride_infer: int | None = None
    stride_train: int | None = None
    level: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("patch size must be >= 1")
        for name in ("stride_infer", "stride_train"):
            s = getattr(self, name)
            if s is not None and not 1 <= s <= self.N:
                raise ValueError(f"{name}={s} must lie in [1, N={self.N}]")

    def infer_stride(self, width: int) -> int:
        if self.stride_infer is not None:
            return self.stride_infer
        return self.N if self.N >= width else max(1, self.N // 2)

    def train_stride(self, width: int) -> int:
        if self.stride_train is not None:
            return self.stride_train
        return self.infer_stride(width)

    def validate_for(self, width: int) -> None:
        if self.N > width:
            raise ValueError(f"patch size {self.N} exceeds image width {width}")


@dataclass(frozen=True)
class PartRegion:
    x0: float
    y0: float
    M: float
    patch_id: int = -1

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.x0, self.y0, 0.0])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.x0 + self.M, self.y0 + self.M, 1.0])

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x0 + 0.5 * self.M, self.y0 + 0.5 * self.M, 0.5])

    def contains(self, points, tol: float = _EDGE_TOL) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        return np.all((p >= self.lower - tol) & (p <= self.upper + tol), axis=1)


@dataclass(eq=False)
class Patch:
    """N x N crop whose top-left pixel is ``(top, left)``."""

    N: int
    top: int
    left: int
    width: int
    height: int
    pixels: np.ndarray
    valid: np.ndarray
    index: int = 0

    @property
    def center(self) -> tuple[int, int]:
        """Center pixel ``(row, col)`` on the stride lattice."""
        return self.top + self.N // 2, self.left + self.N // 2

    @property
    def center_xy(self) -> tuple[float, float]:
        """Continuous image-plane center in pixel units (col, row)."""
        return self.left + 0.5 * self.N, self.top + 0.5 * self.N

    @property
    def part(self) -> PartRegion:
        return part_for_patch(self)


def pad_to_square(depth: DepthMap) -> DepthMap:
    """Pad the bottom/right with background so the map becomes square."""
    h, w = depth.depth.shape
    s = max(h, w)
    if h == w:
        return depth
    d = np.full((s, s), FAR, dtype=np.float32)
    v = np.zeros((s, s), dtype=bool)
    d[:h, :w] = depth.depth
    v[:h, :w] = depth.valid
    return DepthMap(d, v)


def crop(depth: DepthMap, top: int, left: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Crop with out-of-image pixels reading as (1.0, invalid)."""
    pix = np.full((n, n), FAR, dtype=np.float32)
    val = np.zeros((n, n), dtype=bool)
    h, w = depth.depth.shape
    r0, r1 = max(top, 0), min(top + n, h)
    c0, c1 = max(left, 0), min(left + n, w)
    if r0 < r1 and c0 < c1:
        pix[r0 - top:r1 - top, c0 - left:c1 - left] = depth.depth[r0:r1, c0:c1]
        val[r0 - top:r1 - top, c0 - left:c1 - left] = depth.valid[r0:r1, c0:c1]
    return pix, val


def lattice(size: int, n: int, stride: int) -> list[int]:
    """Patch start offsets along one axis; the last patch ends at the border."""
    if n >= size:
        return [0]
    count = math.ceil((size - n) / stride) + 1
    return [min(k * stride, size - n) for k in range(count)]


def enumerate_patches(depth: DepthMap, cfg: LevelConfig | int, stride: int | None = None) -> list[Patch]:
    if isinstance(cfg, int):
        cfg = LevelConfig(cfg)
    depth = pad_to_square(depth)
    h, w = depth.depth.shape
    cfg.validate_for(w)
    s = stride if stride is not None else cfg.infer_stride(w)
    if not 1 <= s <= cfg.N:
        raise ValueError(f"stride {s} must lie in [1, {cfg.N}]")
    patches = []
    for top in lattice(h, cfg.N, s):
        for left in lattice(w, cfg.N, s):
            pix, val = crop(depth, top, left, cfg.N)
            patches.append(Patch(cfg.N, top, left, w, h, pix, val, len(patches)))
    return patches


def part_for_patch(patch: Patch) -> PartRegion:
    m = patch.N / patch.width
    x0 = patch.left / patch.width
    y0 = 1.0 - (patch.top + patch.N) / patch.height
    return PartRegion(x0, y0, m, patch.index)


def to_local(part: PartRegion, points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if not np.all(part.contains(p)):
        raise ValueError("point outside part region")
    q = np.empty_like(p)
    q[..., 0] = (p[..., 0] - part.x0) / part.M - 0.5
    q[..., 1] = (p[..., 1] - part.y0) / part.M - 0.5
    q[..., 2] = p[..., 2] - 0.5
    return q


def from_local(part: PartRegion, local) -> np.ndarray:
    q = np.asarray(local, dtype=float)
    if np.any(np.abs(q) > 0.5 + _EDGE_TOL):
        raise ValueError("local point outside [-0.5, 0.5]^3")
    p = np.empty_like(q)
    p[..., 0] = (q[..., 0] + 0.5) * part.M + part.x0
    p[..., 1] = (q[..., 1] + 0.5) * part.M + part.y0
    p[..., 2] = q[..., 2] + 0.5
    return p


def voxel_range(lo: float, hi: float, res: int) -> np.ndarray:
    """Indices k with voxel center (k + 0.5) / res inside [lo, hi]."""
    k0 = max(math.ceil(lo * res - 0.5 - _EDGE_TOL), 0)
    k1 = min(math.floor(hi * res - 0.5 + _EDGE_TOL), res - 1)
    return np.arange(k0, k1 + 1)


@dataclass
class QueryPoints:
    voxels: np.ndarray  # (n, 3) integer voxel indices (ix, iy, iz)
    points: np.ndarray  # (n, 3) global coordinates
    local: np.ndarray  # (n, 3) part-local coordinates

    def __len__(self):
        return len(self.points)


def sample_query_points(part: PartRegion, grid_res: int) -> QueryPoints:
    """Fusion-grid voxel centers that fall inside ``part``."""
    if grid_res < 2:
        raise ValueError("grid_res must be >= 2")
    ix = voxel_range(part.x0, part.x0 + part.M, grid_res)
    iy = voxel_range(part.y0, part.y0 + part.M, grid_res)
    iz = np.arange(grid_res)
    if ix.size == 0 or iy.size == 0:
        raise ValueError("part contains no voxel centers")
    vox = np.stack(np.meshgrid(ix, iy, iz, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = (vox + 0.5) / grid_res
    return QueryPoints(vox, pts, to_local(part, pts))


def sample_random_points(part: PartRegion, k: int = 1500, seed: int = 0) -> QueryPoints:
    """``k`` uniform points in the part (training-style sampling)."""
    rng = np.random.default_rng(seed)
    local = rng.random((k, 3)) - 0.5
    return QueryPoints(np.full((k, 3), -1, dtype=np.int64), from_local(part, local), local)
