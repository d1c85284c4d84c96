"""Orthographic depth rendering by sphere tracing, and visibility labels.

The image plane is z=0 and rays travel along +z. Pixel ``(u, v)`` (column,
row; row 0 at the top) shoots from ``x=(u+0.5)/W, y=1-(v+0.5)/H``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import SceneSpec, scene_sdf

HPND_MAGIC = b"HPND"
MAX_STEPS = 256
SURFACE_TOL = 1e-5
FAR = 1.0


@dataclass
class DepthMap:
    """Viewer-centered depth, shape ``(H, W)``; invalid pixels hold 1.0."""

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float32)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.depth.shape != self.valid.shape or self.depth.ndim != 2:
            raise ValueError("depth and valid must be matching 2D arrays")
        self.depth = np.where(self.valid, self.depth, np.float32(FAR)).astype(np.float32)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def __eq__(self, other):
        return (isinstance(other, DepthMap) and np.array_equal(self.depth, other.depth)
                and np.array_equal(self.valid, other.valid))


def pixel_rays(width: int, height: int) -> np.ndarray:
    """Ray origins on the z=0 plane, shape ``(H*W, 3)`` in row-major pixel order."""
    u = (np.arange(width) + 0.5) / width
    v = 1.0 - (np.arange(height) + 0.5) / height
    xx, yy = np.meshgrid(u, v)
    return np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])


def render_depth(scene: SceneSpec, width: int = 256, height: int = 256) -> DepthMap:
    if width <= 0 or height <= 0:
        raise ValueError("image size must be positive")
    origins = pixel_rays(width, height)
    t = np.zeros(len(origins))
    hit = np.zeros(len(origins), dtype=bool)
    active = np.arange(len(origins))
    for _ in range(MAX_STEPS):
        if active.size == 0:
            break
        p = origins[active].copy()
        p[:, 2] = t[active]
        d = np.asarray(scene_sdf(scene, p))
        done = d < SURFACE_TOL
        hit[active[done]] = True
        t[active[~done]] += d[~done]
        active = active[~done]
        active = active[t[active] <= FAR]
    depth = np.where(hit, np.clip(t, 0.0, FAR), FAR).reshape(height, width)
    return DepthMap(depth, hit.reshape(height, width))


def project(points: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel (column, row) each point falls into, clamped to the image."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    col = np.clip(np.floor(p[:, 0] * width).astype(np.int64), 0, width - 1)
    row = np.clip(np.floor((1.0 - p[:, 1]) * height).astype(np.int64), 0, height - 1)
    return col, row


def label_visibility(depth: DepthMap, points, eps: float) -> np.ndarray:
    """True where a point coincides with the depth observed at its pixel.

    Points behind the observed surface, or over background pixels, are
    invisible. ``eps`` may be ``inf``.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    col, row = project(p, depth.width, depth.height)
    observed = depth.depth[row, col].astype(float)
    valid = depth.valid[row, col]
    return valid & (np.abs(p[:, 2] - observed) <= eps)


def write_hpnd(depth: DepthMap, path) -> None:
    h, w = depth.depth.shape
    with open(path, "wb") as f:
        f.write(HPND_MAGIC + struct.pack("<II", w, h))
        f.write(depth.depth.astype("<f4").tobytes())
        f.write(depth.valid.astype(np.uint8).tobytes())


def read_hpnd(path) -> DepthMap:
    data = Path(path).read_bytes()
    if data[:4] != HPND_MAGIC:
        raise ValueError(f"{path}: not an HPND depth map")
    w, h = struct.unpack_from("<II", data, 4)
    n = w * h
    if len(data) != 12 + 5 * n:
        raise ValueError(f"{path}: truncated or oversized HPND payload")
    depth = np.frombuffer(data, "<f4", n, 12).reshape(h, w)
    valid = np.frombuffer(data, np.uint8, n, 12 + 4 * n).reshape(h, w)
    return DepthMap(depth.astype(np.float32), valid != 0)


def write_pgm16(depth: DepthMap, path) -> None:
    """16-bit binary PGM for viewing; invalid pixels are 65535."""
    q = np.round(np.clip(depth.depth, 0.0, 1.0) * 65534.0).astype(np.uint16)
    q[~depth.valid] = 65535
    h, w = q.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(q.astype(">u2").tobytes())
