"""Overlap fusion within a level and probability fusion across levels.

Within a level, backend outputs (logits or signed distances) are averaged per
voxel with a Gaussian weight on the voxel's image-plane offset from the patch
center. Across levels, each field is turned into an occupancy probability and
the probabilities are averaged.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import SIGNED_DISTANCE, BackendError, ImplicitBackend
from .patches import LevelConfig, Patch, enumerate_patches, part_for_patch, sample_query_points
from .render import DepthMap

LOGIT, PROBABILITY, SDF = "logit", "probability", "sdf"
EMPTY_VALUE = {PROBABILITY: 0.0, SDF: 0.5, LOGIT: -np.inf}
HPNF_MAGIC = b"HPNF"
_KIND_CODES = {PROBABILITY: 0, SDF: 1, LOGIT: 2}

DEFAULT_TAU = 0.5
DEFAULT_TAU_SDF = -0.02
DEFAULT_BETA = 0.05


def gaussian_weight(patch: Patch, points) -> np.ndarray:
    """exp(-r^2 / (2 sigma^2)) with r the pixel offset from the patch center, sigma = N/4."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    cx, cy = patch.center_xy
    dx = p[:, 0] * patch.width - cx
    dy = (1.0 - p[:, 1]) * patch.height - cy
    sigma = patch.N / 4.0
    return np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))


@dataclass
class FusedField:
    values: np.ndarray  # (R, R, R) indexed [ix, iy, iz]
    kind: str
    touched: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in EMPTY_VALUE:
            raise ValueError(f"unknown field kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)
        if self.touched is None:
            self.touched = np.ones(self.values.shape, dtype=bool)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]


class AccumulatorGrid:
    """Per-voxel running (weighted sum, weight) plus value range.

    The finalized mean is clamped to the contributed range, so a voxel that
    only ever receives one value returns that value exactly whatever the
    weights.
    """

    def __init__(self, resolution: int = 64):
        if resolution < 2:
            raise ValueError("resolution must be >= 2")
        shape = (resolution,) * 3
        self.resolution = resolution
        self.weighted_sum = np.zeros(shape)
        self.weight = np.zeros(shape)
        self.vmin = np.full(shape, np.inf)
        self.vmax = np.full(shape, -np.inf)

    def accumulate(self, voxels, values, weights) -> None:
        vox = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
        values = np.broadcast_to(np.asarray(values, dtype=float), (len(vox),))
        weights = np.broadcast_to(np.asarray(weights, dtype=float), (len(vox),))
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        idx = tuple(vox.T)
        np.add.at(self.weighted_sum, idx, weights * values)
        np.add.at(self.weight, idx, weights)
        np.minimum.at(self.vmin, idx, values)
        np.maximum.at(self.vmax, idx, values)

    def merge(self, other: "AccumulatorGrid") -> None:
        self.weighted_sum += other.weighted_sum
        self.weight += other.weight
        np.minimum(self.vmin, other.vmin, out=self.vmin)
        np.maximum(self.vmax, other.vmax, out=self.vmax)

    def finalize(self, kind: str = LOGIT) -> FusedField:
        touched = self.weight > 0
        out = np.full(self.weight.shape, EMPTY_VALUE[kind])
        mean = self.weighted_sum[touched] / self.weight[touched]
        out[touched] = np.clip(mean, self.vmin[touched], self.vmax[touched])
        return FusedField(out, kind, touched)


def accumulate(grid: AccumulatorGrid, voxel, value, weight) -> None:
    grid.accumulate(voxel, value, weight)


def finalize(grid: AccumulatorGrid, kind: str = LOGIT) -> FusedField:
    return grid.finalize(kind)


def _eval_patch(backend: ImplicitBackend, patch: Patch, grid_res: int):
    q = sample_query_points(part_for_patch(patch), grid_res)
    try:
        values = np.asarray(backend.eval(patch, q.local), dtype=float)
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"backend failed: {exc}", patch.index, patch.N) from exc
    if values.shape != (len(q),):
        raise BackendError(f"backend returned {values.shape} for {len(q)} points", patch.index, patch.N)
    return q.voxels, values, gaussian_weight(patch, q.points)


def reconstruct_level(depth: DepthMap, cfg: LevelConfig | int, backend: ImplicitBackend,
                      grid_res: int = 64, stride: int | None = None, workers: int = 1,
                      deterministic: bool = True, order=None) -> FusedField:
    """Slide the backend over the depth map and fuse the parts into one field.

    With ``deterministic`` the per-patch results are accumulated in patch
    order regardless of ``workers``, giving bit-identical output. ``order``
    optionally permutes the accumulation order (used by tests).
    """
    if isinstance(cfg, int):
        cfg = LevelConfig(cfg)
    patches = enumerate_patches(depth, cfg, stride)
    if order is not None:
        patches = [patches[i] for i in order]
    grid = AccumulatorGrid(grid_res)
    kind = SDF if backend.kind == SIGNED_DISTANCE else LOGIT
    if backend.serial or workers <= 1:
        for patch in patches:
            grid.accumulate(*_eval_patch(backend, patch, grid_res))
        return grid.finalize(kind)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        if deterministic:
            for res in pool.map(lambda p: _eval_patch(backend, p, grid_res), patches):
                grid.accumulate(*res)
        else:
            futures = [pool.submit(_eval_patch, backend, p, grid_res) for p in patches]
            for fut in as_completed(futures):
                grid.accumulate(*fut.result())
    return grid.finalize(kind)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def to_probability(field: FusedField, beta: float = DEFAULT_BETA) -> FusedField:
    if field.kind == PROBABILITY:
        p = field.values.copy()
    elif field.kind == LOGIT:
        p = sigmoid(field.values)
    else:
        p = sigmoid(-field.values / beta)
    p[~field.touched] = EMPTY_VALUE[PROBABILITY]
    return FusedField(p, PROBABILITY, field.touched.copy())


def fuse_hierarchy(levels: list[FusedField], beta: float = DEFAULT_BETA) -> FusedField:
    """Per-voxel mean of the levels' occupancy probabilities."""
    if not levels:
        raise ValueError("need at least one level")
    res = {f.values.shape for f in levels}
    if len(res) != 1:
        raise ValueError(f"levels disagree on resolution: {sorted(res)}")
    probs = [to_probability(f, beta) for f in levels]
    total = np.zeros_like(probs[0].values)
    for p in probs:
        total += p.values
    touched = np.logical_or.reduce([p.touched for p in probs])
    return FusedField(total / len(probs), PROBABILITY, touched)


def threshold_field(field: FusedField, tau: float = DEFAULT_TAU, tau_sdf: float = DEFAULT_TAU_SDF) -> np.ndarray:
    """Binary occupancy: probability >= tau, or sdf <= tau_sdf."""
    if field.kind == SDF:
        return field.values <= tau_sdf
    if field.kind == LOGIT:
        field = to_probability(field)
    return field.values >= tau


def write_hpnf(field: FusedField, path) -> None:
    r = field.resolution
    with open(path, "wb") as f:
        f.write(HPNF_MAGIC + struct.pack("<IB", r, _KIND_CODES[field.kind]))
        f.write(field.values.astype("<f4").ravel(order="F").tobytes())


def read_hpnf(path) -> FusedField:
    data = Path(path).read_bytes()
    if data[:4] != HPNF_MAGIC:
        raise ValueError(f"{path}: not an HPNF field")
    r, code = struct.unpack_from("<IB", data, 4)
    kind = {v: k for k, v in _KIND_CODES.items()}[code]
    if len(data) != 9 + 4 * r**3:
        raise ValueError(f"{path}: HPNF size does not match header")
    values = np.frombuffer(data, "<f4", r**3, 9).reshape((r, r, r), order="F").astype(float)
    touched = np.isfinite(values) if kind == LOGIT else None
    return FusedField(values, kind, touched)
