"""Chamfer distance, F-score, IoU and the visible/invisible evaluation split."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Mesh, SceneSpec, sample_surface_points, scene_occupancy
from .render import DepthMap, label_visibility

DEFAULT_FSCORE_THRESHOLD = 0.01
DEFAULT_SURFACE_SAMPLES = 10_000
# reported for undefined comparisons (an empty point set)
WORST_CHAMFER = float(np.sqrt(3.0))


class NNIndex:
    """Exact nearest-neighbor distances to a fixed point set."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(self.points) == 0:
            raise ValueError("cannot index an empty point set")
        self._tree = cKDTree(self.points)

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        d, i = self._tree.query(np.asarray(queries, dtype=float).reshape(-1, 3), k=1)
        return d, i


def nn_distances(a, b) -> np.ndarray:
    """For each point of ``a``, the distance to its nearest point of ``b``."""
    return NNIndex(b).query(a)[0]


def _check(a, b):
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point sets must be non-empty")
    return a, b


def chamfer(a, b) -> float:
    """Half the sum of the two mean nearest-neighbor distances (unscaled)."""
    a, b = _check(a, b)
    return 0.5 * (nn_distances(a, b).mean() + nn_distances(b, a).mean())


def fscore(a, b, d_thresh: float = DEFAULT_FSCORE_THRESHOLD) -> float:
    """F-score in percent; ``a`` is the prediction, ``b`` the reference."""
    if d_thresh <= 0:
        raise ValueError("d_thresh must be positive")
    a, b = _check(a, b)
    precision = np.mean(nn_distances(a, b) <= d_thresh)
    recall = np.mean(nn_distances(b, a) <= d_thresh)
    if precision + recall == 0:
        return 0.0
    return float(200.0 * precision * recall / (precision + recall))


def grid_occupancy(binary: np.ndarray):
    """Occupancy callable for a voxel grid over [0,1]^3 (nearest voxel)."""
    grid = np.asarray(binary, dtype=bool)
    r = grid.shape[0]

    def occ(points):
        idx = np.clip(np.floor(np.asarray(points) * r).astype(np.int64), 0, r - 1)
        return grid[idx[:, 0], idx[:, 1], idx[:, 2]]

    return occ


def _as_occupancy(source):
    if isinstance(source, SceneSpec):
        return lambda p: scene_occupancy(source, p)
    if isinstance(source, np.ndarray):
        return grid_occupancy(source)
    return source


def iou(a, b, n_samples: int = 100_000, seed: int = 0) -> float:
    """Monte-Carlo volumetric IoU in percent over the unit cube.

    ``a`` and ``b`` are scenes, binary voxel grids or callables mapping
    ``(n, 3)`` points to booleans.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    pts = np.random.default_rng(seed).random((n_samples, 3))
    oa = np.asarray(_as_occupancy(a)(pts), dtype=bool)
    ob = np.asarray(_as_occupancy(b)(pts), dtype=bool)
    union = np.count_nonzero(oa | ob)
    if union == 0:
        return 100.0
    return 100.0 * np.count_nonzero(oa & ob) / union


@dataclass
class SplitScore:
    fscore: float
    chamfer: float  # reported scale (x100)
    n_gt: int = 0
    n_pred: int = 0
    valid: bool = True


@dataclass
class MetricReport:
    scene_id: str = ""
    backend: str = ""
    hierarchy: str = ""
    fscore: float = 0.0
    chamfer: float = 0.0  # x100
    iou: float = float("nan")
    splits: dict = field(default_factory=dict)
    seed: int = 0
    valid: bool = True

    def row(self) -> dict:
        out = {
            "scene_id": self.scene_id, "backend": self.backend, "hierarchy": self.hierarchy,
            "fscore": self.fscore, "chamfer_x100": self.chamfer, "iou": self.iou,
        }
        for name in ("visible", "invisible"):
            s = self.splits.get(name)
            out[f"{name}_fscore"] = s.fscore if s else float("nan")
            out[f"{name}_chamfer_x100"] = s.chamfer if s else float("nan")
        out["seed"] = self.seed
        out["valid"] = int(self.valid)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["splits"] = {k: asdict(v) for k, v in self.splits.items()}
        return d


REPORT_COLUMNS = ["scene_id", "backend", "hierarchy", "fscore", "chamfer_x100", "iou",
                  "visible_fscore", "visible_chamfer_x100", "invisible_fscore",
                  "invisible_chamfer_x100", "seed", "valid"]


def _split_score(pred, gt, d_thresh) -> SplitScore:
    if len(pred) == 0 or len(gt) == 0:
        # nothing to compare on one side: worst case for the prediction
        ok = len(pred) == 0 and len(gt) == 0
        return SplitScore(100.0 if ok else 0.0, 0.0 if ok else 100.0 * WORST_CHAMFER,
                          len(gt), len(pred), valid=ok)
    return SplitScore(fscore(pred, gt, d_thresh), 100.0 * chamfer(pred, gt), len(gt), len(pred))


def evaluate_split(pred: Mesh, gt: SceneSpec | Mesh, depth: DepthMap, eps: float,
                   n: int = DEFAULT_SURFACE_SAMPLES, d_thresh: float = DEFAULT_FSCORE_THRESHOLD,
                   seed: int = 0, pred_occupancy=None, iou_samples: int = 100_000) -> MetricReport:
    """Full / visible / invisible F-score and Chamfer of ``pred`` against ``gt``.

    Ground-truth and predicted surface samples are both labeled against the
    input depth map; each split compares only the like-labeled points.
    """
    gt_pts = sample_surface_points(gt, n, seed)
    if pred.is_empty:
        bad = SplitScore(0.0, 100.0 * WORST_CHAMFER, n, 0, valid=False)
        return MetricReport(fscore=0.0, chamfer=100.0 * WORST_CHAMFER, iou=0.0,
                            splits={"full": bad, "visible": bad, "invisible": bad}, seed=seed, valid=False)
    pred_pts = sample_surface_points(pred, n, seed + 1)
    gt_vis = label_visibility(depth, gt_pts, eps)
    pred_vis = label_visibility(depth, pred_pts, eps)
    splits = {
        "full": _split_score(pred_pts, gt_pts, d_thresh),
        "visible": _split_score(pred_pts[pred_vis], gt_pts[gt_vis], d_thresh),
        "invisible": _split_score(pred_pts[~pred_vis], gt_pts[~gt_vis], d_thresh),
    }
    score = float("nan")
    if pred_occupancy is not None and isinstance(gt, SceneSpec):
        score = iou(pred_occupancy, gt, iou_samples, seed)
    return MetricReport(fscore=splits["full"].fscore, chamfer=splits["full"].chamfer, iou=score,
                        splits=splits, seed=seed)


def format_report(reports: list[MetricReport]) -> str:
    """Human-readable block per scene plus a mean line."""
    lines = []
    for r in reports:
        lines.append(f"scene {r.scene_id}  backend={r.backend}  hierarchy={r.hierarchy}"
                     + ("" if r.valid else "  [INVALID]"))
        lines.append(f"  full       F={r.fscore:6.2f}  CDx100={r.chamfer:7.3f}  IoU={r.iou:6.2f}")
        for name in ("visible", "invisible"):
            s = r.splits.get(name)
            if s:
                lines.append(f"  {name:<10} F={s.fscore:6.2f}  CDx100={s.chamfer:7.3f}")
    if reports:
        m = mean_report(reports)
        lines.append(f"mean over {len(reports)}: F={m['fscore']:.2f} CDx100={m['chamfer_x100']:.3f} "
                     f"IoU={m['iou']:.2f} visF={m['visible_fscore']:.2f} invF={m['invisible_fscore']:.2f}")
    return "\n".join(lines) + "\n"


def mean_report(reports: list[MetricReport]) -> dict:
    rows = [r.row() for r in reports]
    return {k: float(np.nanmean([row[k] for row in rows])) if rows and not all(np.isnan(row[k]) for row in rows)
            else float("nan")
            for k in REPORT_COLUMNS if k not in ("scene_id", "backend", "hierarchy")}


def report_csv(reports: list[MetricReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()
