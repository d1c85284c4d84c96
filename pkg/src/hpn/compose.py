"""Random primitive scenes and multi-object compositions along x."""

from __future__ import annotations

import math

import numpy as np

from .geometry import KINDS, Primitive, SceneSpec, normalize_scene

MAX_X_OVERLAP = 0.10
SCENE_MARGIN = 0.05


def random_primitive(rng: np.random.Generator, kind: str | None = None) -> Primitive:
    """Primitive at the origin with random size and a random azimuth/elevation."""
    kind = kind or KINDS[rng.integers(len(KINDS))]
    if kind == "sphere":
        params = (rng.uniform(0.3, 0.6),)
    elif kind == "box":
        params = tuple(rng.uniform(0.15, 0.5, 3))
    elif kind == "cylinder":
        params = (rng.uniform(0.15, 0.4), rng.uniform(0.2, 0.5))
    else:
        params = (rng.uniform(0.12, 0.3), rng.uniform(0.15, 0.4))
    azimuth = rng.uniform(0.0, 2.0 * math.pi)
    elevation = rng.uniform(-math.pi / 6, math.pi / 6)
    return Primitive(kind, params, azimuth, elevation, (0.0, 0.0, 0.0))


def _moved(p: Primitive, offset) -> Primitive:
    t = np.asarray(p.translation) + np.asarray(offset)
    return Primitive(p.kind, p.params, p.azimuth, p.elevation, tuple(t))


def place_along_x(objects: list[Primitive], rng: np.random.Generator,
                  max_overlap: float = MAX_X_OVERLAP) -> list[Primitive]:
    """Lay objects out left to right with bounded x-overlap of their boxes."""
    placed = []
    for obj in objects:
        jitter = np.array([0.0, rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15)])
        obj = _moved(obj, jitter)
        if placed:
            prev_lo, prev_hi = placed[-1].aabb()
            lo, hi = obj.aabb()
            smaller = min(prev_hi[0] - prev_lo[0], hi[0] - lo[0])
            overlap = rng.uniform(0.0, max_overlap) * smaller
            obj = _moved(obj, (prev_hi[0] - overlap - lo[0], 0.0, 0.0))
        placed.append(obj)
    return placed


def random_scene(rng: np.random.Generator, n_objects: int = 1, seed: int = 0,
                 margin: float = SCENE_MARGIN) -> SceneSpec:
    objs = [random_primitive(rng) for _ in range(n_objects)]
    return normalize_scene(place_along_x(objs, rng), seed=seed, margin=margin)


def compose_scenes(n_scenes: int, max_objects: int = 3, seed: int = 0, min_objects: int = 1,
                   margin: float = SCENE_MARGIN) -> list[SceneSpec]:
    """``n_scenes`` compositions of ``min_objects..max_objects`` primitives each."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    if not 1 <= min_objects <= max_objects:
        raise ValueError("need 1 <= min_objects <= max_objects")
    scenes = []
    for i in range(n_scenes):
        rng = np.random.default_rng([seed, i])
        k = int(rng.integers(min_objects, max_objects + 1))
        scenes.append(random_scene(rng, k, seed=seed * 100_003 + i, margin=margin))
    return scenes


def max_pairwise_x_overlap(scene: SceneSpec) -> float:
    """Largest x-overlap between two object boxes, as a fraction of the smaller width."""
    boxes = [o.aabb() for o in scene.objects]
    worst = 0.0
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            (lo1, hi1), (lo2, hi2) = boxes[i], boxes[j]
            ov = min(hi1[0], hi2[0]) - max(lo1[0], lo2[0])
            smaller = min(hi1[0] - lo1[0], hi2[0] - lo2[0])
            worst = max(worst, max(ov, 0.0) / smaller)
    return worst
