"""Analytic primitive solids, scene composition and unit-cube normalization.

Scenes live in the global frame [0,1]^3 (x right, y up, z away from the
camera). Every primitive is described in its own local frame, rotated by
azimuth (about y) and elevation (about x), then translated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("sphere", "box", "cylinder", "capsule")

# number of size parameters per kind
_N_PARAMS = {"sphere": 1, "box": 3, "cylinder": 2, "capsule": 2}

SCENE_FORMAT_VERSION = 1


def rotation_matrix(azimuth: float, elevation: float) -> np.ndarray:
    """Rotation taking local coordinates to world coordinates: Ry(az) @ Rx(el)."""
    ca, sa = math.cos(azimuth), math.sin(azimuth)
    ce, se = math.cos(elevation), math.sin(elevation)
    ry = np.array([[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ce, -se], [0.0, se, ce]])
    return ry @ rx


@dataclass(frozen=True)
class Primitive:
    """One solid.

    ``params`` per kind: sphere ``(r,)``; box half extents ``(hx, hy, hz)``;
    cylinder and capsule ``(r, h)`` with the axis along local y and ``h`` the
    half length of the axis segment.
    """

    kind: str
    params: tuple
    azimuth: float = 0.0
    elevation: float = 0.0
    translation: tuple = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        params = tuple(float(v) for v in self.params)
        if len(params) != _N_PARAMS[self.kind]:
            raise ValueError(f"{self.kind} takes {_N_PARAMS[self.kind]} params, got {len(params)}")
        if not all(v > 0 for v in params):
            raise ValueError(f"{self.kind} params must be positive: {params}")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        object.__setattr__(self, "azimuth", float(self.azimuth))
        object.__setattr__(self, "elevation", float(self.elevation))

    @property
    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.azimuth, self.elevation)

    def to_local(self, points: np.ndarray) -> np.ndarray:
        # row vectors: (R^T (p - t))^T = (p - t) R
        return (np.asarray(points, dtype=float) - np.asarray(self.translation)) @ self.rotation

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + np.asarray(self.translation)

    def sdf(self, points: np.ndarray) -> np.ndarray:
        q = self.to_local(points)
        return _LOCAL_SDF[self.kind](q, self.params)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        """Exact axis-aligned bounds of the posed solid."""
        rot = self.rotation
        t = np.asarray(self.translation)
        if self.kind == "sphere":
            ext = np.full(3, self.params[0])
        elif self.kind == "box":
            ext = np.abs(rot) @ np.asarray(self.params)
        else:
            r, h = self.params
            axis = rot[:, 1]
            if self.kind == "cylinder":
                ext = np.abs(axis) * h + r * np.sqrt(np.clip(1.0 - axis**2, 0.0, None))
            else:
                ext = np.abs(axis) * h + r
        return t - ext, t + ext

    def surface_area(self) -> float:
        if self.kind == "sphere":
            return 4.0 * math.pi * self.params[0] ** 2
        if self.kind == "box":
            hx, hy, hz = self.params
            return 8.0 * (hx * hy + hy * hz + hx * hz)
        r, h = self.params
        side = 2.0 * math.pi * r * 2.0 * h
        if self.kind == "cylinder":
            return side + 2.0 * math.pi * r * r
        return side + 4.0 * math.pi * r * r

    def scaled(self, scale: float, center: np.ndarray, target: np.ndarray) -> "Primitive":
        """Uniformly scale about ``center`` and move ``center`` to ``target``."""
        t = (np.asarray(self.translation) - center) * scale + target
        return Primitive(self.kind, tuple(v * scale for v in self.params),
                         self.azimuth, self.elevation, tuple(t))

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        q = _LOCAL_SAMPLERS[self.kind](n, self.params, rng)
        return self.to_world(q)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": list(self.params),
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "translation": list(self.translation),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        return cls(d["kind"], tuple(d["params"]), d.get("azimuth", 0.0),
                   d.get("elevation", 0.0), tuple(d.get("translation", (0.5, 0.5, 0.5))))


def _sd_sphere(q, params):
    return np.linalg.norm(q, axis=-1) - params[0]


def _sd_box(q, params):
    d = np.abs(q) - np.asarray(params)
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
    inside = np.minimum(d.max(axis=-1), 0.0)
    return outside + inside


def _sd_cylinder(q, params):
    r, h = params
    radial = np.hypot(q[..., 0], q[..., 2])
    dx = radial - r
    dy = np.abs(q[..., 1]) - h
    outside = np.hypot(np.maximum(dx, 0.0), np.maximum(dy, 0.0))
    return outside + np.minimum(np.maximum(dx, dy), 0.0)


def _sd_capsule(q, params):
    r, h = params
    y = q[..., 1] - np.clip(q[..., 1], -h, h)
    return np.sqrt(q[..., 0] ** 2 + y**2 + q[..., 2] ** 2) - r


_LOCAL_SDF = {"sphere": _sd_sphere, "box": _sd_box, "cylinder": _sd_cylinder, "capsule": _sd_capsule}


def _unit_sphere(n, rng):
    v = rng.standard_normal((n, 3))
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return v / norm


def _sample_sphere(n, params, rng):
    return _unit_sphere(n, rng) * params[0]


def _sample_box(n, params, rng):
    h = np.asarray(params)
    # faces normal to x, y, z (two each) weighted by area
    areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
    axis = rng.choice(3, size=n, p=areas / areas.sum())
    pts = (rng.random((n, 3)) * 2.0 - 1.0) * h
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    rows = np.arange(n)
    pts[rows, axis] = sign * h[axis]
    return pts


def _sample_cylinder(n, params, rng):
    r, h = params
    side, cap = 4.0 * math.pi * r * h, math.pi * r * r
    u = rng.random(n) * (side + 2.0 * cap)
    theta = rng.random(n) * 2.0 * math.pi
    rad = np.where(u < side, r, r * np.sqrt(rng.random(n)))
    y = np.where(u < side, rng.uniform(-h, h, n), np.where(u < side + cap, h, -h))
    return np.column_stack([rad * np.cos(theta), y, rad * np.sin(theta)])


def _sample_capsule(n, params, rng):
    r, h = params
    side, caps = 4.0 * math.pi * r * h, 4.0 * math.pi * r * r
    on_side = rng.random(n) * (side + caps) < side
    theta = rng.random(n) * 2.0 * math.pi
    ball = _unit_sphere(n, rng) * r
    ball[:, 1] += np.where(ball[:, 1] >= 0.0, h, -h)
    tube = np.column_stack([r * np.cos(theta), rng.uniform(-h, h, n), r * np.sin(theta)])
    return np.where(on_side[:, None], tube, ball)


_LOCAL_SAMPLERS = {"sphere": _sample_sphere, "box": _sample_box,
                   "cylinder": _sample_cylinder, "capsule": _sample_capsule}


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return scene_sdf(self, points)

    def occupancy(self, points: np.ndarray) -> np.ndarray:
        return scene_occupancy(self, points)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.objects:
            raise ValueError("empty scene has no bounds")
        lo, hi = zip(*(o.aabb() for o in self.objects))
        return np.min(lo, axis=0), np.max(hi, axis=0)

    def to_dict(self) -> dict:
        return {"version": SCENE_FORMAT_VERSION, "seed": int(self.seed),
                "objects": [o.to_dict() for o in self.objects]}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        if d.get("version", SCENE_FORMAT_VERSION) != SCENE_FORMAT_VERSION:
            raise ValueError(f"unsupported scene version {d.get('version')}")
        return cls(tuple(Primitive.from_dict(o) for o in d["objects"]), int(d.get("seed", 0)))


def scene_sdf(scene: SceneSpec, points) -> np.ndarray:
    """Union signed distance (min over objects); negative inside.

    Accepts a single point ``(3,)`` or an array ``(..., 3)``. An empty scene
    is +inf everywhere.
    """
    p = np.asarray(points, dtype=float)
    out = np.full(p.shape[:-1], np.inf)
    for obj in scene.objects:
        out = np.minimum(out, obj.sdf(p))
    return out if out.ndim else float(out)


def scene_occupancy(scene: SceneSpec, points) -> np.ndarray:
    """Closed-solid occupancy: inside iff sdf <= 0."""
    return np.asarray(scene_sdf(scene, points)) <= 0.0


def normalize_scene(objects, seed: int = 0, margin: float = 0.0) -> SceneSpec:
    """Scale and shift ``objects`` so their union box is centered in [0,1]^3.

    The longest side of the union box becomes ``1 - margin``; aspect ratios are
    preserved. Accepts a list of primitives or an existing ``SceneSpec``.
    """
    if isinstance(objects, SceneSpec):
        seed = objects.seed
        objects = objects.objects
    objects = tuple(objects)
    if not objects:
        raise ValueError("cannot normalize an empty object list")
    if not 0.0 <= margin < 1.0:
        raise ValueError("margin must lie in [0, 1)")
    lo, hi = SceneSpec(objects).aabb()
    scale = (1.0 - margin) / float(np.max(hi - lo))
    center = 0.5 * (lo + hi)
    target = np.full(3, 0.5)
    return SceneSpec(tuple(o.scaled(scale, center, target) for o in objects), seed)


def sample_surface_points(source, n: int, seed: int = 0) -> np.ndarray:
    """Draw ``n`` points on the surface of a scene or a mesh.

    Scenes are sampled on each primitive's exact surface in proportion to its
    area; samples buried inside another object are rejected. Meshes are
    sampled area-weighted over faces.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    if isinstance(source, Mesh):
        return source.sample(n, rng)
    if not source.objects:
        raise ValueError("cannot sample the surface of an empty scene")
    areas = np.array([o.surface_area() for o in source.objects])
    probs = areas / areas.sum()
    kept = []
    total = 0
    for _ in range(1000):
        want = max(2 * (n - total), 64)
        counts = rng.multinomial(want, probs)
        batch = np.concatenate([o.sample_surface(c, rng) for o, c in zip(source.objects, counts)])
        if len(source.objects) > 1:
            # tolerance guards against points on a shared face being rejected
            batch = batch[scene_sdf(source, batch) > -1e-9]
        kept.append(batch)
        total += len(batch)
        if total >= n:
            break
    else:
        raise RuntimeError("surface rejection sampling did not converge")
    pts = np.concatenate(kept)
    # batches are grouped by object; shuffle before truncating
    return pts[rng.permutation(len(pts))[:n]]


@dataclass
class Mesh:
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def signed_volume(self) -> float:
        v = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.is_empty:
            raise ValueError("cannot sample an empty mesh")
        areas = self.face_areas()
        idx = rng.choice(len(self.faces), size=n, p=areas / areas.sum())
        u, v = rng.random(n), rng.random(n)
        flip = u + v > 1.0
        u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
        tri = self.vertices[self.faces[idx]]
        return tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])


def write_obj(mesh: Mesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_obj(path) -> Mesh:
    """Read ``v`` and ``f`` records; polygons are fan-triangulated."""
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) for tok in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            faces += [[idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1)]
    return Mesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_scene(scene: SceneSpec, path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=2, sort_keys=True) + "\n")


def load_scene(path) -> SceneSpec:
    return SceneSpec.from_dict(json.loads(Path(path).read_text()))
