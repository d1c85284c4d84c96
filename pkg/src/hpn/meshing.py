"""Marching cubes over a fused field.

Samples sit at voxel centers ``(k + 0.5) / R``. The field is padded on every
side with one layer of empty value placed exactly on the unit-cube faces, so
surfaces are always closed and every vertex stays inside [0, 1]^3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._mctables import TRI_TABLE
from .fusion import EMPTY_VALUE, LOGIT, PROBABILITY, SDF, FusedField, to_probability
from .geometry import Mesh

_CORNERS = np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                     (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)])
_EDGES = np.array([(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6),
                   (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)])
# lower endpoint offset and axis of each cube edge
_EDGE_ORIGIN = np.minimum(_CORNERS[_EDGES[:, 0]], _CORNERS[_EDGES[:, 1]])
_EDGE_AXIS = np.argmax(np.abs(_CORNERS[_EDGES[:, 1]] - _CORNERS[_EDGES[:, 0]]), axis=1)

MIN_FACE_AREA = 1e-12


@dataclass(frozen=True)
class IsoSpec:
    """Iso level and which side is solid (``"above"`` for probabilities)."""

    level: float = 0.5
    inside: str = "above"

    def __post_init__(self):
        if self.inside not in ("above", "below"):
            raise ValueError("inside must be 'above' or 'below'")

    @classmethod
    def for_field(cls, field: FusedField, tau: float = 0.5, tau_sdf: float = -0.02) -> "IsoSpec":
        if field.kind == SDF:
            return cls(tau_sdf, "below")
        if not 0.0 < tau < 1.0:
            raise ValueError("probability iso value must lie in (0, 1)")
        return cls(tau, "above")


def _padded_axis(r: int) -> np.ndarray:
    return np.concatenate([[0.0], (np.arange(r) + 0.5) / r, [1.0]])


def marching_cubes(field: FusedField | np.ndarray, iso: IsoSpec | None = None) -> Mesh:
    """Extract the iso surface with outward-facing triangles.

    A bare array is treated as a signed distance field when ``iso`` says
    ``inside="below"`` and as probabilities otherwise.
    """
    if isinstance(field, np.ndarray):
        iso = iso or IsoSpec()
        field = FusedField(field, SDF if iso.inside == "below" else PROBABILITY)
    if field.kind == LOGIT:
        field = to_probability(field)
    iso = iso or IsoSpec.for_field(field)
    r = field.resolution
    if r < 2:
        raise ValueError("field resolution must be >= 2")
    vals = np.full((r + 2,) * 3, EMPTY_VALUE[field.kind])
    vals[1:-1, 1:-1, 1:-1] = np.where(field.touched, field.values, EMPTY_VALUE[field.kind])
    inside = vals >= iso.level if iso.inside == "above" else vals <= iso.level
    axis = _padded_axis(r)
    p = r + 2

    c = p - 1
    cube = np.zeros((c, c, c), dtype=np.int64)
    for bit, (ox, oy, oz) in enumerate(_CORNERS):
        cube |= inside[ox:ox + c, oy:oy + c, oz:oz + c].astype(np.int64) << bit
    # the table marks corners below the iso level; flip so our "inside" is that side
    cube = 255 - cube
    cells = np.flatnonzero((cube != 0) & (cube != 255))
    if cells.size == 0:
        return Mesh()
    tri = TRI_TABLE[cube.ravel()[cells]].astype(np.int64)  # (n, 16)
    slot_cell, slot = np.nonzero(tri >= 0)
    edge = tri[slot_cell, slot]
    ci = np.stack(np.unravel_index(cells[slot_cell], (c, c, c)), axis=1)
    origin = ci + _EDGE_ORIGIN[edge]
    ax = _EDGE_AXIS[edge]
    key = ax * p**3 + np.ravel_multi_index(tuple(origin.T), (p, p, p))
    uniq, inverse = np.unique(key, return_inverse=True)

    u_ax = uniq // p**3
    a = np.stack(np.unravel_index(uniq % p**3, (p, p, p)), axis=1)
    b = a.copy()
    b[np.arange(len(b)), u_ax] += 1
    va = vals[tuple(a.T)]
    vb = vals[tuple(b.T)]
    t = (iso.level - va) / (vb - va)
    verts = axis[a].astype(float)
    rows = np.arange(len(verts))
    lo, hi = axis[a[rows, u_ax]], axis[b[rows, u_ax]]
    verts[rows, u_ax] = lo + t * (hi - lo)

    faces = inverse.reshape(-1, 3)
    mesh = Mesh(verts, faces)
    return _drop_degenerate(mesh)


def _drop_degenerate(mesh: Mesh) -> Mesh:
    keep = mesh.face_areas() >= MIN_FACE_AREA
    faces = mesh.faces[keep]
    used, remap = np.unique(faces, return_inverse=True)
    return Mesh(mesh.vertices[used], remap.reshape(-1, 3))


def edge_face_counts(mesh: Mesh) -> np.ndarray:
    """How many faces share each undirected edge."""
    e = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]], mesh.faces[:, [2, 0]]])
    e.sort(axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


def is_watertight(mesh: Mesh) -> bool:
    return not mesh.is_empty and bool(np.all(edge_face_counts(mesh) == 2))
