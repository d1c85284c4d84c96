"""Implicit-function backends: (patch, local points) -> per-point values.

Four interchangeable evaluators are provided: an exact oracle over an
analytic scene, a sign-flipping noisy oracle, L1 nearest-neighbor retrieval
from a bank of (depth patch, part occupancy) pairs, and an external process
speaking the HPNB protocol.
"""

from __future__ import annotations

import os
import select
import struct
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import protocol
from .geometry import SceneSpec, scene_occupancy, scene_sdf
from .patches import LevelConfig, PartRegion, Patch, enumerate_patches, from_local, part_for_patch
from .render import render_depth

OCCUPANCY_LOGIT = "occupancy_logit"
SIGNED_DISTANCE = "signed_distance"

DEFAULT_LOGIT = 10.0
RETRIEVAL_P_CLAMP = (0.01, 0.99)

HPNK_MAGIC = b"HPNK"


class BackendError(RuntimeError):
    """A backend failed on one patch; ``patch_id`` identifies it."""

    def __init__(self, message: str, patch_id: int | None = None, level: int | None = None):
        where = []
        if level is not None:
            where.append(f"level N={level}")
        if patch_id is not None:
            where.append(f"patch {patch_id}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.patch_id = patch_id
        self.level = level


class ImplicitBackend:
    """Base class. Subclasses implement ``_eval``.

    ``serial`` backends must see their patches one at a time in patch order.
    """

    kind = OCCUPANCY_LOGIT
    serial = False

    def __init__(self, N: int | None = None):
        self.N = N

    def eval(self, patch: Patch, points) -> np.ndarray:
        if self.N is not None and patch.N != self.N:
            raise BackendError(f"backend is for N={self.N}, got patch of N={patch.N}", patch.index)
        q = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(q) == 0 and not self.serial:
            return np.zeros(0)
        return self._eval(patch, q)

    def _eval(self, patch: Patch, local: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        pass


def oracle_eval(scene: SceneSpec, part: PartRegion, points, logit: float = DEFAULT_LOGIT,
                kind: str = OCCUPANCY_LOGIT) -> np.ndarray:
    p = from_local(part, np.asarray(points, dtype=float).reshape(-1, 3))
    if kind == SIGNED_DISTANCE:
        return np.asarray(scene_sdf(scene, p), dtype=float)
    return np.where(scene_occupancy(scene, p), logit, -logit)


def noisy_oracle_eval(scene: SceneSpec, part: PartRegion, points, flip_p: float, seed: int,
                      logit: float = DEFAULT_LOGIT) -> np.ndarray:
    if not 0.0 <= flip_p < 1.0:
        raise ValueError("flip_p must lie in [0, 1)")
    out = oracle_eval(scene, part, points, logit)
    rng = np.random.default_rng(seed)
    flip = rng.random(len(out)) < flip_p
    return np.where(flip, -out, out)


class OracleBackend(ImplicitBackend):
    """Perfect prior: reads occupancy (or SDF) straight from the scene."""

    def __init__(self, scene: SceneSpec, N: int | None = None, logit: float = DEFAULT_LOGIT,
                 kind: str = OCCUPANCY_LOGIT):
        super().__init__(N)
        self.scene = scene
        self.logit = logit
        self.kind = kind

    def _eval(self, patch, local):
        return oracle_eval(self.scene, part_for_patch(patch), local, self.logit, self.kind)


class NoisyOracleBackend(ImplicitBackend):
    def __init__(self, scene: SceneSpec, flip_p: float, seed: int = 0, N: int | None = None,
                 logit: float = DEFAULT_LOGIT):
        if not 0.0 <= flip_p < 1.0:
            raise ValueError("flip_p must lie in [0, 1)")
        super().__init__(N)
        self.scene = scene
        self.flip_p = flip_p
        self.seed = seed
        self.logit = logit

    def _eval(self, patch, local):
        # per-patch stream so results do not depend on evaluation order
        seed = [self.seed, patch.N, patch.top, patch.left]
        return noisy_oracle_eval(self.scene, part_for_patch(patch), local, self.flip_p, seed, self.logit)


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------

@dataclass
class PatchBank:
    N: int
    dims: tuple  # part grid (Rx, Ry, Rz)
    pixels: np.ndarray  # (E, N, N) float32
    valid: np.ndarray  # (E, N, N) bool
    grids: np.ndarray  # (E, Rx, Ry, Rz) bool
    scene_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.pixels = np.asarray(self.pixels, dtype=np.float32).reshape(-1, self.N, self.N)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(-1, self.N, self.N)
        self.grids = np.asarray(self.grids, dtype=bool).reshape((-1,) + self.dims)
        if not (len(self.pixels) == len(self.valid) == len(self.grids)):
            raise ValueError("bank arrays disagree on entry count")
        if not self.scene_ids:
            self.scene_ids = [-1] * len(self.pixels)

    def __len__(self):
        return len(self.pixels)

    def subsample(self, fraction: float, seed: int = 0) -> "PatchBank":
        """Seeded subset of ``round(fraction * len)`` entries, original order kept."""
        if not 0.0 < fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")
        k = int(round(fraction * len(self)))
        if k == 0:
            raise ValueError(f"fraction {fraction} leaves an empty bank")
        if k == len(self):
            return self
        keep = np.sort(np.random.default_rng(seed).choice(len(self), size=k, replace=False))
        return PatchBank(self.N, self.dims, self.pixels[keep], self.valid[keep], self.grids[keep],
                         [self.scene_ids[i] for i in keep])

    @classmethod
    def concat(cls, banks: list["PatchBank"]) -> "PatchBank":
        first = banks[0]
        if any(b.N != first.N or b.dims != first.dims for b in banks):
            raise ValueError("banks disagree on patch size or grid dims")
        return cls(first.N, first.dims, np.concatenate([b.pixels for b in banks]),
                   np.concatenate([b.valid for b in banks]), np.concatenate([b.grids for b in banks]),
                   sum((b.scene_ids for b in banks), []))


def default_part_dims(N: int, width: int, grid_res: int) -> tuple[int, int, int]:
    rp = int(np.ceil(grid_res * N / width))
    return rp, rp, grid_res


def cell_centers(dims) -> np.ndarray:
    """Local coordinates of part-grid cell centers, shape ``(Rx*Ry*Rz, 3)``, x slowest."""
    axes = [(np.arange(d) + 0.5) / d - 0.5 for d in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def voxelize_part(scene: SceneSpec, part: PartRegion, dims) -> np.ndarray:
    return scene_occupancy(scene, from_local(part, cell_centers(dims))).reshape(dims)


def build_bank(scenes, cfg: LevelConfig | int, bank_stride: int | None = None, part_res=None,
               width: int = 256, grid_res: int = 64, depths=None) -> PatchBank:
    """Render every scene and store (patch, voxelized part) pairs.

    ``part_res`` is an int (x/y cells; z uses ``grid_res``) or a 3-tuple.
    Pre-rendered depth maps may be passed in ``depths`` to skip rendering.
    """
    if isinstance(cfg, int):
        cfg = LevelConfig(cfg)
    scenes = list(scenes)
    if not scenes:
        raise ValueError("need at least one scene")
    stride = bank_stride if bank_stride is not None else cfg.train_stride(width)
    if part_res is None:
        dims = default_part_dims(cfg.N, width, grid_res)
    elif isinstance(part_res, int):
        dims = (part_res, part_res, grid_res)
    else:
        dims = tuple(part_res)
    centers = cell_centers(dims)
    pix, val, grids, ids = [], [], [], []
    for s, scene in enumerate(scenes):
        depth = depths[s] if depths is not None else render_depth(scene, width, width)
        for patch in enumerate_patches(depth, cfg, stride):
            pix.append(patch.pixels)
            val.append(patch.valid)
            part = part_for_patch(patch)
            grids.append(scene_occupancy(scene, from_local(part, centers)).reshape(dims))
            ids.append(s)
    return PatchBank(cfg.N, dims, np.stack(pix), np.stack(val), np.stack(grids), ids)


def write_bank(bank: PatchBank, path) -> None:
    with open(path, "wb") as f:
        f.write(HPNK_MAGIC + struct.pack("<I", bank.N) + struct.pack("<III", *bank.dims))
        f.write(struct.pack("<I", len(bank)))
        for e in range(len(bank)):
            f.write(bank.pixels[e].astype("<f4").tobytes())
            f.write(bank.valid[e].astype(np.uint8).tobytes())
            f.write(np.packbits(bank.grids[e].ravel(order="F"), bitorder="little").tobytes())


def read_bank(path) -> PatchBank:
    data = Path(path).read_bytes()
    if data[:4] != HPNK_MAGIC:
        raise ValueError(f"{path}: not an HPNK patch bank")
    (n,) = struct.unpack_from("<I", data, 4)
    dims = struct.unpack_from("<III", data, 8)
    (count,) = struct.unpack_from("<I", data, 20)
    nvox = int(np.prod(dims))
    nbits = (nvox + 7) // 8
    entry = 5 * n * n + nbits
    if len(data) != 24 + count * entry:
        raise ValueError(f"{path}: HPNK size does not match header")
    pix = np.empty((count, n, n), np.float32)
    val = np.empty((count, n, n), bool)
    grids = np.empty((count,) + tuple(dims), bool)
    off = 24
    for e in range(count):
        pix[e] = np.frombuffer(data, "<f4", n * n, off).reshape(n, n)
        off += 4 * n * n
        val[e] = np.frombuffer(data, np.uint8, n * n, off).reshape(n, n) != 0
        off += n * n
        bits = np.unpackbits(np.frombuffer(data, np.uint8, nbits, off), count=nvox, bitorder="little")
        grids[e] = bits.reshape(dims, order="F").astype(bool)
        off += nbits
    return PatchBank(n, dims, pix, val, grids)


class BankIndex:
    """Exact L1 nearest neighbor over bank patches.

    Duplicate patches are collapsed onto their first occurrence, which is the
    lowest-index tie-break anyway. Candidates are visited in order of a
    block-sum lower bound and the scan stops once the bound exceeds the best
    distance found, so the answer equals a full linear scan.
    """

    def __init__(self, bank: PatchBank, blocks: int = 8, chunk: int = 512):
        if len(bank) == 0:
            raise ValueError("patch bank is empty")
        self.bank = bank
        flat = bank.pixels.reshape(len(bank), -1)
        _, first = np.unique(flat, axis=0, return_index=True)
        self.ids = np.sort(first)
        self.flat = np.ascontiguousarray(flat[self.ids], dtype=np.float64)
        self.blocks = max(1, min(blocks, bank.N))
        self.sums = self._block_sums(bank.pixels[self.ids])
        self.chunk = chunk

    def _block_sums(self, pix: np.ndarray) -> np.ndarray:
        n, b = self.bank.N, self.blocks
        edges = np.linspace(0, n, b + 1).round().astype(int)
        pix = np.asarray(pix, dtype=np.float64)
        rows = np.add.reduceat(pix, edges[:-1], axis=-2)
        return np.add.reduceat(rows, edges[:-1], axis=-1).reshape(len(pix), -1)

    def nearest(self, pixels: np.ndarray) -> tuple[int, float]:
        q = np.asarray(pixels, dtype=np.float64).reshape(-1)
        qs = self._block_sums(np.asarray(pixels, dtype=np.float32)[None])[0]
        bound = np.abs(self.sums - qs).sum(axis=1)
        # float slack so rounding in the bound can never prune a true tie
        slack = 1e-9 * max(1.0, float(np.abs(q).sum()))
        seed = int(np.argmin(bound))
        cand = np.flatnonzero(bound <= np.abs(self.flat[seed] - q).sum() + slack)
        order = cand[np.argsort(bound[cand], kind="stable")]
        best_d, best_i = np.inf, -1
        for start in range(0, len(order), self.chunk):
            cand = order[start:start + self.chunk]
            if bound[cand[0]] > best_d + slack:
                break
            d = np.abs(self.flat[cand] - q).sum(axis=1)
            for j in np.flatnonzero(d <= best_d):
                i = int(self.ids[cand[j]])
                if d[j] < best_d or (d[j] == best_d and i < best_i):
                    best_d, best_i = float(d[j]), i
        return best_i, best_d


def brute_force_nearest(bank: PatchBank, pixels: np.ndarray) -> tuple[int, float]:
    """Reference linear scan; lowest index wins ties."""
    d = np.abs(bank.pixels.reshape(len(bank), -1).astype(np.float64)
               - np.asarray(pixels, dtype=np.float64).reshape(-1)).sum(axis=1)
    i = int(np.argmin(d))
    return i, float(d[i])


def trilinear(grid: np.ndarray, local: np.ndarray) -> np.ndarray:
    """Sample a cell-centered grid over [-0.5, 0.5]^3 at ``local`` points."""
    g = np.asarray(grid, dtype=float)
    dims = np.array(g.shape)
    idx = np.clip((np.asarray(local) + 0.5) * dims - 0.5, 0.0, dims - 1)
    i0 = np.floor(idx).astype(np.int64)
    i1 = np.minimum(i0 + 1, dims - 1)
    f = idx - i0
    out = np.zeros(len(idx))
    for cx in (0, 1):
        wx = f[:, 0] if cx else 1.0 - f[:, 0]
        ix = i1[:, 0] if cx else i0[:, 0]
        for cy in (0, 1):
            wy = f[:, 1] if cy else 1.0 - f[:, 1]
            iy = i1[:, 1] if cy else i0[:, 1]
            for cz in (0, 1):
                wz = f[:, 2] if cz else 1.0 - f[:, 2]
                iz = i1[:, 2] if cz else i0[:, 2]
                out += wx * wy * wz * g[ix, iy, iz]
    return out


def probability_to_logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, *RETRIEVAL_P_CLAMP)
    return np.log(p / (1.0 - p))


def retrieval_eval(bank: PatchBank | BankIndex, patch: Patch, points) -> np.ndarray:
    index = bank if isinstance(bank, BankIndex) else BankIndex(bank)
    i, _ = index.nearest(patch.pixels)
    local = np.asarray(points, dtype=float).reshape(-1, 3)
    return probability_to_logit(trilinear(index.bank.grids[i], local))


class RetrievalBackend(ImplicitBackend):
    def __init__(self, bank: PatchBank):
        if len(bank) == 0:
            raise ValueError("patch bank is empty")
        super().__init__(bank.N)
        self.index = BankIndex(bank)

    @property
    def bank(self) -> PatchBank:
        return self.index.bank

    def lookup(self, patch: Patch) -> tuple[int, float]:
        return self.index.nearest(patch.pixels)

    def _eval(self, patch, local):
        i, _ = self.index.nearest(patch.pixels)
        return probability_to_logit(trilinear(self.bank.grids[i], local))


# ---------------------------------------------------------------------------
# external process
# ---------------------------------------------------------------------------

class ExternalBackend(ImplicitBackend):
    """Child process answering HPNB requests on stdin/stdout.

    One request is in flight at a time; replies must carry exactly as many
    values as points were sent.
    """

    serial = True

    def __init__(self, command: list[str], N: int | None = None, timeout: float = 60.0,
                 kind: str = OCCUPANCY_LOGIT):
        super().__init__(N)
        self.command = list(command)
        self.timeout = timeout
        self.kind = kind
        self._lock = threading.Lock()
        self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)

    def _read(self, n: int, deadline: float) -> bytes:
        fd = self._proc.stdout.fileno()
        chunks, got = [], 0
        while got < n:
            left = deadline - time.monotonic()
            if left <= 0:
                raise protocol.ProtocolError("timeout waiting for peer")
            ready, _, _ = select.select([fd], [], [], left)
            if not ready:
                continue
            b = os.read(fd, n - got)
            if not b:
                break
            chunks.append(b)
            got += len(b)
        return b"".join(chunks)

    def _eval(self, patch, local):
        request = protocol.encode_request(patch.pixels, patch.valid, local)
        with self._lock:
            try:
                self._proc.stdin.write(request)
                self._proc.stdin.flush()
                deadline = time.monotonic() + self.timeout
                values = protocol.read_response(lambda n: self._read(n, deadline))
            except (OSError, protocol.ProtocolError) as exc:
                raise BackendError(f"external backend failed: {exc}", patch.index, patch.N) from exc
        if len(values) != len(local):
            raise BackendError(f"peer returned {len(values)} values for {len(local)} points",
                               patch.index, patch.N)
        return values.astype(float)

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
                self._proc.wait()
        self._proc.stdout.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_eval(backend: ExternalBackend, patch: Patch, points) -> np.ndarray:
    return backend.eval(patch, points)
