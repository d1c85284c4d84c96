"""HPNB request/response framing for out-of-process implicit functions.

All integers are little-endian u32, all reals little-endian f32.

request:  b"HPNB", version=1, N, N*N depth, N*N validity (u8), K, 3K local coords
response: b"HPNR", K, K values
"""

from __future__ import annotations

import struct

import numpy as np

REQUEST_MAGIC = b"HPNB"
RESPONSE_MAGIC = b"HPNR"
VERSION = 1


class ProtocolError(RuntimeError):
    pass


def encode_request(pixels: np.ndarray, valid: np.ndarray, local: np.ndarray) -> bytes:
    n = pixels.shape[0]
    if pixels.shape != (n, n) or valid.shape != (n, n):
        raise ValueError("patch must be square")
    local = np.asarray(local, dtype=float).reshape(-1, 3)
    return b"".join([
        REQUEST_MAGIC,
        struct.pack("<II", VERSION, n),
        np.ascontiguousarray(pixels, dtype="<f4").tobytes(),
        np.ascontiguousarray(valid, dtype=np.uint8).tobytes(),
        struct.pack("<I", len(local)),
        np.ascontiguousarray(local, dtype="<f4").tobytes(),
    ])


def encode_response(values) -> bytes:
    v = np.asarray(values, dtype="<f4").ravel()
    return RESPONSE_MAGIC + struct.pack("<I", len(v)) + v.tobytes()


def read_request(read) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    """Parse one request using ``read(n) -> bytes``; None on clean EOF."""
    head = read(4)
    if not head:
        return None
    if head != REQUEST_MAGIC:
        raise ProtocolError(f"bad request magic {head!r}")
    version, n = struct.unpack("<II", _exact(read, 8))
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    pixels = np.frombuffer(_exact(read, 4 * n * n), "<f4").reshape(n, n)
    valid = np.frombuffer(_exact(read, n * n), np.uint8).reshape(n, n) != 0
    (k,) = struct.unpack("<I", _exact(read, 4))
    local = np.frombuffer(_exact(read, 12 * k), "<f4").reshape(k, 3)
    return pixels, valid, local


def read_response(read) -> np.ndarray:
    head = _exact(read, 4)
    if head != RESPONSE_MAGIC:
        raise ProtocolError(f"bad response magic {head!r}")
    (k,) = struct.unpack("<I", _exact(read, 4))
    return np.frombuffer(_exact(read, 4 * k), "<f4").copy()


def _exact(read, n: int) -> bytes:
    buf = read(n)
    if len(buf) != n:
        raise ProtocolError(f"short read: wanted {n} bytes, got {len(buf)}")
    return buf
