"""Reference HPNB peers, run as ``python -m hpn.peer <mode> ...``.

``oracle``   answers with the exact occupancy logits of a scene file. The
             protocol carries no patch position, so the peer renders the scene
             itself and expects requests in row-major patch order for one
             level; each request is checked against its own crop and, if it
             does not match, located by searching all patch positions.
``constant`` answers every point with a fixed value.
``short``    answers one value too few (for exercising error paths).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import protocol
from .backends import DEFAULT_LOGIT, oracle_eval
from .geometry import load_scene
from .patches import LevelConfig, enumerate_patches, part_for_patch
from .render import render_depth


class _OracleLocator:
    def __init__(self, scene, width, n, stride):
        self.scene = scene
        self.patches = enumerate_patches(render_depth(scene, width, width), LevelConfig(n), stride)
        self.count = 0

    def part_for(self, pixels, valid):
        expected = self.patches[self.count % len(self.patches)]
        self.count += 1
        if np.array_equal(expected.pixels, pixels) and np.array_equal(expected.valid, valid):
            return part_for_patch(expected)
        for p in self.patches:
            if np.array_equal(p.pixels, pixels) and np.array_equal(p.valid, valid):
                return part_for_patch(p)
        raise protocol.ProtocolError("request patch does not occur in the scene rendering")


def serve(handler, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    while True:
        req = protocol.read_request(stdin.read)
        if req is None:
            return
        stdout.write(protocol.encode_response(handler(*req)))
        stdout.flush()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m hpn.peer")
    sub = ap.add_subparsers(dest="mode", required=True)
    o = sub.add_parser("oracle")
    o.add_argument("--scene", required=True)
    o.add_argument("--width", type=int, default=256)
    o.add_argument("--patch", type=int, required=True)
    o.add_argument("--stride", type=int, default=None)
    o.add_argument("--logit", type=float, default=DEFAULT_LOGIT)
    c = sub.add_parser("constant")
    c.add_argument("--value", type=float, default=0.0)
    sub.add_parser("short")
    args = ap.parse_args(argv)

    if args.mode == "oracle":
        stride = args.stride or LevelConfig(args.patch).infer_stride(args.width)
        locator = _OracleLocator(load_scene(args.scene), args.width, args.patch, stride)

        def handler(pixels, valid, local):
            part = locator.part_for(pixels, valid)
            return oracle_eval(locator.scene, part, local.astype(float), args.logit)
    elif args.mode == "constant":
        def handler(pixels, valid, local):
            return np.full(len(local), args.value)
    else:
        def handler(pixels, valid, local):
            return np.zeros(max(len(local) - 1, 0))
    try:
        serve(handler)
    except protocol.ProtocolError as exc:
        print(f"peer: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
