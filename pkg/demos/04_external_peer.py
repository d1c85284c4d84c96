# Plugging in an out-of-process backend
#
# Any program that speaks the HPNB/HPNR framing on stdin/stdout can act as a
# level's implicit function. The package ships a reference peer that answers
# with exact occupancy; here its field is compared byte for byte with the
# in-process oracle.

import sys
import tempfile
from pathlib import Path

from hpn.backends import ExternalBackend, OracleBackend
from hpn.compose import compose_scenes
from hpn.fusion import reconstruct_level
from hpn.geometry import save_scene
from hpn.render import render_depth

scene = compose_scenes(1, 2, seed=8)[0]
depth = render_depth(scene, 128, 128)

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "scene.json"
    save_scene(scene, path)
    cmd = [sys.executable, "-m", "hpn.peer", "oracle", "--scene", str(path), "--width", "128", "--patch", "32"]
    with ExternalBackend(cmd, N=32) as peer:
        remote = reconstruct_level(depth, 32, peer, grid_res=32)

local = reconstruct_level(depth, 32, OracleBackend(scene), grid_res=32)
print("identical fields:", remote.values.tobytes() == local.values.tobytes())

# A peer that answers with the wrong number of values is caught, and the
# error names the offending patch.

with ExternalBackend([sys.executable, "-m", "hpn.peer", "short"], N=32) as bad:
    try:
        reconstruct_level(depth, 32, bad, grid_res=32)
    except Exception as exc:
        print("rejected:", exc)
