"""Acceptance suite: one verdict line per criterion, at the agreed tolerances.

The retrieval experiments (criteria 2 to 4) build banks from a few hundred
rendered scenes and take a few minutes in total.
"""

import sys
import time

import numpy as np
import pytest

from conftest import record_acceptance
from hpn.backends import (BackendError, ExternalBackend, NoisyOracleBackend, OracleBackend,
                          RetrievalBackend, build_bank)
from hpn.compose import compose_scenes
from hpn.fusion import (PROBABILITY, SDF, AccumulatorGrid, FusedField, fuse_hierarchy,
                        reconstruct_level, threshold_field)
from hpn.geometry import Primitive, SceneSpec, save_scene
from hpn.meshing import IsoSpec, is_watertight, marching_cubes
from hpn.metrics import chamfer, evaluate_split, fscore, iou
from hpn.patches import enumerate_patches
from hpn.pipeline import Level, reconstruct, voxel_centers, voxelize_scene
from hpn.render import render_depth

R = 64
EPS = 2 / R
D_THRESH = 0.02
N_SAMPLES = 10_000


def mean_scores(test_set, levels_for):
    """Mean full / visible / invisible F over ``(scene, depth)`` pairs."""
    rows = []
    for scene, depth in test_set:
        rec = reconstruct(depth, levels_for(), R)
        rep = evaluate_split(rec.mesh, scene, depth, EPS, N_SAMPLES, D_THRESH, seed=0)
        rows.append((rep.fscore, rep.splits["visible"].fscore, rep.splits["invisible"].fscore))
    return np.mean(rows, axis=0)


# ---------------------------------------------------------------------------

def test_criterion_1_oracle_round_trip():
    # 10k samples per side leave gaps up to ~0.028 on the largest surfaces, above
    # d_thresh; the score is taken at 50k, with the 10k figure reported alongside
    scenes = compose_scenes(20, 3, seed=1)
    assert {len(s.objects) for s in scenes} >= {1, 2}
    exact, fs, fs_default, cds, offset = True, [], [], [], 0.0
    elapsed = 0.0
    for s in scenes:
        depth = render_depth(s)
        t = time.perf_counter()
        rec = reconstruct(depth, [Level(n, OracleBackend(s)) for n in (256, 64, 32)], R)
        elapsed += time.perf_counter() - t
        exact &= bool(np.array_equal(rec.occupancy, voxelize_scene(s, R)))
        offset = max(offset, float(np.abs(s.sdf(rec.mesh.vertices)).max()))
        rep = evaluate_split(rec.mesh, s, depth, EPS, 50_000, D_THRESH)
        fs.append(rep.fscore)
        cds.append(rep.chamfer)
        fs_default.append(evaluate_split(rec.mesh, s, depth, EPS, N_SAMPLES, D_THRESH).fscore)
    ok = exact and min(fs) >= 99.0 and max(cds) <= 1.0 and elapsed <= 60.0
    record_acceptance(1, "oracle round trip", ok,
                      f"labels exact={exact}, min F={min(fs):.2f} (>=99; 10k samples: min {min(fs_default):.2f}, "
                      f"mean {np.mean(fs_default):.2f}), max CDx100={max(cds):.3f} (<=1.0), "
                      f"max vertex |sdf|={offset:.4f}, reconstruction {elapsed:.1f}s (<=60s) over 20 scenes")
    assert ok


# ---------------------------------------------------------------------------
# criteria 2 and 3 share a bank built from single-object scenes only

@pytest.fixture(scope="module")
def composition_results():
    train = compose_scenes(100, 1, seed=7)
    depths = [render_depth(s) for s in train]
    backends = {n: RetrievalBackend(build_bank(train, n, depths=depths)) for n in (256, 64, 32)}
    test = [(s, render_depth(s)) for s in compose_scenes(20, 2, seed=99, min_objects=2)]
    assert all(len(s.objects) == 2 for s, _ in test)
    return {
        "global": mean_scores(test, lambda: [Level(256, backends[256])]),
        "hierarchy": mean_scores(test, lambda: [Level(n, backends[n]) for n in (256, 64, 32)]),
        "local64": mean_scores(test, lambda: [Level(64, backends[64])]),
    }


def test_criterion_2_generalization(composition_results):
    g = composition_results["global"][0]
    h = composition_results["hierarchy"][0]
    ok = h - g >= 10.0
    record_acceptance(2, "hierarchy beats global on compositions", ok,
                      f"F hierarchy={h:.1f} vs global={g:.1f}, gap {h - g:+.1f} (>=+10)")
    assert ok


def test_criterion_3_visible_invisible(composition_results):
    g_full, g_vis, _ = composition_results["global"]
    l_full, l_vis, _ = composition_results["local64"]
    h_full = composition_results["hierarchy"][0]
    ok = (l_vis - g_vis >= 15.0) and h_full >= l_full and h_full >= g_full
    record_acceptance(3, "local level wins on visible split", ok,
                      f"visible F local@64={l_vis:.1f} vs global={g_vis:.1f} (gap {l_vis - g_vis:+.1f}, >=+15); "
                      f"full F hierarchy={h_full:.1f} vs local={l_full:.1f}, global={g_full:.1f}")
    assert ok


# ---------------------------------------------------------------------------

def test_criterion_4_bank_size():
    n = 32  # finest local level of the default hierarchy
    bank = build_bank(compose_scenes(200, 1, seed=11), n)
    test = [(s, render_depth(s)) for s in compose_scenes(20, 1, seed=12)]
    scores = {}
    for frac in (0.01, 1.0):
        be = RetrievalBackend(bank.subsample(frac, seed=0))
        scores[frac] = mean_scores(test, lambda: [Level(n, be)])[0]
    gap = scores[1.0] - scores[0.01]
    ok = gap <= 10.0
    record_acceptance(4, "1% bank stays close to full bank", ok,
                      f"local@{n} F at 1% ({round(0.01 * len(bank))} entries)={scores[0.01]:.1f} vs "
                      f"100% ({len(bank)} entries)={scores[1.0]:.1f}, gap {gap:.1f} (<=10)")
    assert ok


# ---------------------------------------------------------------------------

def _brute_nn(a, b):
    out = np.empty(len(a))
    for i in range(0, len(a), 256):
        d = ((a[i:i + 256, None, :] - b[None, :, :]) ** 2).sum(-1)
        out[i:i + 256] = np.sqrt(d.min(axis=1))
    return out


def test_criterion_5_metric_oracles():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        a = rng.random((rng.integers(1, 2001), 3))
        b = rng.random((rng.integers(1, 2001), 3))
        da, db = _brute_nn(a, b), _brute_nn(b, a)
        cd = 0.5 * (da.mean() + db.mean())
        p, r = np.mean(da <= 0.01), np.mean(db <= 0.01)
        f = 0.0 if p + r == 0 else 200 * p * r / (p + r)
        worst = max(worst, abs(chamfer(a, b) - cd), abs(fscore(a, b, 0.01) - f))
    box = lambda lo, hi: SceneSpec((Primitive("box", ((hi - lo) / 2,) * 3,
                                              translation=((hi + lo) / 2,) * 3),))
    est = iou(box(0.1, 0.6), box(0.35, 0.85), 1_000_000, seed=0)
    ok = worst <= 1e-12 and abs(est - 100 / 15) <= 1.0
    record_acceptance(5, "metrics equal brute force", ok,
                      f"max |KD - brute| over 200 instances={worst:.1e} (<=1e-12); "
                      f"IoU={est:.3f} vs analytic {100 / 15:.3f} (+-1)")
    assert ok


def test_criterion_6_marching_cubes():
    r = 0.3
    c = voxel_centers(R)
    sdf = np.linalg.norm(c - 0.5, axis=-1) - r
    smooth = marching_cubes(FusedField(sdf, SDF), IsoSpec(0.0, "below"))
    # the pipeline's own field: fused oracle occupancy of the same sphere
    scene = SceneSpec((Primitive("sphere", (r,), translation=(0.5, 0.5, 0.5)),))
    depth = render_depth(scene)
    binary = reconstruct(depth, [Level(n, OracleBackend(scene)) for n in (256, 64, 32)], R).mesh
    area_err = smooth.area() / (4 * np.pi * r * r) - 1
    dev = max(np.abs(np.linalg.norm(m.vertices - 0.5, axis=1) - r).max() for m in (smooth, binary)) * R
    tight = is_watertight(smooth) and is_watertight(binary)
    ok = abs(area_err) <= 0.02 and tight and dev <= 1.5
    record_acceptance(6, "marching cubes sphere", ok,
                      f"area error {100 * area_err:+.2f}% (+-2%), watertight={tight}, "
                      f"max vertex offset {dev:.2f} voxels (<=1.5)")
    assert ok


def test_criterion_7_fusion_algebra():
    rng = np.random.default_rng(0)
    # weight cancellation: a constant survives any weights exactly
    g = AccumulatorGrid(4)
    vox = rng.integers(0, 4, (500, 3))
    g.accumulate(vox, 0.37, rng.random(500) + 1e-3)
    f = g.finalize(PROBABILITY)
    cancel = bool(np.all(f.values[f.touched] == 0.37))
    # order independence on a real level
    scene = compose_scenes(1, 2, seed=3)[0]
    depth = render_depth(scene, 128, 128)
    be = NoisyOracleBackend(scene, 0.3, seed=2)
    base = reconstruct_level(depth, 32, be, grid_res=32)
    perm = rng.permutation(len(enumerate_patches(depth, 32)))
    shuffled = reconstruct_level(depth, 32, be, grid_res=32, order=perm)
    order_err = float(np.max(np.abs(shuffled.values - base.values)))
    threaded = reconstruct_level(depth, 32, be, grid_res=32, workers=4)
    bit_exact = threaded.values.tobytes() == base.values.tobytes()
    # single-level identity
    p = FusedField(rng.random((4, 4, 4)), PROBABILITY)
    identity = bool(np.array_equal(fuse_hierarchy([p]).values, p.values))
    # tau_sdf boundary
    inclusive = bool(threshold_field(FusedField(np.full((2, 2, 2), -0.02), SDF)).all())
    ok = cancel and order_err <= 1e-9 and bit_exact and identity and inclusive
    record_acceptance(7, "fusion algebra", ok,
                      f"weight cancellation={cancel}, reorder error={order_err:.1e} (<=1e-9), "
                      f"deterministic bit-exact={bit_exact}, identity={identity}, sdf=-0.02 inside={inclusive}")
    assert ok


def test_criterion_8_protocol(tmp_path):
    scene = compose_scenes(1, 3, seed=8, min_objects=2)[0]
    save_scene(scene, tmp_path / "scene.json")
    depth = render_depth(scene)
    peer = [sys.executable, "-m", "hpn.peer"]
    identical = True
    for n in (256, 64, 32):
        cmd = peer + ["oracle", "--scene", str(tmp_path / "scene.json"), "--patch", str(n)]
        with ExternalBackend(cmd, N=n) as remote:
            a = reconstruct_level(depth, n, remote, grid_res=R)
        b = reconstruct_level(depth, n, OracleBackend(scene), grid_res=R)
        identical &= a.values.tobytes() == b.values.tobytes()
    rejected = False
    with ExternalBackend(peer + ["short"], N=32) as bad:
        try:
            reconstruct_level(depth, 32, bad, grid_res=R)
        except BackendError:
            rejected = True
    ok = identical and rejected
    record_acceptance(8, "wire protocol conformance", ok,
                      f"peer fields byte-identical at N=256,64,32: {identical}; short reply rejected: {rejected}")
    assert ok
