import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import box_scene, sphere_scene
from hpn.fusion import SDF, FusedField
from hpn.geometry import Mesh
from hpn.meshing import IsoSpec, marching_cubes
from hpn.metrics import (REPORT_COLUMNS, WORST_CHAMFER, MetricReport, NNIndex, chamfer,
                         evaluate_split, format_report, fscore, grid_occupancy, iou, mean_report,
                         nn_distances, report_csv)
from hpn.pipeline import voxel_centers, voxelize_scene
from hpn.render import render_depth

points = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=st.floats(-1, 1))


def brute_nn(a, b):
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)).min(axis=1)


def sphere_mesh(res=64, r=0.25):
    sdf = np.linalg.norm(voxel_centers(res) - 0.5, axis=-1) - r
    return marching_cubes(FusedField(sdf, SDF), IsoSpec(0.0, "below"))


class TestPointMetrics:
    def test_chamfer_example(self):
        assert chamfer([[0, 0, 0]], [[0.1, 0, 0]]) == pytest.approx(0.1)
        assert 100 * chamfer([[0, 0, 0]], [[0.1, 0, 0]]) == pytest.approx(10.0)

    def test_chamfer_asymmetric_sets(self):
        # a->b mean 0, b->a mean 0.5
        assert chamfer([[0, 0, 0]], [[0, 0, 0], [1, 0, 0]]) == pytest.approx(0.25)

    def test_fscore_example(self):
        # precision 1, recall 1/2
        assert fscore([[0, 0, 0]], [[0, 0, 0], [1, 0, 0]]) == pytest.approx(200 / 3)

    def test_fscore_threshold_inclusive(self):
        assert fscore([[0, 0, 0]], [[0.5, 0, 0]], d_thresh=0.5) == 100.0
        assert fscore([[0, 0, 0]], [[0.5, 0, 0]], d_thresh=0.4) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            chamfer(np.zeros((0, 3)), [[0, 0, 0]])
        with pytest.raises(ValueError):
            NNIndex(np.zeros((0, 3)))

    @settings(max_examples=80, deadline=None)
    @given(points, points)
    def test_kdtree_equals_brute_force(self, a, b):
        npt.assert_allclose(nn_distances(a, b), brute_nn(a, b), atol=1e-12)
        expected = 0.5 * (brute_nn(a, b).mean() + brute_nn(b, a).mean())
        assert chamfer(a, b) == pytest.approx(expected, abs=1e-12)

    @settings(max_examples=80, deadline=None)
    @given(points, points)
    def test_axioms(self, a, b):
        assert chamfer(a, a) == 0.0
        assert fscore(a, a) == 100.0
        assert chamfer(a, b) == pytest.approx(chamfer(b, a))
        assert chamfer(a, b) >= 0
        assert 0.0 <= fscore(a, b) <= 100.0


class TestIoU:
    a = box_scene((0.1, 0.1, 0.1), (0.6, 0.6, 0.6))
    b = box_scene((0.35, 0.35, 0.35), (0.85, 0.85, 0.85))

    def test_offset_boxes(self):
        # intersection is 1/8 of each box: IoU = 1/15
        assert iou(self.a, self.b, 1_000_000) == pytest.approx(100 / 15, abs=1.0)

    def test_seed_mean(self):
        vals = [iou(self.a, self.b, 100_000, seed=s) for s in range(20)]
        assert np.mean(vals) == pytest.approx(100 / 15, abs=0.5)

    def test_axioms(self):
        assert iou(self.a, self.a) == 100.0
        assert iou(self.a, self.b, seed=3) == iou(self.b, self.a, seed=3)
        disjoint = box_scene((0.7, 0.7, 0.7), (0.9, 0.9, 0.9))
        assert iou(self.a, disjoint) == 0.0

    def test_voxel_grid_source(self):
        grid = voxelize_scene(sphere_scene(), 64)
        assert iou(grid, sphere_scene()) > 95.0
        occ = grid_occupancy(grid)
        assert occ(np.array([[0.5, 0.5, 0.5], [0.01, 0.01, 0.01]])).tolist() == [True, False]

    def test_minimum_samples(self):
        with pytest.raises(ValueError):
            iou(self.a, self.b, 10)


@pytest.fixture(scope="module")
def setup():
    scene = sphere_scene()
    return scene, render_depth(scene, 128, 128), sphere_mesh()


class TestSplit:
    def test_perfect_prediction(self, setup):
        scene, depth, mesh = setup
        rep = evaluate_split(mesh, scene, depth, eps=2 / 64, n=10_000, seed=0)
        # sample spacing (~0.009) is close to d_thresh, so F sits a little under 100
        assert rep.fscore > 97.0
        assert rep.splits["visible"].fscore > 97.0
        assert rep.splits["invisible"].fscore > 97.0
        assert rep.chamfer < 0.5
        assert rep.valid

    def test_missing_back_half(self, setup):
        scene, depth, mesh = setup
        front = mesh.vertices[mesh.faces].mean(axis=1)[:, 2] < 0.5
        half = Mesh(mesh.vertices, mesh.faces[front])
        rep = evaluate_split(half, scene, depth, eps=2 / 64, n=10_000, seed=0)
        assert rep.splits["visible"].fscore > 95.0
        assert rep.splits["invisible"].fscore < 70.0
        assert rep.splits["invisible"].fscore < rep.fscore < rep.splits["visible"].fscore

    def test_split_counts_partition_samples(self, setup):
        scene, depth, mesh = setup
        rep = evaluate_split(mesh, scene, depth, eps=2 / 64, n=4000, seed=1)
        s = rep.splits
        assert s["visible"].n_gt + s["invisible"].n_gt == 4000
        assert s["visible"].n_pred + s["invisible"].n_pred == 4000

    def test_empty_prediction(self, setup):
        scene, depth, _ = setup
        rep = evaluate_split(Mesh(), scene, depth, eps=2 / 64, n=1000)
        assert not rep.valid
        assert rep.fscore == 0.0 and rep.chamfer == pytest.approx(100 * math.sqrt(3))
        assert rep.chamfer == 100 * WORST_CHAMFER

    def test_iou_with_occupancy(self, setup):
        scene, depth, mesh = setup
        rep = evaluate_split(mesh, scene, depth, 2 / 64, n=1000,
                             pred_occupancy=voxelize_scene(scene, 64), iou_samples=20_000)
        assert rep.iou > 95.0

    def test_deterministic(self, setup):
        scene, depth, mesh = setup
        a = evaluate_split(mesh, scene, depth, 2 / 64, n=2000, seed=4)
        b = evaluate_split(mesh, scene, depth, 2 / 64, n=2000, seed=4)
        assert repr(a.to_dict()) == repr(b.to_dict())


class TestReports:
    def reports(self):
        r = MetricReport("s0", "oracle", "256+64", 90.0, 1.0, 80.0)
        bad = MetricReport("s1", "oracle", "256+64", 0.0, 173.2, 0.0, valid=False)
        return [r, bad]

    def test_csv(self):
        text = report_csv(self.reports())
        lines = text.splitlines()
        assert lines[0].split(",") == REPORT_COLUMNS
        assert lines[1].startswith("s0,oracle,256+64,90.0,1.0,80.0,nan")
        assert lines[2].endswith(",0,0")

    def test_mean(self):
        m = mean_report(self.reports())
        assert m["fscore"] == 45.0
        assert math.isnan(m["visible_fscore"])

    def test_text(self):
        text = format_report(self.reports())
        assert "[INVALID]" in text and "mean over 2" in text
