import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hpn.patches import (LevelConfig, PartRegion, crop, enumerate_patches, from_local, lattice,
                         pad_to_square, part_for_patch, sample_query_points, sample_random_points,
                         to_local, voxel_range)
from hpn.render import DepthMap


def blank(w, h=None):
    h = h or w
    return DepthMap(np.zeros((h, w)), np.ones((h, w), bool))


class TestEnumeration:
    @pytest.mark.parametrize("n,count", [(32, 225), (64, 49), (128, 9), (256, 1)])
    def test_default_counts(self, n, count):
        assert len(enumerate_patches(blank(256), n)) == count

    def test_global_is_whole_image(self):
        (p,) = enumerate_patches(blank(256), 256)
        assert (p.top, p.left, p.pixels.shape) == (0, 0, (256, 256))
        part = p.part
        assert (part.x0, part.y0, part.M) == (0.0, 0.0, 1.0)

    def test_row_major_indices(self):
        ps = enumerate_patches(blank(128), 64)
        assert [p.index for p in ps] == list(range(9))
        assert [(p.top, p.left) for p in ps[:4]] == [(0, 0), (0, 32), (0, 64), (32, 0)]

    def test_last_offset_clamped(self):
        assert lattice(100, 32, 16) == [0, 16, 32, 48, 64, 68]
        assert lattice(256, 32, 32) == list(range(0, 225, 32))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(8, 300), st.integers(1, 64), st.data())
    def test_lattice_covers_every_pixel(self, size, n, data):
        n = min(n, size)
        s = data.draw(st.integers(1, n))
        starts = lattice(size, n, s)
        covered = np.zeros(size, bool)
        for a in starts:
            covered[a:a + n] = True
        assert covered.all()
        assert starts[-1] == size - n
        assert all(b > a for a, b in zip(starts, starts[1:]))

    def test_each_pixel_in_four_patches_at_half_stride(self):
        # interior pixels away from the clamped border
        counts = np.zeros((256, 256), int)
        for p in enumerate_patches(blank(256), 32):
            counts[p.top:p.top + 32, p.left:p.left + 32] += 1
        assert np.all(counts[16:240, 16:240] == 4)

    def test_stride_bounds(self):
        with pytest.raises(ValueError):
            enumerate_patches(blank(64), 32, stride=33)
        with pytest.raises(ValueError):
            LevelConfig(32, stride_infer=0)
        with pytest.raises(ValueError):
            enumerate_patches(blank(64), 128)

    def test_level_config_defaults(self):
        assert LevelConfig(64).infer_stride(256) == 32
        assert LevelConfig(256).infer_stride(256) == 256
        assert LevelConfig(64, stride_train=8).train_stride(256) == 8


class TestPartMapping:
    def test_top_left_patch(self):
        (p, *_) = enumerate_patches(blank(256), 64)
        part = part_for_patch(p)
        npt.assert_allclose(part.lower, (0.0, 0.75, 0.0))
        npt.assert_allclose(part.upper, (0.25, 1.0, 1.0))

    def test_parts_tile_image(self):
        ps = enumerate_patches(blank(256), 64, stride=64)
        area = sum(p.part.M ** 2 for p in ps)
        assert area == pytest.approx(1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 0.9), st.floats(0, 0.9), st.floats(0.01, 0.1),
           st.lists(st.tuples(*[st.floats(-0.5, 0.5)] * 3), min_size=1, max_size=20))
    def test_round_trip(self, x0, y0, m, local):
        part = PartRegion(x0, y0, m)
        q = np.array(local)
        back = to_local(part, from_local(part, q))
        npt.assert_allclose(back, q, atol=1e-12 / m)

    def test_round_trip_global(self):
        part = PartRegion(0.125, 0.5, 0.25)
        p = np.random.default_rng(0).random((1000, 3)) * [0.25, 0.25, 1] + [0.125, 0.5, 0]
        npt.assert_allclose(from_local(part, to_local(part, p)), p, atol=1e-12)

    def test_outside_rejected(self):
        part = PartRegion(0.0, 0.0, 0.25)
        with pytest.raises(ValueError):
            to_local(part, [[0.3, 0.1, 0.5]])
        with pytest.raises(ValueError):
            from_local(part, [[0.0, 0.6, 0.0]])

    def test_center_maps_to_origin(self):
        part = PartRegion(0.25, 0.5, 0.125)
        npt.assert_allclose(to_local(part, part.center), 0.0)


class TestQueryPoints:
    @pytest.mark.parametrize("n,res,count", [(64, 64, 16 * 16 * 64), (32, 128, 32768), (64, 32, 2048)])
    def test_counts(self, n, res, count):
        p = enumerate_patches(blank(256), n)[0]
        q = sample_query_points(p.part, res)
        assert len(q) == count

    def test_points_are_voxel_centers_inside_part(self):
        p = enumerate_patches(blank(256), 64)[10]
        q = sample_query_points(p.part, 64)
        npt.assert_array_equal(q.points, (q.voxels + 0.5) / 64)
        assert p.part.contains(q.points).all()
        assert np.all(np.abs(q.local) <= 0.5)

    def test_closed_interval(self):
        # centers (k+.5)/R exactly on the part boundary are included
        part = PartRegion(0.5 / 8, 0.5 / 8, 0.25)
        assert voxel_range(part.x0, part.x0 + part.M, 8).tolist() == [0, 1, 2]

    def test_random_points(self):
        part = PartRegion(0.25, 0.25, 0.25)
        a = sample_random_points(part, 1500, seed=3)
        b = sample_random_points(part, 1500, seed=3)
        assert len(a) == 1500
        npt.assert_array_equal(a.points, b.points)
        assert part.contains(a.points).all()
        assert not np.array_equal(a.points, sample_random_points(part, 1500, seed=4).points)


class TestCrop:
    def test_padding_reads_background(self):
        dm = DepthMap(np.full((4, 4), 0.2), np.ones((4, 4), bool))
        pix, val = crop(dm, 2, 2, 4)
        assert val.sum() == 4 and val[:2, :2].all()
        assert np.all(pix[~val] == 1.0)

    def test_pad_to_square(self):
        dm = DepthMap(np.full((2, 4), 0.2), np.ones((2, 4), bool))
        sq = pad_to_square(dm)
        assert sq.depth.shape == (4, 4)
        assert sq.valid[:2].all() and not sq.valid[2:].any()
        assert np.all(sq.depth[2:] == 1.0)

    def test_patch_pixels_match_image(self):
        rng = np.random.default_rng(0)
        dm = DepthMap(rng.random((64, 64)), rng.random((64, 64)) > 0.3)
        for p in enumerate_patches(dm, 16):
            npt.assert_array_equal(p.pixels, dm.depth[p.top:p.top + 16, p.left:p.left + 16])
            npt.assert_array_equal(p.valid, dm.valid[p.top:p.top + 16, p.left:p.left + 16])
