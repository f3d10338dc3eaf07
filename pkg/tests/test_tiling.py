import numpy as np
import pytest

from relvis.lrp import Heatmap
from relvis.tiling import TileHeatmap, normalize, plan_grid, stitch


def test_exact_tiling_600_200():
    grid = plan_grid((600, 600), patch_size=200, overlap_fraction=0.0)
    assert len(grid) == 9
    assert sorted({y for y, _ in grid.origins}) == [0, 200, 400]
    assert sorted({x for _, x in grid.origins}) == [0, 200, 400]


def test_degenerate_single_patch():
    for overlap in (0.0, 0.1, 0.5):
        grid = plan_grid((200, 200), 200, overlap)
        assert grid.origins == [(0, 0)]


def test_edge_clamped_origins():
    grid = plan_grid((380, 200), 200, 0.0)
    assert sorted({y for y, _ in grid.origins}) == [0, 180]
    assert sorted({x for _, x in grid.origins}) == [0]


def test_one_tenth_overlap_stride():
    grid = plan_grid((560, 560), 200, 0.1)
    assert grid.stride == 180


def test_overlap_bounds_checked():
    with pytest.raises(ValueError, match="overlap"):
        plan_grid((400, 400), 200, 0.97)
    with pytest.raises(ValueError, match="overlap"):
        plan_grid((400, 400), 200, -0.1)
    with pytest.raises(ValueError, match="smaller"):
        plan_grid((100, 400), 200, 0.0)


def test_full_coverage_property():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = int(rng.integers(16, 64))
        th = int(rng.integers(p, 3 * p))
        tw = int(rng.integers(p, 3 * p))
        ov = float(rng.uniform(0, 0.9))
        grid = plan_grid((th, tw), p, ov)
        cov = np.zeros((th, tw), int)
        for y, x in grid.origins:
            cov[y : y + p, x : x + p] += 1
        assert (cov >= 1).all()


def test_stitch_disjoint_constants():
    grid = plan_grid((4, 8), 4, 0.0)
    tile = stitch([np.full((4, 4), 2.0), np.full((4, 4), -3.0)], grid)
    np.testing.assert_array_equal(tile.values[:, :4], 2.0)
    np.testing.assert_array_equal(tile.values[:, 4:], -3.0)
    assert (tile.coverage == 1).all()


def test_stitch_identical_overlapping():
    grid = plan_grid((4, 6), 4, 0.5)
    maps = [np.full((4, 4), 1.5) for _ in grid.origins]
    tile = stitch(maps, grid)
    np.testing.assert_allclose(tile.values, 1.5)


def test_stitch_half_overlap_mean():
    grid = plan_grid((4, 6), 4, 0.5)  # origins x in {0, 2}
    tile = stitch([np.zeros((4, 4)), np.ones((4, 4))], grid)
    np.testing.assert_array_equal(tile.values[:, :2], 0.0)
    np.testing.assert_array_equal(tile.values[:, 2:4], 0.5)
    np.testing.assert_array_equal(tile.values[:, 4:], 1.0)
    assert tile.coverage.max() == 2


def test_stitch_linearity(rng):
    grid = plan_grid((10, 10), 4, 0.3)
    maps = [rng.normal(size=(4, 4)) for _ in grid.origins]
    a = stitch(maps, grid).values
    b = stitch([3.0 * m for m in maps], grid).values
    np.testing.assert_allclose(b, 3.0 * a, rtol=1e-6)


def test_stitch_count_mismatch():
    grid = plan_grid((8, 8), 4, 0.0)
    with pytest.raises(ValueError, match="origins"):
        stitch([np.zeros((4, 4))], grid)
    with pytest.raises(ValueError, match="shape"):
        stitch([np.zeros((3, 3))] * len(grid.origins), grid)


def test_normalize_global_shared_divisor():
    m1 = Heatmap(values=np.full((2, 2), 2.0, np.float32))
    m2 = Heatmap(values=np.full((2, 2), -4.0, np.float32))
    out = normalize([m1, m2], policy="global")
    assert out[0].divisor == 4.0 and out[1].divisor == 4.0
    np.testing.assert_allclose(out[0].values, 0.5)
    np.testing.assert_allclose(out[1].values, -1.0)
    assert max(np.abs(o.values).max() for o in out) == 1.0


def test_normalize_local_per_map():
    m1 = Heatmap(values=np.full((2, 2), 2.0, np.float32))
    m2 = Heatmap(values=np.full((2, 2), -4.0, np.float32))
    out = normalize([m1, m2], policy="local")
    np.testing.assert_allclose(out[0].values, 1.0)
    np.testing.assert_allclose(out[1].values, -1.0)


def test_normalize_zero_maps_unchanged():
    m = TileHeatmap(values=np.zeros((3, 3), np.float32),
                    coverage=np.ones((3, 3), np.int32))
    for policy in ("global", "local"):
        out = normalize([m], policy=policy)[0]
        np.testing.assert_array_equal(out.values, 0.0)
        assert out.divisor == 1.0


def test_normalize_idempotent(rng):
    maps = [Heatmap(values=rng.normal(size=(4, 4)).astype(np.float32))
            for _ in range(3)]
    once = normalize(maps, policy="global")
    twice = normalize(once, policy="global")
    for a, b in zip(once, twice):
        np.testing.assert_array_equal(a.values, b.values)


def test_normalize_range_invariant(rng):
    maps = [rng.normal(size=(5, 5)) * rng.uniform(0.1, 50) for _ in range(4)]
    for policy in ("global", "local"):
        for out in normalize(maps, policy=policy):
            assert np.abs(out).max() <= 1.0
