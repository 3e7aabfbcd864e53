import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sofmesh.geometry import Camera
from sofmesh.scheduling import pixel_tile, schedule_points, tile_grid, workload_stats
from sofmesh.synthetic import skewed_points


def cam64():
    return Camera(np.eye(3), np.zeros(3), 64, 64, 32, 32, 64, 64)


def points_at_pixel(u, v, depths):
    cam = cam64()
    d = np.asarray(depths, float)
    x = (u - cam.cx) / cam.fx * d
    y = (v - cam.cy) / cam.fy * d
    return np.stack([x, y, d], axis=1)


def test_tile_grid_rounds_up():
    cam = Camera(np.eye(3), np.zeros(3), 10, 10, 5, 5, 33, 17)
    assert tile_grid(cam, 16) == (3, 2)
    assert pixel_tile(np.array([32.5]), np.array([16.2]), cam, 16)[0] == 5


def test_300_points_one_tile_two_blocks():
    P = points_at_pixel(3.5, 3.5, np.linspace(1, 5, 300))
    s = schedule_points(P, cam64())
    assert s.num_blocks == 2 and list(s.block_populations()) == [256, 44]
    assert set(s.block_to_tile) == {0}


def test_single_point_single_block():
    s = schedule_points(points_at_pixel(40.0, 10.0, [2.0]), cam64())
    assert s.num_blocks == 1 and s.block_to_tile[0] == 2


def test_points_behind_camera_dropped():
    P = np.array([[0, 0, 2.0], [0, 0, -2.0], [100.0, 0, 1.0]])
    s = schedule_points(P, cam64())
    assert list(s.point_index) == [0]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 2000), st.sampled_from([1, 7, 64, 256]))
def test_schedule_partition_properties(seed, n, block_size):
    rng = np.random.default_rng(seed)
    cam = cam64()
    P = np.column_stack([rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), rng.uniform(0.1, 3, n)])
    s = schedule_points(P, cam, 16, block_size)
    inside = np.flatnonzero(cam.in_frustum(P))
    # every visible point scheduled exactly once
    assert sorted(s.point_index) == list(inside)
    assert s.block_counts.sum() == s.num_blocks
    u, v, z = cam.project(P[s.point_index])
    assert np.array_equal(pixel_tile(u, v, cam), s.tile_of)
    pops = s.block_populations()
    assert pops.sum() == len(inside) and np.all(pops >= 1) and np.all(pops <= block_size)
    for b in range(s.num_blocks):
        sl = slice(s.block_start[b], s.block_end[b])
        assert np.all(s.tile_of[sl] == s.block_to_tile[b])
        assert np.all(np.diff(s.depth[sl]) >= 0)
    # only the last block of a tile may be partial
    for t in s.tiles:
        tp = pops[s.block_to_tile == t]
        assert np.all(tp[:-1] == block_size)
        assert tp.max() - tp.min() <= block_size - 1


def test_workload_uniform_points_near_equal():
    cam = cam64()
    uu, vv = np.meshgrid(np.arange(64) + 0.5, np.arange(64) + 0.5)
    P = np.concatenate([points_at_pixel(u, v, [1.0, 2.0]) for u, v in zip(uu.ravel(), vv.ravel())])
    binned, scheduled = workload_stats(schedule_points(P, cam))
    # 512 points per tile split into two full blocks
    assert scheduled.variance == 0.0 and np.all(scheduled.populations == 256)
    assert binned.variance == 0.0


def test_workload_single_pixel():
    P = points_at_pixel(20.5, 20.5, np.linspace(1, 4, 2000))
    binned, scheduled = workload_stats(schedule_points(P, cam64()))
    assert binned.variance > 10 * scheduled.variance
    assert binned.histogram.sum() == 2000 and scheduled.histogram.sum() == 2000


def test_workload_skewed_distribution():
    cam = cam64()
    P = skewed_points(8192, cam, seed=1)
    binned, scheduled = workload_stats(schedule_points(P, cam))
    assert binned.variance >= 10 * scheduled.variance


def test_invalid_sizes():
    with pytest.raises(ValueError):
        schedule_points(np.zeros((1, 3)), cam64(), tile_size=0)
