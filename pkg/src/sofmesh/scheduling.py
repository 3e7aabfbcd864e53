"""Assignment of 3D query points to screen tiles and fixed-size work blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera

TILE_SIZE = 16
BLOCK_SIZE = 256


@dataclass
class TileSchedule:
    """Points of one view grouped by tile, depth-sorted and cut into blocks.

    ``point_index`` lists the scheduled points in key order ``(tile, depth,
    index)``; ``block_start``/``block_end`` slice that order and
    ``block_to_tile`` names the tile of every block.
    """

    point_index: np.ndarray
    tile_of: np.ndarray  # tile id per scheduled point, key order
    depth: np.ndarray  # view-space z per scheduled point, key order
    tiles: np.ndarray  # tile ids with at least one point, ascending
    block_counts: np.ndarray  # blocks per entry of ``tiles``
    block_to_tile: np.ndarray
    block_start: np.ndarray
    block_end: np.ndarray
    tiles_x: int
    tiles_y: int
    tile_size: int
    block_size: int

    @property
    def num_blocks(self) -> int:
        return len(self.block_to_tile)

    def block(self, b: int) -> np.ndarray:
        return self.point_index[self.block_start[b]:self.block_end[b]]

    def block_populations(self) -> np.ndarray:
        return self.block_end - self.block_start

    def tile_populations(self) -> np.ndarray:
        """Points per tile over the full tile grid, empty tiles included."""
        return np.bincount(self.tile_of, minlength=self.tiles_x * self.tiles_y)


def tile_grid(cam: Camera, tile_size: int = TILE_SIZE):
    return -(-cam.width // tile_size), -(-cam.height // tile_size)


def pixel_tile(u, v, cam: Camera, tile_size: int = TILE_SIZE) -> np.ndarray:
    tx, _ = tile_grid(cam, tile_size)
    return (np.floor(v).astype(np.int64) // tile_size) * tx + np.floor(u).astype(np.int64) // tile_size


def schedule_points(points, cam: Camera, tile_size: int = TILE_SIZE, block_size: int = BLOCK_SIZE,
                    subset=None) -> TileSchedule:
    """Build the tile schedule of ``points`` (optionally only ``subset``) for ``cam``.

    Points outside the view frustum, including those behind the camera, are
    not scheduled.
    """
    if tile_size < 1 or block_size < 1:
        raise ValueError("tile and block sizes must be positive")
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cand = np.arange(len(P)) if subset is None else np.asarray(subset, dtype=np.int64)
    tx, ty = tile_grid(cam, tile_size)
    if len(cand):
        keep = cam.in_frustum(P[cand])
        cand = cand[keep]
    u, v, z = cam.project(P[cand]) if len(cand) else (np.zeros(0), np.zeros(0), np.zeros(0))
    tile = pixel_tile(u, v, cam, tile_size) if len(cand) else np.zeros(0, dtype=np.int64)
    order = np.lexsort((cand, z, tile))
    idx, tile, z = cand[order], tile[order], z[order]
    tiles, starts, counts = np.unique(tile, return_index=True, return_counts=True)
    nblocks = -(-counts // block_size)
    block_to_tile = np.repeat(tiles, nblocks)
    bs, be = [], []
    for s, c, nb in zip(starts, counts, nblocks):
        for k in range(nb):
            bs.append(s + k * block_size)
            be.append(s + min((k + 1) * block_size, c))
    return TileSchedule(idx, tile, z, tiles, nblocks, block_to_tile,
                        np.array(bs, dtype=np.int64), np.array(be, dtype=np.int64), tx, ty, tile_size, block_size)


@dataclass(frozen=True)
class WorkloadStats:
    populations: np.ndarray
    mean: float
    variance: float
    histogram: np.ndarray
    bin_edges: np.ndarray


def _stats(pops, bins) -> WorkloadStats:
    pops = np.asarray(pops, dtype=np.int64)
    if len(pops) == 0:
        return WorkloadStats(pops, 0.0, 0.0, np.zeros(0, dtype=np.int64), np.zeros(1))
    hist, edges = np.histogram(pops, bins=bins, weights=pops)
    return WorkloadStats(pops, float(pops.mean()), float(pops.var()), hist.astype(np.int64), edges)


def workload_stats(schedule: TileSchedule, bins: int = 16):
    """Per-block populations for tile binning versus scheduled blocks.

    Tile binning, as in a rasterizer, launches one block per image tile holding
    all of that tile's points; scheduling launches only as many blocks as the
    points need, each capped at ``block_size``.  Histograms are weighted by
    population so each sums to the number of scheduled points.
    """
    return _stats(schedule.tile_populations(), bins), _stats(schedule.block_populations(), bins)
