"""Mesh extraction from the opacity field with marching tetrahedra.

Pipeline: seed points from each live Gaussian's center and bounding-box
corners, Delaunay tetrahedralization, classification of every grid vertex
against the 0.5 level, marching tetrahedra over the labelled grid, bisection of
each crossing edge, then welding into an indexed mesh.

Field queries go through :class:`OpacityFieldEvaluator`, whose acceleration
strategies (tile scheduling, min-z bounding, early stopping, pruning and
dead-Gaussian culling) are all exact: classifications match the exhaustive
path, which evaluates every (point, Gaussian) pair in every view.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .delaunay import TetGrid, delaunay_tetrahedralize
from .field import SURFACE_LEVEL
from .geometry import (
    ALPHA_MIN,
    UNIT_OPACITY_BOUND,
    Camera,
    GaussianScene,
    as_scene,
    box_corners,
    precompute_scene,
    tight_bounds,
)
from .scheduling import BLOCK_SIZE, TILE_SIZE, schedule_points, tile_grid

BOUNDING_RADII = {"3sigma": 3.0, "3.33sigma": UNIT_OPACITY_BOUND}
PROVENANCE = ("center", "bound-corner", "sample")
WELD_GRID = 1e-7
MIN_AREA = 1e-14
_COLUMN_CHUNK = 64

# local tet edges; index into this list is the local edge id
TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
_EDGE_ID = {e: i for i, e in enumerate(TET_EDGES)}


def _edge(a, b) -> int:
    return _EDGE_ID[(min(a, b), max(a, b))]


def _build_case_table():
    table = []
    for code in range(16):
        inside = [k for k in range(4) if code >> k & 1]
        outside = [k for k in range(4) if not code >> k & 1]
        if len(inside) in (0, 4):
            table.append(())
        elif len(inside) in (1, 3):
            odd = inside[0] if len(inside) == 1 else outside[0]
            others = [k for k in range(4) if k != odd]
            table.append((tuple(_edge(odd, k) for k in others),))
        else:
            a, b = inside
            c, d = outside
            ac, ad, bd, bc = _edge(a, c), _edge(a, d), _edge(b, d), _edge(b, c)
            table.append(((ac, ad, bd), (ac, bd, bc)))
    return tuple(table)


CASE_TABLE = _build_case_table()


# ---------------------------------------------------------------------------
# seed points


@dataclass
class SeedPointSet:
    points: np.ndarray
    provenance: np.ndarray  # index into PROVENANCE
    gaussian: np.ndarray  # source Gaussian per point

    def __len__(self):
        return len(self.points)


def bounding_radius(scene: GaussianScene, bounding: str) -> np.ndarray:
    if bounding == "stp":
        return np.nan_to_num(tight_bounds(scene.opacities), nan=0.0)
    if bounding in BOUNDING_RADII:
        return np.full(len(scene), BOUNDING_RADII[bounding])
    raise ValueError(f"unknown bounding variant {bounding!r}")


def dedupe_points(points, tol: float = 1e-9):
    """Indices of the first occurrence of each point on a ``tol`` grid, in input order."""
    P = np.asarray(points, dtype=np.float64)
    keys = np.round(P / tol).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return np.sort(first)


def build_seed_points(scene, bounding: str = "stp", cutoff: Optional[float] = ALPHA_MIN,
                      filter_scale: float = 0.0, samples_per_gaussian: int = 0, seed: int = 0) -> SeedPointSet:
    """Centers and oriented box corners of every live Gaussian.

    ``bounding`` picks the box half-size in standard deviations: the
    opacity-dependent tight bound (``stp``), 3, or the tight bound of a fully
    opaque Gaussian (``3.33sigma``).  Gaussians whose (filtered) opacity is
    below ``cutoff`` are skipped.  ``samples_per_gaussian`` adds points drawn
    from each Gaussian's own distribution, clipped to its box, which densifies
    the grid where the level set lives.
    """
    scene = as_scene(scene)
    if filter_scale:
        scene = scene.with_filter(filter_scale)
    live = np.ones(len(scene), dtype=bool) if cutoff is None else scene.opacities >= cutoff
    idx = np.flatnonzero(live)
    if idx.size == 0:
        raise ValueError("no live Gaussians")
    sub = scene.subset(idx)
    radius = bounding_radius(sub, bounding)
    corners = box_corners(sub, radius)
    pts = [sub.positions, corners.reshape(-1, 3)]
    prov = [np.zeros(len(idx), dtype=np.int8), np.ones(8 * len(idx), dtype=np.int8)]
    src = [idx, np.repeat(idx, 8)]
    if samples_per_gaussian > 0:
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((len(idx), samples_per_gaussian, 3))
        z = np.clip(z, -radius[:, None, None], radius[:, None, None])
        local = z * sub.scales[:, None, :]
        pts.append((sub.positions[:, None, :] + np.einsum("nij,nkj->nki", sub.rotation_matrices, local)).reshape(-1, 3))
        prov.append(np.full(len(idx) * samples_per_gaussian, 2, dtype=np.int8))
        src.append(np.repeat(idx, samples_per_gaussian))
    P = np.concatenate(pts)
    keep = dedupe_points(P)
    return SeedPointSet(P[keep], np.concatenate(prov)[keep], np.concatenate(src)[keep])


# ---------------------------------------------------------------------------
# field evaluation


@dataclass(frozen=True)
class Strategies:
    schedule: bool = True
    min_z: bool = True
    early_stop: bool = True
    prune: bool = True
    dead_cull: bool = True

    @classmethod
    def naive(cls) -> "Strategies":
        return cls(False, False, False, False, False)

    @classmethod
    def full(cls) -> "Strategies":
        return cls()

    def enabled(self) -> List[str]:
        return [k for k, v in self.__dict__.items() if v]


# cumulative order used by the ablation report
STAGE_ORDER = ("schedule", "min_z", "early_stop", "prune")


def staged_strategies(dead_cull: bool = False):
    """``[(name, Strategies)]`` enabling each strategy cumulatively in stage order."""
    stages = [("naive", Strategies(False, False, False, False, dead_cull))]
    flags = {}
    for name in STAGE_ORDER:
        flags[name] = True
        stages.append(("+" + name, Strategies(dead_cull=dead_cull, **{k: flags.get(k, False) for k in STAGE_ORDER})))
    return stages


@dataclass
class _ViewData:
    cam: Camera
    cache: object
    candidates: np.ndarray  # Gaussian indices considered at all
    tile_lists: Optional[dict] = None  # tile id -> Gaussian indices (sorted by z_min when min_z)
    z_sorted: Optional[np.ndarray] = None


class OpacityFieldEvaluator:
    """Evaluates the view-minimum opacity field at batches of points.

    ``values`` returns exact field values (early stopping and pruning are not
    applicable there); ``classify`` returns ``O >= 0.5`` labels and may use
    every strategy.  ``counters`` accumulates evaluated (point, Gaussian)
    pairs and related statistics across calls.
    """

    def __init__(self, scene, cameras: Sequence[Camera], strategies: Strategies = Strategies(),
                 tile_size: int = TILE_SIZE, block_size: int = BLOCK_SIZE, workers: int = 1,
                 filter_scale: float = 0.0, z_mode: str = "diagonal"):
        self.scene = as_scene(scene)
        if filter_scale:
            self.scene = self.scene.with_filter(filter_scale)
        self.cameras = list(cameras)
        if not self.cameras:
            raise ValueError("at least one camera is required")
        self.strategies = strategies
        self.tile_size = tile_size
        self.block_size = block_size
        self.workers = max(1, int(workers))
        self.counters: Counter = Counter()
        self.block_populations: List[int] = []
        self._views = [self._prepare(cam, z_mode) for cam in self.cameras]

    # -- per-view preparation ------------------------------------------------

    def _prepare(self, cam: Camera, z_mode: str) -> _ViewData:
        cache = precompute_scene(self.scene, cam, 0.0, z_mode)
        cand = np.arange(len(self.scene))
        if self.strategies.dead_cull:
            cand = cand[self.scene.opacities >= ALPHA_MIN]
        view = _ViewData(cam, cache, cand)
        if self.strategies.min_z:
            view.z_sorted = cand[np.argsort(cache.min_z[cand], kind="stable")]
        if self.strategies.schedule:
            view.tile_lists = self._tile_lists(cam, cache, cand)
        return view

    def _tile_lists(self, cam: Camera, cache, cand) -> dict:
        tx, ty = tile_grid(cam, self.tile_size)
        E = np.nan_to_num(cache.tight_bound[cand], nan=0.0)
        corners = box_corners(self.scene.subset(cand), E) if len(cand) else np.zeros((0, 8, 3))
        u, v, z = cam.project(corners.reshape(-1, 3)) if len(cand) else (np.zeros(0),) * 3
        u, v, z = (a.reshape(-1, 8) for a in (u, v, z))
        lists = {}
        for row, g in enumerate(cand):
            if np.any(z[row] <= 1e-9 * max(1.0, float(np.max(np.abs(z[row]))))):
                x0, x1, y0, y1 = 0, tx - 1, 0, ty - 1
            else:
                x0 = max(0, int(math.floor((u[row].min() - 1.0) / self.tile_size)))
                x1 = min(tx - 1, int(math.floor((u[row].max() + 1.0) / self.tile_size)))
                y0 = max(0, int(math.floor((v[row].min() - 1.0) / self.tile_size)))
                y1 = min(ty - 1, int(math.floor((v[row].max() + 1.0) / self.tile_size)))
                if x0 > x1 or y0 > y1:
                    continue
            for ty_ in range(y0, y1 + 1):
                for tx_ in range(x0, x1 + 1):
                    lists.setdefault(ty_ * tx + tx_, []).append(g)
        out = {}
        for tile, gs in lists.items():
            gs = np.array(gs, dtype=np.int64)
            if self.strategies.min_z:
                gs = gs[np.argsort(cache.min_z[gs], kind="stable")]
            out[tile] = gs
        return out

    # -- block kernel --------------------------------------------------------

    def _block(self, view: _ViewData, pts_idx: np.ndarray, gauss: np.ndarray, points: np.ndarray,
               early_stop: bool):
        """Transmittance of each point in one block, plus the evaluated pair count."""
        cache = view.cache
        X = points[pts_idx]
        rel = X - cache.origin
        t = np.linalg.norm(rel, axis=1)
        d = rel / t[:, None]
        n_p = len(pts_idx)
        if self.strategies.min_z and len(gauss):
            zp = view.cam.to_view(X)[:, 2]
            zmins = cache.min_z[gauss]
            limit = np.searchsorted(zmins, zp + 1e-9 * (np.abs(zp) + 1.0), side="right")
        else:
            limit = np.full(n_p, len(gauss))
        T = np.ones(n_p)
        done = np.zeros(n_p, dtype=bool)
        pairs = 0
        stops = 0
        for c0 in range(0, len(gauss), _COLUMN_CHUNK):
            active = np.flatnonzero(~done & (limit > c0))
            if active.size == 0:
                break
            cols = gauss[c0:c0 + _COLUMN_CHUNK]
            A, B, C = cache.abc(d[active], cols)
            t_star = -B / (2.0 * A)
            s = np.minimum(t_star, t[active, None])
            alpha = cache.opacity[cols][None, :] * np.exp(-0.5 * (A * s * s + B * s + C))
            in_range = (c0 + np.arange(len(cols)))[None, :] < limit[active, None]
            contrib = in_range & (t_star > 0) & (alpha >= ALPHA_MIN)
            factors = np.where(contrib, 1.0 - alpha, 1.0)
            run = np.cumprod(np.concatenate([T[active, None], factors], axis=1), axis=1)[:, 1:]
            evaluated = in_range.sum(axis=1)
            if early_stop:
                hit = run <= SURFACE_LEVEL
                first = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
                stopped = first >= 0
                evaluated = np.where(stopped, np.minimum(first + 1, evaluated), evaluated)
                T[active] = np.where(stopped, run[np.arange(active.size), np.maximum(first, 0)], run[:, -1])
                done[active[stopped]] = True
                stops += int(stopped.sum())
            else:
                T[active] = run[:, -1]
            pairs += int(evaluated.sum())
        return T, pairs, stops

    def _run_view(self, view: _ViewData, points: np.ndarray, subset: np.ndarray, early_stop: bool):
        """Transmittance for ``subset`` points observed by ``view``; returns (indices, T)."""
        if self.strategies.schedule:
            sched = schedule_points(points, view.cam, self.tile_size, self.block_size, subset)
            empty = np.zeros(0, dtype=np.int64)
            jobs = [(sched.block(b), view.tile_lists.get(int(sched.block_to_tile[b]), empty))
                    for b in range(sched.num_blocks)]
            self.counters["blocks"] += sched.num_blocks
        else:
            observed = subset[view.cam.in_frustum(points[subset])] if len(subset) else subset
            gauss = view.z_sorted if self.strategies.min_z else view.candidates
            jobs = [(observed[s:s + self.block_size], gauss) for s in range(0, len(observed), self.block_size)]
            self.counters["blocks"] += len(jobs)

        def work(job):
            return self._block(view, job[0], job[1], points, early_stop)

        if self.workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                results = list(pool.map(work, jobs))
        else:
            results = [work(j) for j in jobs]
        idx = [j[0] for j in jobs]
        self.block_populations.extend(len(i) for i in idx)
        Ts = [r[0] for r in results]
        self.counters["pairs"] += sum(r[1] for r in results)
        self.counters["early_stops"] += sum(r[2] for r in results)
        self.counters["point_views"] += sum(len(i) for i in idx)
        if not idx:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        return np.concatenate(idx), np.concatenate(Ts)

    # -- public queries ------------------------------------------------------

    def values(self, points) -> np.ndarray:
        """Field value ``min_v O_v(x)`` (1 for points no view observes)."""
        P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out = np.ones(len(P))
        everyone = np.arange(len(P))
        for view in self._views:
            idx, T = self._run_view(view, P, everyone, early_stop=False)
            np.minimum.at(out, idx, 1.0 - T)
        return out

    def classify(self, points) -> np.ndarray:
        """``True`` where ``O(x) >= 0.5``."""
        P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.counters["classified"] += len(P)
        outside = np.zeros(len(P), dtype=bool)
        everyone = np.arange(len(P))
        for view in self._views:
            subset = np.flatnonzero(~outside) if self.strategies.prune else everyone
            self.counters["pruned"] += len(P) - len(subset)
            idx, T = self._run_view(view, P, subset, early_stop=self.strategies.early_stop)
            outside[idx[T > SURFACE_LEVEL]] = True
        return ~outside


# ---------------------------------------------------------------------------
# marching tetrahedra


@dataclass
class MarchingResult:
    edges: np.ndarray  # (E, 2) global vertex pairs, inside vertex first
    triangles: np.ndarray  # (F, 3) indices into ``edges``
    tet_of_triangle: np.ndarray


def marching_tets(grid: TetGrid, inside=None, values=None, level: float = SURFACE_LEVEL) -> MarchingResult:
    """Crossing edges and triangles of the labelled grid.

    Labels come from ``inside`` or from ``values >= level``.
    """
    if inside is None:
        if values is None:
            values = grid.opacity
        inside = np.asarray(values) >= level
    inside = np.asarray(inside, dtype=bool)
    T = grid.tetrahedra
    if len(T) == 0:
        return MarchingResult(np.zeros((0, 2), np.int64), np.zeros((0, 3), np.int64), np.zeros(0, np.int64))
    codes = (inside[T] * (1 << np.arange(4))).sum(axis=1)
    local = np.array(TET_EDGES)
    tri_tet, tri_local = [], []
    for code in range(1, 15):
        tets = np.flatnonzero(codes == code)
        for tri in CASE_TABLE[code]:
            tri_tet.append(tets)
            tri_local.append(np.broadcast_to(np.array(tri), (len(tets), 3)))
    if not tri_tet:
        return MarchingResult(np.zeros((0, 2), np.int64), np.zeros((0, 3), np.int64), np.zeros(0, np.int64))
    tri_tet = np.concatenate(tri_tet)
    tri_local = np.concatenate(tri_local)
    order = np.argsort(tri_tet, kind="stable")
    tri_tet, tri_local = tri_tet[order], tri_local[order]
    ends = T[tri_tet[:, None, None], local[tri_local]]  # (F, 3, 2)
    a, b = ends[..., 0], ends[..., 1]
    a_in = inside[a]
    ins = np.where(a_in, a, b)
    outs = np.where(a_in, b, a)
    pairs = np.stack([ins, outs], axis=-1).reshape(-1, 2)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    return MarchingResult(edges, inverse.reshape(-1, 3), tri_tet)


def interpolate_edges(vertices, edges, values, level: float = SURFACE_LEVEL) -> np.ndarray:
    """Linear interpolation of the level crossing along each edge."""
    V = np.asarray(vertices, dtype=np.float64)
    fa = values[edges[:, 0]]
    fb = values[edges[:, 1]]
    denom = fb - fa
    w = np.where(denom != 0, (level - fa) / np.where(denom != 0, denom, 1.0), 0.5)
    w = np.clip(w, 0.0, 1.0)[:, None]
    return V[edges[:, 0]] * (1.0 - w) + V[edges[:, 1]] * w


def binary_search_refine(evaluator_or_fn, inside_pts, outside_pts, iterations: int = 8,
                         counters: Optional[Counter] = None) -> np.ndarray:
    """Bisect each ``[inside, outside]`` bracket and return the final midpoints.

    ``evaluator_or_fn`` is an :class:`OpacityFieldEvaluator` or any callable
    mapping points to inside labels.  A midpoint that lands on the wrong side
    for a non-monotone field still narrows a valid bracket, so brackets are
    never lost.
    """
    classify = evaluator_or_fn.classify if hasattr(evaluator_or_fn, "classify") else evaluator_or_fn
    lo = np.array(inside_pts, dtype=np.float64).reshape(-1, 3)
    hi = np.array(outside_pts, dtype=np.float64).reshape(-1, 3)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        ins = np.asarray(classify(mid), dtype=bool)
        lo[ins] = mid[ins]
        hi[~ins] = mid[~ins]
        if counters is not None:
            counters["bisection_queries"] += len(mid)
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# assembly


@dataclass
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    residual: Optional[np.ndarray] = None

    @classmethod
    def empty(cls) -> "Mesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    def signed_volume(self) -> float:
        if len(self.triangles) == 0:
            return 0.0
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def assemble_mesh(vertices, triangles, weld: float = WELD_GRID, min_area: float = MIN_AREA) -> Mesh:
    """Weld vertices on a ``weld`` grid, drop degenerate triangles and sort deterministically."""
    V = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    F = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(F) == 0:
        return Mesh.empty()
    keys = np.round(V / weld).astype(np.int64)
    ukeys, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    W = V[first]
    F = inverse[F]
    distinct = (F[:, 0] != F[:, 1]) & (F[:, 1] != F[:, 2]) & (F[:, 0] != F[:, 2])
    F = F[distinct]
    a, b, c = (W[F[:, k]] for k in range(3))
    F = F[0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1) > min_area]
    used = np.unique(F)
    remap = np.full(len(W), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    W = W[used]
    F = remap[F]
    # rotate so the smallest index leads (orientation preserved), then sort rows
    shift = F.argmin(axis=1)
    F = np.stack([F[np.arange(len(F)), (shift + k) % 3] for k in range(3)], axis=1)
    F = F[np.lexsort((F[:, 2], F[:, 1], F[:, 0]))]
    return Mesh(W, F)


def _orient_triangles(pos, tris, edges, grid_vertices):
    """Flip triangles whose normal points toward their inside endpoints."""
    a, b, c = (pos[tris[:, k]] for k in range(3))
    normal = np.cross(b - a, c - a)
    inside_c = grid_vertices[edges[tris, 0]].mean(axis=1)
    outside_c = grid_vertices[edges[tris, 1]].mean(axis=1)
    flip = np.einsum("ij,ij->i", normal, outside_c - inside_c) < 0
    tris = tris.copy()
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class ExtractionResult:
    mesh: Mesh
    seeds: SeedPointSet
    grid: TetGrid
    inside: np.ndarray
    counters: Counter = field(default_factory=Counter)
    timings: dict = field(default_factory=dict)
    block_populations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def extract_mesh(scene, cameras: Sequence[Camera], *, bounding: str = "stp", cutoff: Optional[float] = ALPHA_MIN,
                 strategies: Strategies = Strategies(), iterations: int = 8, tile_size: int = TILE_SIZE,
                 block_size: int = BLOCK_SIZE, workers: int = 1, filter_scale: float = 0.0,
                 samples_per_gaussian: int = 0, seed: int = 0, compute_residual: bool = False,
                 z_mode: str = "diagonal") -> ExtractionResult:
    """Extract the 0.5 level set of the opacity field as a triangle mesh."""
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    scene = as_scene(scene)
    if filter_scale:
        scene = scene.with_filter(filter_scale)
    timings = {}
    clock = time.perf_counter()
    seeds = build_seed_points(scene, bounding, cutoff, 0.0, samples_per_gaussian, seed)
    grid = delaunay_tetrahedralize(seeds.points, seed=seed)
    timings["grid"] = time.perf_counter() - clock
    clock = time.perf_counter()
    ev = OpacityFieldEvaluator(scene, cameras, strategies, tile_size, block_size, workers, 0.0, z_mode)
    if iterations == 0:
        values = ev.values(grid.vertices)
        grid.opacity = values
        inside = values >= SURFACE_LEVEL
    else:
        inside = ev.classify(grid.vertices)
    timings["classify"] = time.perf_counter() - clock
    clock = time.perf_counter()
    march = marching_tets(grid, inside=inside)
    if len(march.triangles) == 0:
        mesh = Mesh.empty()
    else:
        V = grid.vertices
        if iterations == 0:
            pos = interpolate_edges(V, march.edges, values)
        else:
            pos = binary_search_refine(ev, V[march.edges[:, 0]], V[march.edges[:, 1]], iterations, ev.counters)
        tris = _orient_triangles(pos, march.triangles, march.edges, V)
        mesh = assemble_mesh(pos, tris)
    timings["refine"] = time.perf_counter() - clock
    if compute_residual and len(mesh.vertices):
        exact = OpacityFieldEvaluator(scene, cameras, replace(strategies, early_stop=False, prune=False),
                                      tile_size, block_size, workers, 0.0, z_mode)
        mesh.residual = np.abs(exact.values(mesh.vertices) - SURFACE_LEVEL)
    counters = Counter(ev.counters)
    counters["seed_points"] = len(seeds)
    counters["tetrahedra"] = len(grid)
    counters["crossing_edges"] = len(march.edges)
    counters["triangles"] = len(mesh.triangles)
    counters["vertices"] = len(mesh.vertices)
    return ExtractionResult(mesh, seeds, grid, inside, counters, timings,
                            np.array(ev.block_populations, dtype=np.int64))
