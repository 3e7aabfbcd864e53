"""Sorted per-ray compositing, the opacity field and level-set depth.

Contributions along a ray are sorted by the depth of their maximum contribution
``t*`` (an exact per-ray sort) and alpha-composited front to back.  The opacity
of a point ``x = o + t d`` accumulates every Gaussian evaluated at
``min(t*, t)``; the field value of ``x`` is the minimum over all views that
observe it.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .geometry import (
    ALPHA_MIN,
    Camera,
    GaussianPrimitive,
    GaussianScene,
    PrecomputedScene,
    Ray,
    as_scene,
    inverse_covariance,
    precompute_scene,
)

SURFACE_LEVEL = 0.5


@dataclass(frozen=True)
class RayContribution:
    gaussian_index: int
    t_star: float
    alpha: float  # alpha at the peak, opacity * G(t*)
    abc: tuple
    opacity: float

    def alpha_at(self, t: float) -> float:
        """Alpha of this Gaussian evaluated at ``min(t*, t)``."""
        A, B, C = self.abc
        s = min(self.t_star, t)
        return self.opacity * math.exp(-0.5 * (A * s * s + B * s + C))


@dataclass(frozen=True)
class PixelOutputs:
    color: np.ndarray
    depth: Optional[float]  # None marks "no surface"
    accumulated_opacity: float
    transmittance_final: float


@dataclass
class ViewSet:
    """Cameras and their per-camera Gaussian caches for one scene."""

    scene: GaussianScene
    cameras: List[Camera]
    caches: List[PrecomputedScene]

    @classmethod
    def build(cls, scene, cameras: Sequence[Camera], filter_scale: float = 0.0,
              z_mode: str = "diagonal") -> "ViewSet":
        scene = as_scene(scene)
        cams = list(cameras)
        if not cams:
            raise ValueError("a view set needs at least one camera")
        return cls(scene, cams, [precompute_scene(scene, c, filter_scale, z_mode) for c in cams])

    def __len__(self):
        return len(self.cameras)


# ---------------------------------------------------------------------------
# contribution gathering


def _contribution_arrays(A, B, C, opacity, alpha_min):
    t_star = -B / (2.0 * A)
    alpha = opacity * np.exp(-0.5 * (C - B * B / (4.0 * A)))
    keep = (t_star > 0) & (alpha >= alpha_min)
    return t_star, alpha, keep


def collect_contributions(scene, ray: Ray, *, alpha_min: float = ALPHA_MIN, window: Optional[int] = None,
                          filter_scale: float = 0.0, alpha_max: float = 1.0) -> List[RayContribution]:
    """Gaussians contributing to ``ray``, sorted by ``t*``.

    Gaussians peaking behind the ray origin or with peak alpha below
    ``alpha_min`` are dropped.  With ``window=K`` the exact sort is replaced by
    a K-entry resort buffer fed in center-depth order, which approximates the
    hierarchical GPU resorting.  ``alpha_max < 1`` clamps the peak alpha used
    for compositing.
    """
    scene = as_scene(scene)
    if filter_scale:
        scene = scene.with_filter(filter_scale)
    if len(scene) == 0:
        return []
    P = scene.inverse_covariances()
    delta = ray.origin[None, :] - scene.positions
    Pd = P @ ray.direction
    A = Pd @ ray.direction
    B = 2.0 * np.einsum("ni,ni->n", Pd, delta)
    C = np.einsum("ni,nij,nj->n", delta, P, delta)
    t_star, alpha, keep = _contribution_arrays(A, B, C, scene.opacities, alpha_min)
    idx = np.flatnonzero(keep)
    alpha = np.minimum(alpha, alpha_max)
    out = [RayContribution(int(i), float(t_star[i]), float(alpha[i]), (float(A[i]), float(B[i]), float(C[i])),
                           float(scene.opacities[i])) for i in idx]
    if window is None:
        return sort_contributions(out)
    depth = {int(i): float((scene.positions[i] - ray.origin) @ ray.direction) for i in idx}
    out.sort(key=lambda c: (depth[c.gaussian_index], c.gaussian_index))
    return resort_window(out, window)


def sort_contributions(contribs) -> List[RayContribution]:
    return sorted(contribs, key=lambda c: (c.t_star, c.gaussian_index))


def resort_window(contribs, window: int) -> List[RayContribution]:
    """Emit contributions through a sorted buffer of ``window`` entries."""
    if window < 1:
        raise ValueError("window must be positive")
    buf: list = []
    out = []
    for c in contribs:
        buf.append(c)
        if len(buf) > window:
            buf.sort(key=lambda c: (c.t_star, c.gaussian_index))
            out.append(buf.pop(0))
    buf.sort(key=lambda c: (c.t_star, c.gaussian_index))
    return out + buf


# ---------------------------------------------------------------------------
# compositing


def transmittances(alphas) -> np.ndarray:
    """``T_0 .. T_N`` for the given alphas (length ``N + 1``)."""
    a = np.asarray(alphas, dtype=np.float64)
    T = np.empty(len(a) + 1)
    T[0] = 1.0
    acc = 1.0
    for i, ai in enumerate(a):
        acc *= 1.0 - ai
        T[i + 1] = acc
    return T


def median_index(alphas) -> Optional[int]:
    """Index ``i`` with ``T_i > 0.5`` and ``T_{i+1} < 0.5``; None if transmittance never crosses."""
    T = 1.0
    for i, a in enumerate(alphas):
        nxt = T * (1.0 - a)
        if T > SURFACE_LEVEL and nxt < SURFACE_LEVEL:
            return i
        if nxt <= SURFACE_LEVEL:
            return None
        T = nxt
    return None


def median_depth(contribs) -> Optional[float]:
    i = median_index([c.alpha for c in contribs])
    return None if i is None else contribs[i].t_star


def _log_ratio(T_i: float, opacity: float) -> float:
    return math.log((T_i - SURFACE_LEVEL) / (T_i * opacity))


def exact_depth_from(A, B, C, T_i, opacity, counters: Optional[Counter] = None) -> float:
    """Root ``t <= t*`` of ``T_i (1 - opacity G(t)) = 0.5`` for one Gaussian."""
    t_med = -B / (2.0 * A)
    disc = B * B - 4.0 * A * (C + 2.0 * _log_ratio(T_i, opacity))
    if not disc >= 0.0:
        if counters is not None:
            counters["exact_depth_fallback"] += 1
        return t_med
    return t_med - math.sqrt(disc) / (2.0 * A)


def exact_depth(contribs, counters: Optional[Counter] = None) -> Optional[float]:
    """Depth where the opacity along the ray reaches 0.5 inside the median Gaussian."""
    alphas = [c.alpha for c in contribs]
    i = median_index(alphas)
    if i is None:
        return None
    T_i = float(transmittances(alphas[:i])[-1])
    c = contribs[i]
    return exact_depth_from(*c.abc, T_i, c.opacity, counters)


def exact_depth_offset(A, B, C, log_ratio) -> float:
    """Offset ``t_exact - t*`` as a function of the median Gaussian's coefficients."""
    return -math.sqrt(B * B - 4.0 * A * (C + 2.0 * log_ratio)) / (2.0 * A)


def exact_depth_gradient(contribs):
    """Gradient of the exact-depth offset w.r.t. the median Gaussian's ``(A, B, C)``.

    Transmittance and opacity enter only through the log ratio and are treated
    as constants (these gradients are detached in training).  Returns
    ``(index, (dA, dB, dC))`` or None when no surface exists.
    """
    alphas = [c.alpha for c in contribs]
    i = median_index(alphas)
    if i is None:
        return None
    A, B, C = contribs[i].abc
    T_i = float(transmittances(alphas[:i])[-1])
    lr = _log_ratio(T_i, contribs[i].opacity)
    root = math.sqrt(B * B - 4.0 * A * (C + 2.0 * lr))
    t_med = -B / (2.0 * A)
    dA = (B * B - 2.0 * A * (C + 2.0 * lr)) / (2.0 * A * A * root)
    return i, (dA, t_med / root, 1.0 / root)


def opacity_along_ray(contribs, t: float, alpha_min: float = 0.0) -> float:
    """Accumulated opacity at ray depth ``t``; independent of the order of ``contribs``."""
    T = 1.0
    O = 0.0
    for c in contribs:
        a = c.alpha_at(t)
        if a < alpha_min:
            continue
        O += a * T
        T *= 1.0 - a
    return O


def render_pixel(contribs, colors=None, depth_mode: str = "exact",
                 counters: Optional[Counter] = None) -> PixelOutputs:
    """Composite sorted contributions into color, depth and opacity."""
    color = np.zeros(3)
    T = 1.0
    for c in contribs:
        col = np.full(3, 0.5) if colors is None else np.asarray(colors[c.gaussian_index], dtype=np.float64)
        color += col * c.alpha * T
        T *= 1.0 - c.alpha
    depth = surface_depth(contribs, depth_mode, counters)
    if depth is None:
        acc = 1.0 - T
    else:
        acc = opacity_along_ray(contribs, depth)
    return PixelOutputs(color, depth, float(min(max(acc, 0.0), 1.0)), float(T))


def surface_depth(contribs, mode: str = "exact", counters=None) -> Optional[float]:
    if mode == "median":
        return median_depth(contribs)
    if mode == "exact":
        return exact_depth(contribs, counters)
    raise ValueError(f"unknown depth mode {mode!r}")


# ---------------------------------------------------------------------------
# opacity field


def opacity_at_point(views: ViewSet, x, alpha_min: float = ALPHA_MIN) -> float:
    """Minimum over observing views of the accumulated opacity at ``x`` (1 if unobserved)."""
    x = np.asarray(x, dtype=np.float64)
    best = 1.0
    for cam, cache in zip(views.cameras, views.caches):
        if not cam.in_frustum(x[None])[0]:
            continue
        v = x - cache.origin
        t = float(np.linalg.norm(v))
        d = v / t
        A, B, C = (arr[0] for arr in cache.abc(d[None]))
        t_star, alpha, keep = _contribution_arrays(A, B, C, cache.opacity, ALPHA_MIN)
        T = 1.0
        for g in np.flatnonzero(keep):
            s = min(t_star[g], t)
            a = cache.opacity[g] * math.exp(-0.5 * (A[g] * s * s + B[g] * s + C[g]))
            if a < alpha_min:
                continue
            T *= 1.0 - a
        best = min(best, 1.0 - T)
    return best


# ---------------------------------------------------------------------------
# image-space maps


def _pixel_contributions(cache: PrecomputedScene, dirs: np.ndarray, alpha_min=ALPHA_MIN):
    A, B, C = cache.abc(dirs)
    t_star, alpha, keep = _contribution_arrays(A, B, C, cache.opacity[None, :], alpha_min)
    return A, B, C, t_star, alpha, keep


def render_maps(scene, cam: Camera, mode: str = "exact", filter_scale: float = 0.0,
                counters: Optional[Counter] = None, alpha_max: float = 1.0) -> dict:
    """Depth, opacity-at-depth and color maps; "no surface" pixels hold ``nan`` depth."""
    scene = as_scene(scene)
    cache = precompute_scene(scene, cam, filter_scale)
    H, W = cam.height, cam.width
    depth = np.full(H * W, np.nan)
    opacity = np.zeros(H * W)
    color = np.zeros((H * W, 3))
    if len(scene):
        dirs = cam.pixel_directions().reshape(-1, 3)
        A, B, C, t_star, alpha, keep = _pixel_contributions(cache, dirs)
        for p in range(H * W):
            idx = np.flatnonzero(keep[p])
            if idx.size == 0:
                continue
            idx = idx[np.argsort(t_star[p, idx], kind="stable")]
            contribs = [RayContribution(int(g), t_star[p, g], min(alpha[p, g], alpha_max), (A[p, g], B[p, g], C[p, g]),
                                        cache.opacity[g]) for g in idx]
            out = render_pixel(contribs, scene.colors, mode, counters)
            color[p] = out.color
            opacity[p] = out.accumulated_opacity
            if out.depth is not None:
                depth[p] = out.depth
    return {"depth": depth.reshape(H, W), "opacity": opacity.reshape(H, W), "color": color.reshape(H, W, 3)}


def render_depth_map(scene, cam: Camera, mode: str = "exact", filter_scale: float = 0.0) -> np.ndarray:
    return render_maps(scene, cam, mode, filter_scale)["depth"]


def normal_from_depth(depth, cam: Camera) -> np.ndarray:
    """Per-pixel normals from central differences of back-projected depth.

    Normals face the camera.  Pixels lacking a valid 4-neighbourhood are ``nan``.
    """
    depth = np.asarray(depth, dtype=np.float64)
    X = cam.center + depth[..., None] * cam.pixel_directions()
    N = np.full(X.shape, np.nan)
    dx = X[1:-1, 2:] - X[1:-1, :-2]
    dy = X[2:, 1:-1] - X[:-2, 1:-1]
    n = np.cross(dx, dy)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = n / norm
    view = X[1:-1, 1:-1] - cam.center
    flip = np.einsum("...i,...i->...", n, view) > 0
    n[flip] *= -1
    ok = np.isfinite(n).all(-1) & (norm[..., 0] > 0)
    inner = N[1:-1, 1:-1]
    inner[ok] = n[ok]
    return N


def gaussian_normal(g: GaussianPrimitive, ray: Ray, t: float) -> np.ndarray:
    """Outward density-gradient direction at ``ray.at(t)``, flipped to face the ray origin."""
    x = ray.at(t)
    v = inverse_covariance(g) @ (x - g.position)
    n_len = np.linalg.norm(v)
    if n_len <= 1e-12 * max(1.0, float(np.max(1.0 / g.scale))):
        n = g.rotation_matrix[:, int(np.argmin(g.scale))].copy()
    else:
        n = v / n_len
    if n @ ray.direction > 0:
        n = -n
    return n
