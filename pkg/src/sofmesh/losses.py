"""Training-side losses with analytic gradients.

Every loss returns a :class:`LossResult` holding the scalar value and a dict of
gradients keyed by input name.  Per-sample arrays follow front-to-back order.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .field import SURFACE_LEVEL, median_index, opacity_along_ray
from .geometry import tight_bounds

# |B| below this marks a camera sitting inside the Gaussian footprint
B_EPS = 1e-12

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class LossWeights:
    lambda_dist_unbounded: float = 100.0
    lambda_dist_bounded: float = 1000.0
    lambda_normal: float = 0.05
    lambda_ext: float = 0.1
    lambda_opa: float = 0.04
    lambda_smooth: float = 0.01
    activation_iteration: int = 15000

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"{k} must be non-negative")

    def lambda_dist(self, bounded: bool = False) -> float:
        return self.lambda_dist_bounded if bounded else self.lambda_dist_unbounded


@dataclass
class LossResult:
    value: float
    grads: Dict[str, np.ndarray] = field(default_factory=dict)
    skipped: int = 0


@dataclass
class RaySamples:
    """Per-Gaussian quantities of one pixel ray in front-to-back order."""

    alpha: np.ndarray
    t: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    E: np.ndarray  # tight bound per sample
    near: float = 0.2
    far: float = 100.0

    def __post_init__(self):
        for k in ("alpha", "t", "A", "B", "C", "E"):
            setattr(self, k, np.asarray(getattr(self, k), dtype=np.float64).reshape(-1))
        n = len(self.alpha)
        if any(len(getattr(self, k)) != n for k in ("t", "A", "B", "C", "E")):
            raise ValueError("sample arrays must share one length")

    @classmethod
    def from_contributions(cls, contribs, near=0.2, far=100.0) -> "RaySamples":
        abc = np.array([c.abc for c in contribs], dtype=np.float64).reshape(-1, 3)
        return cls(
            np.array([c.alpha for c in contribs]),
            np.array([c.t_star for c in contribs]),
            abc[:, 0], abc[:, 1], abc[:, 2],
            tight_bounds([c.opacity for c in contribs]),
            near, far,
        )

    def __len__(self):
        return len(self.alpha)

    @property
    def transmittance(self) -> np.ndarray:
        """``T_i`` before each sample."""
        return np.concatenate([[1.0], np.cumprod(1.0 - self.alpha)[:-1]]) if len(self) else np.zeros(0)

    @property
    def weights(self) -> np.ndarray:
        return self.alpha * self.transmittance

    @property
    def ndc(self) -> np.ndarray:
        return ndc_map(self.t, self.near, self.far)[0]


def ndc_map(t, near: float, far: float):
    """Map ray depth to ``[0, 1]`` between the planes; returns ``(d, dd/dt)``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise ValueError("ndc_map requires t > 0")
    d = far * (t - near) / (t * (far - near))
    deriv = far * near / ((far - near) * t * t)
    return d, deriv


# ---------------------------------------------------------------------------
# shared weight backward


def weights_backward(alpha, dL_dw) -> np.ndarray:
    """Chain ``dL/dw_i`` to ``dL/dalpha_k`` for ``w_i = alpha_i T_i``, front to back.

    Uses ``dL/dalpha_k = T_k h_k - S_k / (1 - alpha_k)`` with ``S_k`` the
    suffix sum of ``w_i h_i`` for ``i > k`` taken as total minus prefix.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    h = np.asarray(dL_dw, dtype=np.float64)
    n = len(alpha)
    out = np.zeros(n)
    T = 1.0
    wh_total = 0.0
    T_fwd = 1.0
    for i in range(n):
        wh_total += alpha[i] * T_fwd * h[i]
        T_fwd *= 1.0 - alpha[i]
    prefix = 0.0
    for k in range(n):
        w = alpha[k] * T
        prefix += w * h[k]
        rest = wh_total - prefix
        one_minus = 1.0 - alpha[k]
        if one_minus > 1e-12:
            out[k] = T * h[k] - rest / one_minus
        else:
            out[k] = T * h[k] - _suffix_without(alpha, h, k)
        T *= one_minus
    return out


def _suffix_without(alpha, h, k) -> float:
    # sum over i > k of alpha_i h_i prod_{j<i, j != k} (1 - alpha_j)
    T = float(np.prod(1.0 - alpha[:k]))
    s = 0.0
    for i in range(k + 1, len(alpha)):
        s += alpha[i] * T * h[i]
        T *= 1.0 - alpha[i]
    return s


def weight_jacobian(alpha) -> np.ndarray:
    """Dense ``dw_i/dalpha_k`` built from explicit products (quadratic reference)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    n = len(alpha)
    J = np.zeros((n, n))
    for i in range(n - 1, -1, -1):
        for k in range(i + 1):
            others = [1.0 - alpha[j] for j in range(i) if j != k]
            prod = float(np.prod(others)) if others else 1.0
            J[i, k] = prod if k == i else -alpha[i] * prod
    return J


# ---------------------------------------------------------------------------
# distortion


def distortion_loss(samples: RaySamples, detach: bool = False) -> LossResult:
    """Pairwise depth distortion ``sum_ij w_i w_j (d_i - d_j)^2`` over all ordered pairs.

    The forward pass keeps running sums of ``w``, ``w d`` and ``w d^2``; the
    backward pass walks front to back, recovering suffix sums by subtracting
    prefixes from totals.  ``detach`` drops the gradient through the weights.
    """
    w = samples.weights
    d, dd_dt = ndc_map(samples.t, samples.near, samples.far) if len(samples) else (np.zeros(0), np.zeros(0))
    acc_w = acc_wd = acc_wdd = 0.0
    half = 0.0
    for i in range(len(w)):
        half += w[i] * (d[i] * d[i] * acc_w + acc_wdd - 2.0 * d[i] * acc_wd)
        acc_w += w[i]
        acc_wd += w[i] * d[i]
        acc_wdd += w[i] * d[i] * d[i]
    value = 2.0 * half

    n = len(w)
    grad_alpha = np.zeros(n)
    grad_d = 4.0 * w * (d * acc_w - acc_wd)
    if not detach:
        pre_w = pre_wd = pre_wdd = 0.0
        T = 1.0
        alpha = samples.alpha
        for k in range(n):
            g_k = 2.0 * (d[k] * d[k] * acc_w + acc_wdd - 2.0 * d[k] * acc_wd)
            pre_w += w[k]
            pre_wd += w[k] * d[k]
            pre_wdd += w[k] * d[k] * d[k]
            rest = 2.0 * (acc_w * (acc_wdd - pre_wdd) + acc_wdd * (acc_w - pre_w) - 2.0 * acc_wd * (acc_wd - pre_wd))
            one_minus = 1.0 - alpha[k]
            if one_minus > 1e-12:
                grad_alpha[k] = T * g_k - rest / one_minus
            else:
                h = 2.0 * (d * d * acc_w + acc_wdd - 2.0 * d * acc_wd)
                grad_alpha[k] = T * g_k - _suffix_without(alpha, h, k)
            T *= one_minus
    return LossResult(value, {"alpha": grad_alpha, "d": grad_d, "t": grad_d * dd_dt})


def distortion_loss_reference(samples: RaySamples, detach: bool = False) -> LossResult:
    """Direct double sum with a quadratic back-to-front gradient."""
    w = samples.weights
    d, dd_dt = ndc_map(samples.t, samples.near, samples.far) if len(samples) else (np.zeros(0), np.zeros(0))
    diff = d[:, None] - d[None, :]
    value = float(np.sum(w[:, None] * w[None, :] * diff * diff))
    g = 2.0 * np.sum(w[None, :] * diff * diff, axis=1)
    grad_d = 4.0 * np.sum(w[:, None] * w[None, :] * diff, axis=1)
    grad_alpha = np.zeros(len(w))
    if not detach:
        J = weight_jacobian(samples.alpha)
        for i in range(len(w) - 1, -1, -1):
            grad_alpha += g[i] * J[i]
    return LossResult(value, {"alpha": grad_alpha, "d": grad_d, "t": grad_d * dd_dt})


# ---------------------------------------------------------------------------
# depth-normal consistency


def depth_normal_loss(samples: RaySamples, normals, pixel_normal) -> LossResult:
    """``sum_i w_i (1 - n_i . N)``; a pixel without a valid normal contributes nothing."""
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    if pixel_normal is None or not np.all(np.isfinite(pixel_normal)):
        return LossResult(0.0, {"alpha": np.zeros(len(samples)), "w": np.zeros(len(samples)),
                                "normals": np.zeros_like(n), "pixel_normal": np.zeros(3)}, skipped=1)
    N = np.asarray(pixel_normal, dtype=np.float64)
    w = samples.weights
    h = 1.0 - n @ N
    return LossResult(
        float(np.sum(w * h)),
        {
            "w": h,
            "alpha": weights_backward(samples.alpha, h),
            "normals": -w[:, None] * N[None, :],
            "pixel_normal": -(w[:, None] * n).sum(axis=0),
        },
    )


# ---------------------------------------------------------------------------
# extent


def extent_terms(A, B, C, E2):
    """Per-sample ``2 A sqrt(D) / B^2`` and its partials; ``D = B^2 - 4A(C - E^2)``.

    Returns ``(f, dA, dB, dC, dE2, valid)``; invalid samples carry zeros.
    """
    A, B, C, E2 = (np.asarray(v, dtype=np.float64) for v in (A, B, C, E2))
    D = B * B - 4.0 * A * (C - E2)
    valid = (D > 0) & (np.abs(B) >= B_EPS)
    Bs = np.where(valid, B, 1.0)
    rD = np.sqrt(np.where(valid, D, 1.0))
    f = 2.0 * A * rD / (Bs * Bs)
    dA = 2.0 * rD / Bs**2 - 4.0 * A * (C - E2) / (Bs**2 * rD)
    dB = 2.0 * A / (Bs * rD) - 4.0 * A * rD / Bs**3
    dC = -4.0 * A * A / (Bs**2 * rD)
    z = np.zeros_like(f)
    return (np.where(valid, f, z), np.where(valid, dA, z), np.where(valid, dB, z),
            np.where(valid, dC, z), np.where(valid, -dC, z), valid)


def extent_loss(samples: RaySamples, counters: Optional[Counter] = None) -> LossResult:
    """Weighted NDC-space length of each Gaussian's visible segment along the ray."""
    k = samples.far * samples.near / (samples.far - samples.near)
    f, dA, dB, dC, dE2, valid = extent_terms(samples.A, samples.B, samples.C, samples.E**2)
    skipped = int(np.count_nonzero(~valid))
    if counters is not None and skipped:
        counters["extent_skipped"] += skipped
    w = samples.weights
    h = k * f
    return LossResult(
        float(np.sum(w * h)),
        {"w": h, "alpha": weights_backward(samples.alpha, h), "A": k * w * dA, "B": k * w * dB,
         "C": k * w * dC, "E2": k * w * dE2},
        skipped,
    )


# ---------------------------------------------------------------------------
# opacity supervision


def _alpha_hat(contribs, t):
    return np.array([c.alpha_at(t) for c in contribs], dtype=np.float64)


def opacity_at_depth_two_pass(contribs, depth: float, split: Optional[int] = None) -> float:
    """Opacity at ``depth`` as ``O_k + T_k * suffix`` split at the median index ``k``.

    The first pass locates ``k`` and blends the suffix ``i >= k``; the second
    pass stops at ``k`` and yields the prefix opacity and transmittance.
    """
    if split is None:
        split = median_index([c.alpha for c in contribs])
        if split is None:
            split = len(contribs)
    suffix = 0.0
    T_suf = 1.0
    for c in contribs[split:]:
        a = c.alpha_at(depth)
        suffix += a * T_suf
        T_suf *= 1.0 - a
    O_k = 0.0
    T_k = 1.0
    for c in contribs[:split]:
        a = c.alpha_at(depth)
        O_k += a * T_k
        T_k *= 1.0 - a
    return O_k + T_k * suffix


def opacity_supervision_loss(contribs, depth: Optional[float]) -> LossResult:
    """``(O(depth) - 0.5)^2`` with gradients w.r.t. each clamped-depth alpha and opacity.

    ``depth`` is treated as a constant.  A missing depth yields zero loss.
    """
    n = len(contribs)
    if depth is None:
        return LossResult(0.0, {"alpha_hat": np.zeros(n), "opacity": np.zeros(n)}, skipped=1)
    O = opacity_at_depth_two_pass(contribs, depth)
    a = _alpha_hat(contribs, depth)
    one_minus = 1.0 - a
    prefix = np.concatenate([[1.0], np.cumprod(one_minus)[:-1]]) if n else np.zeros(0)
    suffix = np.concatenate([np.cumprod(one_minus[::-1])[::-1][1:], [1.0]]) if n else np.zeros(0)
    r = O - SURFACE_LEVEL
    g_hat = 2.0 * r * prefix * suffix
    G = np.array([c.alpha_at(depth) / c.opacity for c in contribs]) if n else np.zeros(0)
    return LossResult(r * r, {"alpha_hat": g_hat, "opacity": g_hat * G})


def opacity_supervision_reference(contribs, depth: Optional[float]) -> float:
    if depth is None:
        return 0.0
    return (opacity_along_ray(contribs, depth) - SURFACE_LEVEL) ** 2


# ---------------------------------------------------------------------------
# normal smoothness


def normal_smoothness_loss(normal_map, image, per_channel: bool = False) -> LossResult:
    """Mean of ``|grad N| exp(-|grad I|)`` with forward differences.

    Pixels whose normal or forward neighbours are invalid (``nan``) are skipped.
    ``per_channel`` uses all color channels for the image gradient instead of
    luminance.
    """
    N = np.asarray(normal_map, dtype=np.float64)
    img = np.asarray(image, dtype=np.float64)
    if img.shape[:2] != N.shape[:2]:
        raise ValueError("normal map and image must share resolution")
    if img.ndim == 2:
        img = img[..., None]
    elif not per_channel and img.shape[-1] == 3:
        img = (img @ LUMA)[..., None]
    H, W = N.shape[:2]
    grad = np.zeros_like(N)
    if H < 2 or W < 2:
        return LossResult(0.0, {"normal_map": grad})
    c = N[:-1, :-1]
    dx = N[:-1, 1:] - c
    dy = N[1:, :-1] - c
    ok = np.isfinite(c).all(-1) & np.isfinite(dx).all(-1) & np.isfinite(dy).all(-1)
    dx = np.where(ok[..., None], dx, 0.0)
    dy = np.where(ok[..., None], dy, 0.0)
    mag = np.sqrt((dx * dx).sum(-1) + (dy * dy).sum(-1))
    ix = img[:-1, 1:] - img[:-1, :-1]
    iy = img[1:, :-1] - img[:-1, :-1]
    weight = np.exp(-np.sqrt((ix * ix).sum(-1) + (iy * iy).sum(-1)))
    count = int(ok.sum())
    if count == 0:
        return LossResult(0.0, {"normal_map": grad}, skipped=H * W)
    value = float(np.sum(mag * weight * ok)) / count
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(ok & (mag > 0), weight / np.where(mag > 0, mag, 1.0), 0.0)[..., None] / count
    gx = scale * dx
    gy = scale * dy
    grad[:-1, 1:] += gx
    grad[1:, :-1] += gy
    grad[:-1, :-1] -= gx + gy
    return LossResult(value, {"normal_map": grad}, skipped=H * W - count)


# ---------------------------------------------------------------------------
# total


def rgb_loss(rendered, target) -> float:
    return float(np.mean(np.abs(np.asarray(rendered, dtype=np.float64) - np.asarray(target, dtype=np.float64))))


def total_loss(rendered, target, aux: Dict[str, float], weights: LossWeights = LossWeights(),
               iteration: int = 0, bounded: bool = False) -> float:
    """L1 color loss plus weighted auxiliary terms once training passes the activation iteration.

    ``aux`` maps ``dist``, ``normal``, ``ext``, ``opa`` and ``smooth`` to scalar
    loss values; missing keys count as zero.
    """
    value = rgb_loss(rendered, target)
    if iteration < weights.activation_iteration:
        return value
    lam = {
        "dist": weights.lambda_dist(bounded),
        "normal": weights.lambda_normal,
        "ext": weights.lambda_ext,
        "opa": weights.lambda_opa,
        "smooth": weights.lambda_smooth,
    }
    unknown = set(aux) - set(lam)
    if unknown:
        raise KeyError(f"unknown loss terms {sorted(unknown)}")
    return value + sum(lam[k] * float(aux.get(k, 0.0)) for k in lam)


def ray_losses(contribs, depth: Optional[float], normals: Sequence, pixel_normal, near=0.2, far=100.0,
               counters: Optional[Counter] = None) -> Dict[str, float]:
    """Per-ray auxiliary loss values for sorted contributions."""
    samples = RaySamples.from_contributions(contribs, near, far)
    return {
        "dist": distortion_loss(samples).value,
        "normal": depth_normal_loss(samples, normals, pixel_normal).value,
        "ext": extent_loss(samples, counters).value,
        "opa": opacity_supervision_loss(contribs, depth).value,
    }
