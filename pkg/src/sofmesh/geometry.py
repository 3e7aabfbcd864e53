"""Gaussian primitives, cameras, rays and the per-Gaussian ray algebra.

A ray ``r(t) = o + t d`` is mapped into the local frame of a Gaussian, where the
Gaussian becomes the standard normal density.  Along the ray the density is a
1D Gaussian ``exp(-0.5 (A t^2 + B t + C))`` and everything downstream (sorting,
compositing, depth, losses) is phrased in terms of ``(A, B, C)``.

Conventions
-----------
* Quaternions are ``(w, x, y, z)`` and describe the local-to-world rotation
  ``R`` so that ``Sigma = R S S^T R^T``.  The world-to-local map is therefore
  ``S^-1 R^T (x - mu)``.
* Cameras store the world-to-view rigid transform.  View space is right handed
  with ``+z`` forward, ``+x`` right and ``+y`` down (pixel rows grow with y).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Render threshold: contributions with alpha below this are culled.
ALPHA_MIN = 1.0 / 255.0
#: Scales below this are clamped (optimizer outputs occasionally collapse).
MIN_SCALE = 1e-8
#: Bound radius of the "3.33 sigma" variant, i.e. the tight bound at opacity 1.
UNIT_OPACITY_BOUND = math.sqrt(2.0 * math.log(255.0))


class DegenerateRayError(ValueError):
    """Raised when a ray direction vanishes in Gaussian space."""


class NeverRenderedError(ValueError):
    """Raised for opacities below the render threshold (the primitive is dead)."""


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrix of a (not necessarily unit) quaternion ``(w, x, y, z)``.

    Accepts shape ``(4,)`` or ``(N, 4)``.
    """
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return R.reshape(q.shape[:-1] + (3, 3))


def rotmat_to_quat(R) -> np.ndarray:
    """Inverse of :func:`quat_to_rotmat` for a single proper rotation (w >= 0)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    return q if q[0] >= 0 else -q


def _vec3(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {np.shape(v)}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GaussianPrimitive:
    """One anisotropic 3D Gaussian with activated parameters."""

    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    opacity: float
    dc_color: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))

    def __post_init__(self):
        pos = _vec3(self.position, "position")
        scale = np.array(_vec3(self.scale, "scale"))
        if np.any(scale <= 0):
            raise ValueError("scale components must be positive")
        if np.any(scale < MIN_SCALE):
            warnings.warn(f"clamping degenerate scale {scale} to {MIN_SCALE}", RuntimeWarning)
            scale = np.maximum(scale, MIN_SCALE)
        scale.setflags(write=False)
        q = np.asarray(self.rotation, dtype=np.float64).reshape(-1)
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise ValueError("rotation must be a finite quaternion (w, x, y, z)")
        n = np.linalg.norm(q)
        if n == 0:
            raise ValueError("rotation quaternion is zero")
        if abs(n - 1.0) > 1e-9:
            q = q / n
        q.setflags(write=False)
        op = float(self.opacity)
        if not (0.0 <= op <= 1.0):
            raise ValueError(f"opacity must lie in [0, 1], got {op}")
        color = _vec3(self.dc_color, "dc_color")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "opacity", op)
        object.__setattr__(self, "dc_color", color)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_rotmat(self.rotation)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = _vec3(self.origin, "origin")
        d = np.array(_vec3(self.direction, "direction"))
        n = np.linalg.norm(d)
        if n == 0:
            raise DegenerateRayError("degenerate ray")
        if abs(n - 1.0) > 1e-12:
            d = d / n
        d.setflags(write=False)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Camera:
    """Pinhole camera.

    ``rotation`` and ``translation`` map world to view space:
    ``x_view = rotation @ x_world + translation``.
    """

    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.2
    far: float = 100.0
    name: str = ""

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3).copy()
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) <= 0:
            raise ValueError("camera rotation must be a proper orthonormal matrix")
        R.setflags(write=False)
        t = _vec3(self.translation, "translation")
        if not (0 < self.near < self.far):
            raise ValueError("camera planes must satisfy 0 < near < far")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ValueError("camera resolution must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        for k in ("fx", "fy", "cx", "cy", "near", "far"):
            object.__setattr__(self, k, float(getattr(self, k)))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), *, fov_deg=60.0, width=64, height=64,
                near=0.2, far=100.0, name="") -> "Camera":
        """Camera at ``eye`` looking at ``target`` with world ``up`` mapped to view ``-y``."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:
            up = np.array([1.0, 0.0, 0.0]) if abs(fwd[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
            right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        f = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
        return cls(R, -R @ eye, f, f, width / 2, height / 2, width, height, near, far, name)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_view(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def project(self, points):
        """Return pixel coordinates ``(u, v)`` and view depth ``z`` of world points."""
        pv = self.to_view(points)
        z = pv[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pv[..., 0] / z + self.cx
            v = self.fy * pv[..., 1] / z + self.cy
        return u, v, z

    def in_frustum(self, points) -> np.ndarray:
        u, v, z = self.project(points)
        return (z >= self.near) & (z <= self.far) & (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)

    def pixel_directions(self) -> np.ndarray:
        """Unit world-space directions through all pixel centers, shape ``(H, W, 3)``."""
        ys, xs = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        dv = np.stack([(xs + 0.5 - self.cx) / self.fx, (ys + 0.5 - self.cy) / self.fy, np.ones_like(xs)], -1)
        dv /= np.linalg.norm(dv, axis=-1, keepdims=True)
        return dv @ self.rotation

    def pixel_ray(self, px: float, py: float) -> Ray:
        dv = np.array([(px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0])
        return Ray(self.center, self.rotation.T @ (dv / np.linalg.norm(dv)))


class GaussianScene:
    """Struct-of-arrays container of activated Gaussians used by the vectorized paths."""

    def __init__(self, positions, scales, rotations, opacities, colors=None):
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        scales = np.asarray(scales, dtype=np.float64).reshape(n, 3)
        if np.any(scales <= 0) or not np.all(np.isfinite(scales)):
            raise ValueError("scales must be finite and positive")
        if np.any(scales < MIN_SCALE):
            warnings.warn("clamping degenerate scales", RuntimeWarning)
            scales = np.maximum(scales, MIN_SCALE)
        self.scales = scales
        rot = np.asarray(rotations, dtype=np.float64).reshape(n, 4)
        norms = np.linalg.norm(rot, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("zero quaternion")
        self.rotations = rot / norms
        self.opacities = np.asarray(opacities, dtype=np.float64).reshape(n)
        if np.any((self.opacities < 0) | (self.opacities > 1)):
            raise ValueError("opacities must lie in [0, 1]")
        self.colors = (np.full((n, 3), 0.5) if colors is None
                       else np.asarray(colors, dtype=np.float64).reshape(n, 3))
        for a in (self.positions, self.scales, self.rotations, self.opacities, self.colors):
            if not np.all(np.isfinite(a)):
                raise ValueError("scene contains non-finite values")
            a.setflags(write=False)
        self._R = None

    @classmethod
    def from_primitives(cls, gaussians: Iterable[GaussianPrimitive]) -> "GaussianScene":
        gs = list(gaussians)
        if not gs:
            return cls(np.zeros((0, 3)), np.ones((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)))
        return cls([g.position for g in gs], [g.scale for g in gs], [g.rotation for g in gs],
                   [g.opacity for g in gs], [g.dc_color for g in gs])

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(self.positions[i], self.scales[i], self.rotations[i],
                                 float(self.opacities[i]), self.colors[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def rotation_matrices(self) -> np.ndarray:
        if self._R is None:
            self._R = quat_to_rotmat(self.rotations) if len(self) else np.zeros((0, 3, 3))
        return self._R

    def inverse_covariances(self) -> np.ndarray:
        R = self.rotation_matrices
        inv_s2 = 1.0 / self.scales**2
        return np.einsum("nij,nj,nkj->nik", R, inv_s2, R)

    def covariances(self) -> np.ndarray:
        R = self.rotation_matrices
        return np.einsum("nij,nj,nkj->nik", R, self.scales**2, R)

    def subset(self, idx) -> "GaussianScene":
        idx = np.asarray(idx)
        return GaussianScene(self.positions[idx], self.scales[idx], self.rotations[idx],
                             self.opacities[idx], self.colors[idx])

    def with_filter(self, filter_scale: float) -> "GaussianScene":
        """Scene with the 3D smoothing filter ``Sigma + s I`` baked in (opacity compensated)."""
        if filter_scale == 0:
            return self
        if filter_scale < 0:
            raise ValueError("filter scale must be non-negative")
        s2 = self.scales**2
        new_scales = np.sqrt(s2 + filter_scale)
        ratio = np.sqrt(np.prod(s2, axis=1) / np.prod(s2 + filter_scale, axis=1))
        return GaussianScene(self.positions, new_scales, self.rotations, self.opacities * ratio, self.colors)


# ---------------------------------------------------------------------------
# scalar ray algebra


def covariance(g: GaussianPrimitive) -> np.ndarray:
    R = g.rotation_matrix
    S = np.diag(g.scale)
    return R @ S @ S.T @ R.T


def inverse_covariance(g: GaussianPrimitive) -> np.ndarray:
    R = g.rotation_matrix
    return R @ np.diag(1.0 / g.scale**2) @ R.T


def ray_to_gaussian_space(ray: Ray, g: GaussianPrimitive):
    """Map a ray into the Gaussian's standardized frame: ``(o_g, d_g)``."""
    M = (g.rotation_matrix / g.scale).T  # S^-1 R^T
    return M @ (ray.origin - g.position), M @ ray.direction


def abc(o_g, d_g):
    """Quadratic coefficients of the squared Mahalanobis distance along the ray."""
    o_g = np.asarray(o_g, dtype=np.float64)
    d_g = np.asarray(d_g, dtype=np.float64)
    A = float(d_g @ d_g)
    if A == 0.0:
        raise DegenerateRayError("degenerate ray")
    return A, float(2.0 * d_g @ o_g), float(o_g @ o_g)


def eval_1d(A, B, C, t):
    return np.exp(-0.5 * (A * t * t + B * t + C))


def peak_t(A, B):
    return -B / (2.0 * A)


def peak_value(A, B, C):
    return np.exp(-0.5 * (C - B * B / (4.0 * A)))


def resort_depth(ray: Ray, g: GaussianPrimitive) -> float:
    """Depth of maximum contribution computed directly from the inverse covariance."""
    P = inverse_covariance(g)
    d = ray.direction
    return float(d @ P @ (g.position - ray.origin) / (d @ P @ d))


def tight_bound(opacity: float) -> float:
    """Mahalanobis radius beyond which ``opacity * G`` drops below 1/255."""
    if opacity < ALPHA_MIN:
        raise NeverRenderedError(f"opacity {opacity} is below the render threshold")
    return math.sqrt(max(2.0 * math.log(255.0 * opacity), 0.0))


def tight_bounds(opacities) -> np.ndarray:
    """Vectorized :func:`tight_bound`; dead primitives get ``nan``."""
    op = np.asarray(opacities, dtype=np.float64)
    out = np.full(op.shape, np.nan)
    live = op >= ALPHA_MIN
    out[live] = np.sqrt(np.maximum(2.0 * np.log(255.0 * op[live]), 0.0))
    return out


def filtered_opacity(g: GaussianPrimitive, filter_scale: float) -> float:
    if filter_scale < 0:
        raise ValueError("filter scale must be non-negative")
    if filter_scale == 0:
        return g.opacity
    s2 = g.scale**2
    return g.opacity * math.sqrt(float(np.prod(s2) / np.prod(s2 + filter_scale)))


def z_extent(cov_world: np.ndarray, cam: Camera, mode: str = "diagonal") -> float:
    """View-space z standard deviation used by the min-z bound.

    ``"diagonal"`` is the exact z half-extent of the unit Mahalanobis ellipsoid;
    ``"eigen"`` uses the largest eigenvalue, which is never smaller.
    """
    cov_view = cam.rotation @ cov_world @ cam.rotation.T
    if mode == "diagonal":
        return math.sqrt(cov_view[2, 2])
    if mode == "eigen":
        return math.sqrt(float(np.linalg.eigvalsh(cov_view)[-1]))
    raise ValueError(f"unknown z-extent mode {mode!r}")


def min_z(g: GaussianPrimitive, cam: Camera, mode: str = "diagonal") -> float:
    """Smallest view depth at which ``g`` can still reach the render threshold."""
    E = tight_bound(g.opacity)
    z_mu = float(cam.to_view(g.position)[2])
    return z_mu - E * z_extent(covariance(g), cam, mode)


@dataclass(frozen=True)
class PrecomputedGaussian:
    """Per (Gaussian, camera) cache: ten values for the 1D evaluation plus bounds."""

    inv_cov: tuple  # (xx, xy, xz, yy, yz, zz)
    b_vec: np.ndarray
    c_scalar: float
    tight_bound: float
    min_z: float
    filtered_opacity: float

    def matrix(self) -> np.ndarray:
        xx, xy, xz, yy, yz, zz = self.inv_cov
        return np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]])

    def abc(self, direction):
        """``(A, B, C)`` for a ray leaving the camera center along ``direction``."""
        d = np.asarray(direction, dtype=np.float64)
        xx, xy, xz, yy, yz, zz = self.inv_cov
        x, y, z = d
        A = xx * x * x + yy * y * y + zz * z * z + 2.0 * (xy * x * y + xz * x * z + yz * y * z)
        if A == 0.0:
            raise DegenerateRayError("degenerate ray")
        return float(A), float(2.0 * (d @ self.b_vec)), self.c_scalar


def precompute(g: GaussianPrimitive, cam: Camera, filter_scale: float = 0.0,
               z_mode: str = "diagonal") -> PrecomputedGaussian:
    vals = np.concatenate([g.position, g.scale, g.rotation, [g.opacity]])
    if not np.all(np.isfinite(vals)) or not np.all(np.isfinite(cam.center)):
        raise ValueError("non-finite input")
    if filter_scale:
        s2 = g.scale**2 + filter_scale
        g = GaussianPrimitive(g.position, np.sqrt(s2), g.rotation, filtered_opacity(g, filter_scale), g.dc_color)
    P = inverse_covariance(g)
    delta = cam.center - g.position
    b = P @ delta
    op = g.opacity
    if op >= ALPHA_MIN:
        E = tight_bound(op)
        zmin = float(cam.to_view(g.position)[2]) - E * z_extent(covariance(g), cam, z_mode)
    else:
        E, zmin = float("nan"), float("inf")
    b.setflags(write=False)
    return PrecomputedGaussian(
        (P[0, 0], P[0, 1], P[0, 2], P[1, 1], P[1, 2], P[2, 2]), b, float(delta @ b), E, zmin, op)


@dataclass
class PrecomputedScene:
    """Vectorized :class:`PrecomputedGaussian` for a whole scene and one camera.

    Dead primitives (opacity below 1/255) carry ``tight_bound = nan`` and
    ``min_z = +inf``; they can never contribute.
    """

    origin: np.ndarray
    inv_cov: np.ndarray  # (N, 3, 3)
    b_vec: np.ndarray  # (N, 3)
    c_scalar: np.ndarray  # (N,)
    tight_bound: np.ndarray
    min_z: np.ndarray
    opacity: np.ndarray
    view_depth: np.ndarray  # view z of each center

    def __len__(self):
        return len(self.c_scalar)

    def abc(self, directions, idx=None):
        """``(A, B, C)`` arrays of shape ``(P, G)`` for ``P`` unit directions."""
        P = self.inv_cov if idx is None else self.inv_cov[idx]
        b = self.b_vec if idx is None else self.b_vec[idx]
        c = self.c_scalar if idx is None else self.c_scalar[idx]
        d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        A = np.einsum("pi,gij,pj->pg", d, P, d)
        B = 2.0 * d @ b.T
        return A, B, np.broadcast_to(c, A.shape)


def precompute_scene(scene: GaussianScene, cam: Camera, filter_scale: float = 0.0,
                     z_mode: str = "diagonal") -> PrecomputedScene:
    if filter_scale:
        scene = scene.with_filter(filter_scale)
    o = cam.center
    P = scene.inverse_covariances()
    delta = o[None, :] - scene.positions
    b = np.einsum("nij,nj->ni", P, delta)
    c = np.einsum("ni,ni->n", delta, b)
    E = tight_bounds(scene.opacities)
    zc = cam.to_view(scene.positions)[:, 2] if len(scene) else np.zeros(0)
    cov_view = np.einsum("ij,njk,lk->nil", cam.rotation, scene.covariances(), cam.rotation)
    if z_mode == "diagonal":
        ext = np.sqrt(cov_view[:, 2, 2])
    elif z_mode == "eigen":
        ext = np.sqrt(np.linalg.eigvalsh(cov_view)[:, -1]) if len(scene) else np.zeros(0)
    else:
        raise ValueError(f"unknown z-extent mode {z_mode!r}")
    zmin = np.where(np.isnan(E), np.inf, zc - np.nan_to_num(E) * ext)
    return PrecomputedScene(o, P, b, c, E, zmin, scene.opacities.copy(), zc)


def box_corners(scene: GaussianScene, radius) -> np.ndarray:
    """Corners of each Gaussian's oriented box of half-size ``radius * scale``, shape ``(N, 8, 3)``."""
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
    r = np.broadcast_to(np.asarray(radius, dtype=np.float64), (len(scene),))
    local = signs[None, :, :] * (scene.scales * r[:, None])[:, None, :]
    return scene.positions[:, None, :] + np.einsum("nij,nkj->nki", scene.rotation_matrices, local)


def as_scene(gaussians: GaussianScene | Sequence[GaussianPrimitive]) -> GaussianScene:
    return gaussians if isinstance(gaussians, GaussianScene) else GaussianScene.from_primitives(gaussians)
