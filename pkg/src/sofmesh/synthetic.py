"""Small procedural scenes and camera rigs for tests, benchmarks and demos."""

from __future__ import annotations

import math

import numpy as np

from .geometry import Camera, GaussianScene, rotmat_to_quat

SCENES = ("single", "shell", "random", "skewed")


def single_gaussian(opacity: float = 1.0, scale=(1.0, 1.0, 1.0), position=(0.0, 0.0, 0.0)) -> GaussianScene:
    return GaussianScene(
        np.array([position], dtype=np.float64),
        np.array([scale], dtype=np.float64),
        np.array([[1.0, 0.0, 0.0, 0.0]]),
        np.array([opacity], dtype=np.float64),
    )


def _tangent_frames(normals: np.ndarray) -> np.ndarray:
    """Rotation matrices whose third column is the given unit normal."""
    out = np.empty((len(normals), 3, 3))
    for i, n in enumerate(normals):
        helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(helper, n)
        u /= np.linalg.norm(u)
        out[i] = np.stack([u, np.cross(n, u), n], axis=1)
    return out


def shell_scene(count: int = 60, radius: float = 1.0, thickness: float = 0.05, opacity: float = 0.9,
                seed: int = 0) -> GaussianScene:
    """Flat Gaussians tangent to a sphere, roughly evenly spread (Fibonacci lattice)."""
    k = np.arange(count) + 0.5
    phi = np.arccos(1.0 - 2.0 * k / count)
    theta = math.pi * (1.0 + 5**0.5) * k
    normals = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    rng = np.random.default_rng(seed)
    patch = radius * math.sqrt(4.0 / count)
    scales = np.column_stack([np.full(count, patch), np.full(count, patch), np.full(count, thickness)])
    scales[:, :2] *= rng.uniform(0.9, 1.1, (count, 2))
    quats = np.array([rotmat_to_quat(R) for R in _tangent_frames(normals)])
    return GaussianScene(normals * radius, scales, quats, np.full(count, opacity),
                         np.clip(0.5 + 0.5 * normals, 0.0, 1.0))


def random_scene(count: int = 30, extent: float = 1.0, seed: int = 0, dead_fraction: float = 0.1) -> GaussianScene:
    """Random anisotropic Gaussians in a cube; a fraction have sub-threshold opacity."""
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-extent, extent, (count, 3))
    scales = extent * rng.uniform(0.05, 0.3, (count, 3))
    quats = rng.normal(size=(count, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opac = rng.uniform(0.3, 1.0, count)
    dead = rng.random(count) < dead_fraction
    opac[dead] = rng.uniform(0.0005, 0.0035, dead.sum())
    return GaussianScene(pos, scales, quats, opac, rng.uniform(0, 1, (count, 3)))


def orbit_cameras(count: int = 4, distance: float = 4.0, target=(0.0, 0.0, 0.0), fov_deg: float = 60.0,
                  width: int = 64, height: int = 64, elevation_deg: float = 20.0, near: float = 0.2,
                  far: float = 100.0) -> list:
    """Cameras evenly spaced on a ring, all looking at ``target``."""
    target = np.asarray(target, dtype=np.float64)
    el = math.radians(elevation_deg)
    cams = []
    for i in range(count):
        az = 2.0 * math.pi * i / count
        eye = target + distance * np.array([math.cos(az) * math.cos(el), math.sin(az) * math.cos(el), math.sin(el)])
        cams.append(Camera.look_at(eye, target, fov_deg=fov_deg, width=width, height=height, near=near, far=far,
                                   name=f"orbit{i}"))
    return cams


def orthogonal_cameras(distance: float = 12.0, half_extent: float = 6.0, width: int = 64, height: int = 64) -> list:
    """Three cameras on the -x, -y and -z axes whose frusta cover a cube of ``half_extent``."""
    # the cube's nearest face must fit in the image
    fov = 2.0 * math.degrees(math.atan(half_extent * math.sqrt(2.0) / (distance - half_extent)))
    cams = []
    for axis, up in ((0, (0.0, 0.0, 1.0)), (1, (0.0, 0.0, 1.0)), (2, (0.0, 1.0, 0.0))):
        eye = np.zeros(3)
        eye[axis] = -distance
        cams.append(Camera.look_at(eye, np.zeros(3), up, fov_deg=min(fov, 170.0), width=width, height=height,
                                   name="xyz"[axis]))
    return cams


def skewed_points(count: int = 4096, cam: Camera = None, hot_fraction: float = 0.9, seed: int = 0) -> np.ndarray:
    """Points crowded onto one pixel ray with a uniform background, for workload studies."""
    rng = np.random.default_rng(seed)
    hot = int(count * hot_fraction)
    ray = cam.pixel_ray(cam.width / 2 + 0.5, cam.height / 2 + 0.5)
    depths = rng.uniform(2.0, 6.0, hot)
    pts_hot = ray.origin + depths[:, None] * ray.direction
    px = rng.uniform(0, cam.width, count - hot)
    py = rng.uniform(0, cam.height, count - hot)
    dz = rng.uniform(2.0, 6.0, count - hot)
    bg = np.array([cam.pixel_ray(x, y).at(z) for x, y, z in zip(px, py, dz)]).reshape(-1, 3)
    return np.concatenate([pts_hot, bg])


def make_scene(name: str, seed: int = 0) -> GaussianScene:
    if name == "single":
        return single_gaussian()
    if name == "shell":
        return shell_scene(seed=seed)
    if name in ("random", "skewed"):
        return random_scene(seed=seed)
    raise ValueError(f"unknown synthetic scene {name!r}; choose from {SCENES}")


def make_cameras(name: str, count: int = 4) -> list:
    if name == "single":
        return orthogonal_cameras()
    return orbit_cameras(count)
