"""Sorted opacity fields over 3D Gaussian scenes and marching-tetrahedra mesh extraction."""

from .geometry import (
    ALPHA_MIN,
    Camera,
    GaussianPrimitive,
    GaussianScene,
    Ray,
    precompute,
    tight_bound,
)
from .field import (
    RayContribution,
    ViewSet,
    collect_contributions,
    exact_depth,
    median_depth,
    opacity_along_ray,
    opacity_at_point,
    render_pixel,
)
from .losses import LossWeights
from .mesher import Mesh, Strategies, extract_mesh
from .config import RunConfig

__version__ = "0.1.0"

__all__ = [
    "ALPHA_MIN", "Camera", "GaussianPrimitive", "GaussianScene", "Ray", "precompute", "tight_bound",
    "RayContribution", "ViewSet", "collect_contributions", "exact_depth", "median_depth", "opacity_along_ray",
    "opacity_at_point", "render_pixel", "LossWeights", "Mesh", "Strategies", "extract_mesh", "RunConfig",
]
