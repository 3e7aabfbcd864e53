"""Run configuration: one JSON-serializable source of defaults for every stage."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

from .geometry import ALPHA_MIN
from .losses import LossWeights
from .mesher import BOUNDING_RADII, Strategies
from .scheduling import BLOCK_SIZE, TILE_SIZE

DEPTH_MODES = ("exact", "median")
BOUNDINGS = ("stp",) + tuple(BOUNDING_RADII)
Z_MODES = ("diagonal", "eigen")


@dataclass(frozen=True)
class RunConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    bounded: bool = False
    depth_mode: str = "exact"
    bounding: str = "stp"
    cutoff: Optional[float] = ALPHA_MIN
    strategies: Strategies = field(default_factory=Strategies)
    tile_size: int = TILE_SIZE
    block_size: int = BLOCK_SIZE
    iterations: int = 8
    filter_scale: float = 0.0
    workers: int = 1
    seed: int = 0
    samples_per_gaussian: int = 0
    near: float = 0.2
    far: float = 100.0
    z_mode: str = "diagonal"
    alpha_max: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.depth_mode not in DEPTH_MODES:
            raise ValueError(f"depth_mode must be one of {DEPTH_MODES}")
        if self.bounding not in BOUNDINGS:
            raise ValueError(f"bounding must be one of {BOUNDINGS}")
        if self.z_mode not in Z_MODES:
            raise ValueError(f"z_mode must be one of {Z_MODES}")
        if self.cutoff is not None and not 0.0 <= self.cutoff <= ALPHA_MIN:
            raise ValueError("cutoff may only remove Gaussians that are never rendered (0 <= cutoff <= 1/255)")
        for name in ("tile_size", "block_size", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0 or self.samples_per_gaussian < 0:
            raise ValueError("iterations and samples_per_gaussian must be non-negative")
        if self.filter_scale < 0:
            raise ValueError("filter_scale must be non-negative")
        if not 0.0 < self.near < self.far:
            raise ValueError("require 0 < near < far")
        if not 0.0 < self.alpha_max <= 1.0:
            raise ValueError("alpha_max must lie in (0, 1]")

    @property
    def lambda_dist(self) -> float:
        return self.weights.lambda_dist(self.bounded)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "weights" in data:
            data["weights"] = LossWeights(**data["weights"])
        if "strategies" in data:
            data["strategies"] = Strategies(**data["strategies"])
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as f:
            return cls.from_json(f.read())

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())

    def override(self, **changes) -> "RunConfig":
        """Copy with the non-``None`` entries of ``changes`` applied."""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})
