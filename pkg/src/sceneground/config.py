"""Engine configuration: one JSON document covering every module's knobs."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .lifting import CleanConfig
from .maskproc import FilterConfig


@dataclass(frozen=True)
class AssociationConfig:
    tau: float = 0.25  # containment-overlap merge threshold
    voxel: float = 0.05  # association grid resolution, meters
    min_support: int = 50  # minimum points for an instance to survive refinement
    bev_merge_iou: float = 0.5  # BEV footprint IoU for category-wise merging

    def __post_init__(self) -> None:
        if not (0.0 < self.tau <= 1.0):
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.voxel <= 0:
            raise ValueError("association voxel must be positive")
        if self.min_support < 1:
            raise ValueError("min_support must be at least 1")
        if not (0.0 < self.bev_merge_iou <= 1.0):
            raise ValueError("bev_merge_iou must be in (0, 1]")


@dataclass(frozen=True)
class RetrievalConfig:
    voxel: float = 0.10  # retrieval grid resolution, meters
    k: int = 4
    strategy: str = "3d"  # "3d" volumetric coverage | "2d" mask-area fallback

    def __post_init__(self) -> None:
        if self.voxel <= 0:
            raise ValueError("retrieval voxel must be positive")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.strategy not in ("3d", "2d"):
            raise ValueError(f"strategy must be '3d' or '2d', got {self.strategy!r}")


@dataclass(frozen=True)
class BoxFitConfig:
    angle_step_deg: float = 1.0
    trim_fraction: float = 0.02

    def __post_init__(self) -> None:
        if self.angle_step_deg <= 0:
            raise ValueError("angle_step_deg must be positive")
        if not (0.0 <= self.trim_fraction < 0.5):
            raise ValueError("trim_fraction must lie in [0, 0.5)")

    @property
    def angle_step(self) -> float:
        return math.radians(self.angle_step_deg)


@dataclass(frozen=True)
class SessionLimits:
    max_steps: int = 12
    coding_rounds: int = 5  # executor invocations per coding dispatch
    client_retries: int = 2
    retry_backoff_s: float = 0.5  # base of the exponential backoff
    executor_timeout_s: float = 20.0
    browse_sample: int = 8

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.coding_rounds < 1:
            raise ValueError("coding_rounds must be at least 1")
        if self.client_retries < 0 or self.retry_backoff_s < 0:
            raise ValueError("retry settings must be non-negative")
        if self.executor_timeout_s <= 0:
            raise ValueError("executor timeout must be positive")
        if self.browse_sample < 1:
            raise ValueError("browse_sample must be at least 1")


@dataclass(frozen=True)
class EngineConfig:
    association: AssociationConfig = field(default_factory=AssociationConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    filtering: FilterConfig = field(default_factory=FilterConfig)
    cleaning: CleanConfig = field(default_factory=CleanConfig)
    box_fit: BoxFitConfig = field(default_factory=BoxFitConfig)
    limits: SessionLimits = field(default_factory=SessionLimits)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "EngineConfig":
        kwargs = {}
        for f in fields(cls):
            section = doc.get(f.name)
            if section is None:
                kwargs[f.name] = f.default_factory()
            else:
                known = {x.name for x in fields(f.default_factory)}
                unknown = set(section) - known
                if unknown:
                    raise ValueError(
                        f"unknown keys in config section {f.name!r}: {sorted(unknown)}"
                    )
                kwargs[f.name] = f.default_factory(**section)
        unknown_sections = set(doc) - {f.name for f in fields(cls)}
        if unknown_sections:
            raise ValueError(f"unknown config sections: {sorted(unknown_sections)}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Path) -> "EngineConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(doc)

    def dump(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
