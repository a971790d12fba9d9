"""Volumetric visual memory: per-frame point maps, coverage scoring, top-K view
retrieval, and instance-centric caching.

Frames are ranked by how much 3D volume of the queried region their points
touch (distinct voxels times voxel volume), not by raw point counts, so views
that see more of the underlying object win over views that stare at one spot.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bundle import SceneBundle, MaskRecord
from .geometry import (
    Aabb,
    AabbRegion,
    FrontRegion,
    Region,
    region_mask,
    _pack_cells,
)
from .lifting import Instance


@dataclass
class MemoryEntry:
    frame_index: int
    pointmap: np.ndarray  # (H, W, 3) scene-frame meters, NaN invalid
    rgb_path: Optional[Path] = None
    _points: Optional[np.ndarray] = field(default=None, repr=False)

    def points(self) -> np.ndarray:
        if self._points is None:
            flat = self.pointmap.reshape(-1, 3).astype(np.float64)
            self._points = flat[np.isfinite(flat).all(axis=1)]
        return self._points


@dataclass
class ViewCache:
    key: str
    k: int
    delta: float
    ranked: list[tuple[int, float]]  # (frame_index, coverage), non-increasing

    def frame_indices(self) -> list[int]:
        return [f for f, _ in self.ranked]

    def to_manifest(self) -> dict:
        return {
            "key": self.key,
            "K": self.k,
            "delta": self.delta,
            "frames": [{"index": f, "coverage": c} for f, c in self.ranked],
        }


def region_from_box(box: Aabb) -> AabbRegion:
    """The axis-aligned cuboid of a grounded box, used as retrieval region."""
    return AabbRegion(box=box)


def region_from_direction(x_ref: np.ndarray, direction: np.ndarray) -> FrontRegion:
    """Front-facing region for situated queries: 3 m deep, 3 m wide footprint,
    everything at least 0.1 m above the anchor."""
    return FrontRegion(anchor=x_ref, direction=direction)


def region_key(region: Region) -> str:
    if isinstance(region, AabbRegion):
        payload = "aabb:" + ",".join(
            repr(float(v)) for v in (*region.box.min_corner, *region.box.max_corner)
        )
    else:
        payload = "front:" + ",".join(
            repr(float(v))
            for v in (
                *region.anchor,
                *region.direction,
                region.depth,
                region.half_width,
                region.min_height,
            )
        )
    return "region:" + hashlib.sha1(payload.encode("utf-8")).hexdigest()[:12]


class VisualMemory:
    """Immutable frame memory plus a cache of ranked view sets."""

    def __init__(self, entries: Sequence[MemoryEntry], delta: float = 0.10):
        if delta <= 0:
            raise ValueError("retrieval voxel size must be positive")
        self.entries = list(entries)
        self.delta = float(delta)
        self.score_calls = 0
        self._caches: dict[str, ViewCache] = {}

    def coverage_score(self, entry: MemoryEntry, region: Region) -> float:
        """Volume of `region` touched by the entry's points: voxel count times
        voxel volume. Duplicated points change nothing."""
        self.score_calls += 1
        pts = entry.points()
        if pts.shape[0] == 0:
            return 0.0
        inside = pts[region_mask(region, pts)]
        if inside.shape[0] == 0:
            return 0.0
        keys = _pack_cells(np.floor(inside / self.delta).astype(np.int64))
        return self.delta**3 * int(np.unique(keys).size)

    def retrieve(self, region: Region, k: int, key: Optional[str] = None) -> ViewCache:
        """Top-k frames by coverage, ties broken by ascending frame index;
        zero-coverage frames never appear."""
        if k < 1:
            raise ValueError("k must be at least 1")
        scored = []
        for entry in self.entries:
            cov = self.coverage_score(entry, region)
            if cov > 0.0:
                scored.append((entry.frame_index, cov))
        scored.sort(key=lambda fc: (-fc[1], fc[0]))
        return ViewCache(
            key=key or region_key(region), k=k, delta=self.delta, ranked=scored[:k]
        )

    def cache_instance_views(self, instance: Instance, k: int) -> ViewCache:
        """Instance-conditioned retrieval with memoization keyed by id."""
        key = f"instance:{instance.id}"
        cached = self._caches.get(key)
        if cached is not None and cached.k == k:
            return cached
        cache = self.retrieve(region_from_box(instance.aabb), k, key=key)
        self._caches[key] = cache
        return cache

    def rgb_path_for(self, frame_index: int) -> Optional[Path]:
        for entry in self.entries:
            if entry.frame_index == frame_index:
                return entry.rgb_path
        return None


def build_memory(bundle: SceneBundle, delta: float = 0.10) -> VisualMemory:
    """Memory entries from a bundle; frames without a point map synthesize one
    from depth, intrinsics, and pose."""
    entries = []
    for frame in bundle.frames:
        if frame.pointmap is not None:
            pm = frame.pointmap
        else:
            depth = np.asarray(frame.depth, dtype=np.float64)
            h, w = depth.shape
            us, vs = np.meshgrid(np.arange(w), np.arange(h))
            valid = np.isfinite(depth) & (depth > 0)
            pm = np.full((h, w, 3), np.nan)
            d = depth[valid]
            pm[valid, 0] = d * (us[valid] - frame.intrinsics.cx) / frame.intrinsics.fx
            pm[valid, 1] = d * (vs[valid] - frame.intrinsics.cy) / frame.intrinsics.fy
            pm[valid, 2] = d
            if frame.pose is not None:
                flat = pm[valid]
                pm[valid] = flat @ frame.pose[:3, :3].T + frame.pose[:3, 3]
        entries.append(
            MemoryEntry(
                frame_index=frame.frame_index, pointmap=pm, rgb_path=frame.rgb_path
            )
        )
    return VisualMemory(entries, delta=delta)


def rank_frames_by_mask_area(
    masks: Sequence[MaskRecord], labels: Sequence[str], k: int
) -> ViewCache:
    """2D fallback ranking: total matching-mask pixel area per frame.

    Alternative retrieval strategy selectable by config; image-space area
    cannot tell whether a view actually covers the 3D region, which is why the
    volumetric ranking is the default.
    """
    wanted = set(labels)
    per_frame: dict[int, int] = {}
    for m in masks:
        if m.label in wanted:
            per_frame[m.frame_index] = per_frame.get(m.frame_index, 0) + m.area
    scored = [(f, float(a)) for f, a in per_frame.items() if a > 0]
    scored.sort(key=lambda fc: (-fc[1], fc[0]))
    return ViewCache(
        key="mask-area:" + ",".join(sorted(wanted)), k=k, delta=0.0, ranked=scored[:k]
    )
