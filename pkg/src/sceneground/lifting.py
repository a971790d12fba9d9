"""2D-mask lifting, point-set cleanup, and cross-frame instance association.

Masks become scene-frame point sets (point-map lookup when available,
otherwise depth back-projection plus the camera pose), get cleaned, and are
greedily merged into persistent instances gated by label and voxel overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .bundle import FrameRecord, Intrinsics
from .geometry import (
    Aabb,
    DegenerateGeometry,
    VoxelSet,
    YawBox,
    bev_iou,
    containment_overlap,
    fit_yaw_box,
    voxelize,
    _pack_cells,
)


@dataclass(frozen=True)
class CleanConfig:
    subsample_voxel: float = 0.02
    outlier_k: int = 16
    outlier_std_ratio: float = 2.0
    cluster_cell: float = 0.05
    min_points: int = 30

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")


@dataclass
class Instance:
    """A consolidated 3D object hypothesis accumulated across frames."""

    id: int
    label: str
    points: np.ndarray  # (N, 3) scene-frame meters
    voxels: VoxelSet
    aabb: Aabb
    frames: set[int]
    box: Optional[YawBox] = None


@dataclass
class Decision:
    frame: int
    label: str
    decision: str  # "merged" | "created"
    target_id: int
    score: float

    def to_json(self) -> dict:
        return {
            "frame": self.frame,
            "label": self.label,
            "decision": self.decision,
            "target_id": self.target_id,
            "score": self.score,
        }


def backproject(
    depth: np.ndarray, intrinsics: Intrinsics, mask: np.ndarray
) -> np.ndarray:
    """Back-project mask pixels with valid depth into the camera frame.

    Each pixel (u, v) with finite depth d > 0 yields
    (d*(u-cx)/fx, d*(v-cy)/fy, d); zero, negative, and non-finite depths emit
    nothing. Points come out in row-major pixel order.
    """
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if depth.shape != mask.shape:
        raise ValueError(f"depth {depth.shape} and mask {mask.shape} differ")
    v, u = np.nonzero(mask)
    d = depth[v, u]
    valid = np.isfinite(d) & (d > 0)
    u, v, d = u[valid], v[valid], d[valid]
    x = d * (u - intrinsics.cx) / intrinsics.fx
    y = d * (v - intrinsics.cy) / intrinsics.fy
    return np.stack([x, y, d], axis=1)


def _resample_mask(mask: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if mask.shape == shape:
        return mask
    hp, wp = shape
    h, w = mask.shape
    rows = np.floor(np.arange(hp) * h / hp).astype(int)
    cols = np.floor(np.arange(wp) * w / wp).astype(int)
    return mask[np.ix_(rows, cols)]


def lift_mask_points(frame: FrameRecord, mask: np.ndarray) -> np.ndarray:
    """Scene-frame points for a mask: point-map lookup or depth back-projection.

    Masks are nearest-neighbor resampled to the point-map resolution when the
    two differ. Without a point map, depth back-projection is transformed by
    the frame pose (identity when absent).
    """
    if frame.pointmap is not None:
        resampled = _resample_mask(np.asarray(mask, dtype=bool), frame.pointmap.shape[:2])
        pts = frame.pointmap[resampled].astype(np.float64)
        return pts[np.isfinite(pts).all(axis=1)]
    if frame.depth is not None:
        pts = backproject(frame.depth, frame.intrinsics, mask)
        if frame.pose is not None:
            pts = pts @ frame.pose[:3, :3].T + frame.pose[:3, 3]
        return pts
    raise ValueError(f"frame {frame.frame_index} has neither pointmap nor depth")


def subsample_by_voxel(points: np.ndarray, cell: float) -> np.ndarray:
    """One centroid per occupied cell, ordered by cell index."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return pts
    keys = _pack_cells(np.floor(pts / cell).astype(np.int64))
    uniq, inverse = np.unique(keys, return_inverse=True)
    sums = np.zeros((uniq.size, 3))
    np.add.at(sums, inverse, pts)
    counts = np.bincount(inverse, minlength=uniq.size).astype(np.float64)
    return sums / counts[:, None]


def drop_statistical_outliers(
    points: np.ndarray, k: int, std_ratio: float
) -> np.ndarray:
    """k-NN statistical filter: drop points whose mean neighbor distance
    exceeds the global mean by std_ratio standard deviations."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if n <= 2:
        return pts
    kk = min(k, n - 1)
    dists, _ = cKDTree(pts).query(pts, k=kk + 1)
    means = dists[:, 1:].mean(axis=1)  # drop the zero self-distance
    threshold = means.mean() + std_ratio * means.std()
    return pts[means <= threshold]


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


_NEIGHBOR_OFFSETS = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) > (0, 0, 0)  # half of the 26-neighborhood; unions are symmetric
]


def largest_grid_cluster(
    points: np.ndarray, cell: float, min_points: int
) -> np.ndarray:
    """Largest 26-connected component on the occupancy grid at `cell`.

    Returns the member points in input order, or an empty array when the
    largest component has fewer than min_points points. Equal-size ties go to
    the component containing the lexicographically smallest cell index.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return pts
    keys = _pack_cells(np.floor(pts / cell).astype(np.int64))
    uniq, inverse = np.unique(keys, return_inverse=True)
    uf = _UnionFind(uniq.size)
    for dx, dy, dz in _NEIGHBOR_OFFSETS:
        delta = (dx << 42) + (dy << 21) + dz
        neighbor = uniq + delta
        pos = np.searchsorted(uniq, neighbor)
        pos = np.clip(pos, 0, uniq.size - 1)
        hit = uniq[pos] == neighbor
        for i in np.nonzero(hit)[0]:
            uf.union(int(i), int(pos[i]))

    roots = np.array([uf.find(int(i)) for i in range(uniq.size)])
    point_roots = roots[inverse]
    labels, counts = np.unique(point_roots, return_counts=True)
    best_count = counts.max()
    candidates = labels[counts == best_count]
    if candidates.size == 1:
        winner = candidates[0]
    else:
        # tie: smallest cell key wins; packing preserves lexicographic order
        winner = min(candidates, key=lambda r: uniq[roots == r].min())
    if best_count < min_points:
        return np.empty((0, 3))
    return pts[point_roots == winner]


def clean_points(points: np.ndarray, cfg: CleanConfig) -> np.ndarray:
    """Subsample, drop statistical outliers, keep the largest grid cluster."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return pts
    pts = subsample_by_voxel(pts, cfg.subsample_voxel)
    pts = drop_statistical_outliers(pts, cfg.outlier_k, cfg.outlier_std_ratio)
    return largest_grid_cluster(pts, cfg.cluster_cell, cfg.min_points)


def _dedup_points(points: np.ndarray) -> np.ndarray:
    return np.unique(points, axis=0)


def associate(
    store: list[Instance],
    points: np.ndarray,
    label: str,
    frame_index: int,
    tau: float,
    voxel: float,
) -> Decision:
    """Merge a cleaned cluster into the best same-label instance or create one.

    Candidates are same-label instances whose AABB intersects the cluster's;
    the best containment-overlap score wins when it reaches tau. The store is
    updated in place.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("cannot associate an empty cluster")
    cluster_voxels = voxelize(pts, voxel)
    cluster_aabb = Aabb.from_points(pts)

    best_id, best_score = None, 0.0
    for inst in store:  # ascending id order; strict > keeps the lowest id on ties
        if inst.label != label or not inst.aabb.intersects(cluster_aabb):
            continue
        score = containment_overlap(cluster_voxels, inst.voxels)
        if score > best_score:
            best_id, best_score = inst.id, score

    if best_id is not None and best_score >= tau:
        inst = next(i for i in store if i.id == best_id)
        merged = _dedup_points(np.vstack([inst.points, pts]))
        inst.points = merged
        inst.voxels = voxelize(merged, voxel)
        inst.aabb = Aabb.from_points(merged)
        inst.frames.add(frame_index)
        return Decision(frame_index, label, "merged", best_id, best_score)

    new_id = max((i.id for i in store), default=-1) + 1
    store.append(
        Instance(
            id=new_id,
            label=label,
            points=_dedup_points(pts),
            voxels=cluster_voxels,
            aabb=cluster_aabb,
            frames={frame_index},
        )
    )
    return Decision(frame_index, label, "created", new_id, best_score)


def _fit_box_safe(points: np.ndarray, aabb: Aabb, angle_step: float, trim: float) -> YawBox:
    try:
        return fit_yaw_box(points, angle_step=angle_step, trim_fraction=trim)
    except DegenerateGeometry:
        size = np.maximum(aabb.size, 1e-9)
        return YawBox(center=aabb.center, size=size, yaw=0.0)


def refine_instances(
    store: Sequence[Instance],
    min_support: int,
    angle_step: float,
    trim_fraction: float,
) -> list[Instance]:
    """Drop weakly supported instances, relabel contiguously, fit yaw boxes."""
    survivors = sorted(
        (i for i in store if len(i.points) >= min_support), key=lambda i: i.id
    )
    out = []
    for new_id, inst in enumerate(survivors):
        box = _fit_box_safe(inst.points, inst.aabb, angle_step, trim_fraction)
        out.append(replace(inst, id=new_id, box=box, frames=set(inst.frames)))
    return out


def bev_merge(
    store: Sequence[Instance],
    iou_threshold: float,
    voxel: float,
    angle_step: float,
    trim_fraction: float,
) -> list[Instance]:
    """Merge same-label instances whose BEV footprints overlap enough.

    Merging runs over connected components of the IoU >= threshold graph, so
    chains consolidate transitively and the result does not depend on pair
    order. Output ids are contiguous again.
    """
    insts = sorted(store, key=lambda i: i.id)
    uf = _UnionFind(len(insts))
    for i in range(len(insts)):
        for j in range(i + 1, len(insts)):
            if insts[i].label != insts[j].label:
                continue
            if insts[i].box is None or insts[j].box is None:
                continue
            if bev_iou(insts[i].box, insts[j].box) >= iou_threshold:
                uf.union(i, j)

    groups: dict[int, list[Instance]] = {}
    for i, inst in enumerate(insts):
        groups.setdefault(uf.find(i), []).append(inst)

    merged: list[Instance] = []
    for root in sorted(groups):
        members = groups[root]
        if len(members) == 1:
            merged.append(members[0])
            continue
        pts = _dedup_points(np.vstack([m.points for m in members]))
        frames = set().union(*(m.frames for m in members))
        aabb = Aabb.from_points(pts)
        merged.append(
            Instance(
                id=members[0].id,
                label=members[0].label,
                points=pts,
                voxels=voxelize(pts, voxel),
                aabb=aabb,
                frames=frames,
                box=_fit_box_safe(pts, aabb, angle_step, trim_fraction),
            )
        )

    merged.sort(key=lambda i: i.id)
    return [replace(inst, id=new_id) for new_id, inst in enumerate(merged)]
