"""Voxel sets, overlap scoring, boxes, BEV math, and query regions.

Pure geometry used by every other module. All coordinates are meters in a
right-handed scene frame with +z up; BEV means projection onto the x-y plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

# Packed voxel keys: (x + _BIAS) << 42 | (y + _BIAS) << 21 | (z + _BIAS).
# Indices must stay in (-2^20, 2^20); at 5 cm resolution that is +-52 km.
_BIAS = 1 << 20
_SHIFT = 21
_MASK = (1 << _SHIFT) - 1


class DegenerateGeometry(ValueError):
    """Input points do not span enough dimensions for the operation."""


def _pack_cells(idx: np.ndarray) -> np.ndarray:
    if idx.size and (np.abs(idx) >= _BIAS).any():
        raise ValueError("voxel index out of supported range (|i| < 2^20)")
    shifted = idx.astype(np.int64) + _BIAS
    return (shifted[:, 0] << (2 * _SHIFT)) | (shifted[:, 1] << _SHIFT) | shifted[:, 2]


def _unpack_cells(keys: np.ndarray) -> np.ndarray:
    x = (keys >> (2 * _SHIFT)) - _BIAS
    y = ((keys >> _SHIFT) & _MASK) - _BIAS
    z = (keys & _MASK) - _BIAS
    return np.stack([x, y, z], axis=1)


@dataclass(frozen=True)
class VoxelSet:
    """Occupied cells of the grid with side `resolution`, anchored at the origin."""

    resolution: float
    keys: np.ndarray = field(repr=False)  # sorted unique packed indices

    def __len__(self) -> int:
        return int(self.keys.size)

    @property
    def cells(self) -> frozenset[tuple[int, int, int]]:
        return frozenset(map(tuple, _unpack_cells(self.keys).tolist()))

    def intersection_size(self, other: "VoxelSet") -> int:
        return int(np.intersect1d(self.keys, other.keys, assume_unique=True).size)


def voxelize(points: np.ndarray, resolution: float) -> VoxelSet:
    """Map points to the set of grid cells floor(p / resolution) they occupy."""
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.isfinite(pts).all():
        raise ValueError("voxelize requires finite points")
    idx = np.floor(pts / resolution).astype(np.int64)
    keys = np.unique(_pack_cells(idx))
    return VoxelSet(resolution=float(resolution), keys=keys)


def containment_overlap(a: VoxelSet, b: VoxelSet) -> float:
    """Bidirectional containment score max(|A∩B|/|A|, |A∩B|/|B|).

    Scores 1.0 whenever one set is contained in the other, which is what makes
    partially observed fragments of the same object merge reliably.
    """
    if a.resolution != b.resolution:
        raise ValueError(
            f"voxel resolution mismatch: {a.resolution} vs {b.resolution}"
        )
    if len(a) == 0 or len(b) == 0:
        raise ValueError("containment overlap of an empty voxel set is undefined")
    inter = a.intersection_size(b)
    return max(inter / len(a), inter / len(b))


@dataclass
class Aabb:
    """Axis-aligned box given by min/max corners."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self) -> None:
        self.min_corner = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        self.max_corner = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        if (self.min_corner > self.max_corner).any():
            raise ValueError("Aabb requires min <= max componentwise")

    @classmethod
    def from_points(cls, points: np.ndarray) -> "Aabb":
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] == 0:
            raise ValueError("cannot bound an empty point set")
        return cls(pts.min(axis=0), pts.max(axis=0))

    @property
    def center(self) -> np.ndarray:
        return (self.min_corner + self.max_corner) / 2.0

    @property
    def size(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    def intersects(self, other: "Aabb") -> bool:
        return bool(
            (self.min_corner <= other.max_corner).all()
            and (other.min_corner <= self.max_corner).all()
        )

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.logical_and(
            (pts >= self.min_corner).all(axis=1), (pts <= self.max_corner).all(axis=1)
        )


def canonical_yaw(yaw: float) -> float:
    """Reduce a rectangle yaw to [0, pi/2) using the 90-degree symmetry."""
    return float(yaw % (math.pi / 2.0))


@dataclass
class YawBox:
    """3D box rotated about +z only: center, (length, width, height), yaw.

    Length runs along the yawed x axis, width along the yawed y axis. Yaw is
    canonicalized to [0, pi/2); a quarter-turn swaps length and width.
    """

    center: np.ndarray
    size: np.ndarray
    yaw: float

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.size = np.asarray(self.size, dtype=np.float64).reshape(3)
        if (self.size <= 0).any():
            raise ValueError("YawBox size components must be positive")
        raw = float(self.yaw) % math.pi
        if raw >= math.pi / 2.0:
            raw -= math.pi / 2.0
            self.size = self.size[[1, 0, 2]]
        self.yaw = raw

    def corners_bev(self) -> np.ndarray:
        """Footprint corners in the x-y plane, counter-clockwise."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        ex = np.array([c, s]) * (self.size[0] / 2.0)
        ey = np.array([-s, c]) * (self.size[1] / 2.0)
        ctr = self.center[:2]
        return np.array([ctr - ex - ey, ctr + ex - ey, ctr + ex + ey, ctr - ex + ey])

    def enclosing_aabb(self) -> Aabb:
        bev = self.corners_bev()
        zlo = self.center[2] - self.size[2] / 2.0
        zhi = self.center[2] + self.size[2] / 2.0
        mn = np.array([bev[:, 0].min(), bev[:, 1].min(), zlo])
        mx = np.array([bev[:, 0].max(), bev[:, 1].max(), zhi])
        return Aabb(mn, mx)


def _trimmed_extent(values: np.ndarray, trim: float) -> tuple[float, float]:
    if trim <= 0.0:
        return float(values.min()), float(values.max())
    lo, hi = np.quantile(values, [trim, 1.0 - trim])
    return float(lo), float(hi)


def fit_yaw_box(
    points: np.ndarray,
    angle_step: float = math.radians(1.0),
    trim_fraction: float = 0.02,
) -> YawBox:
    """Fit the minimum trimmed-area enclosing rectangle over yaw candidates.

    Candidate yaws are the grid {0, angle_step, ...} below pi/2; for each, the
    BEV points are derotated and a per-side percentile trim (trim_fraction on
    each side of each axis) gives the rectangle extents. The yaw with the
    smallest trimmed area wins; ties break toward the smaller angle. Height is
    the trimmed z extent.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise DegenerateGeometry("yaw box fit needs at least 3 points")
    if not (0.0 <= trim_fraction < 0.5):
        raise ValueError("trim_fraction must lie in [0, 0.5)")
    if angle_step <= 0:
        raise ValueError("angle_step must be positive")

    xy = pts[:, :2]
    centered = xy - xy.mean(axis=0)
    # Singular values of the centered BEV cloud; a vanishing second value
    # means collinear or coincident points and no meaningful rectangle.
    sv = np.sqrt(np.maximum(np.linalg.eigvalsh(centered.T @ centered), 0.0))
    if sv[0] <= 1e-7 * max(sv[1], 1e-12):
        raise DegenerateGeometry("BEV projection is collinear or coincident")

    angles = np.arange(0.0, math.pi / 2.0 - 1e-12, angle_step)
    best = None
    for theta in angles:
        c, s = math.cos(theta), math.sin(theta)
        qx = xy[:, 0] * c + xy[:, 1] * s
        qy = -xy[:, 0] * s + xy[:, 1] * c
        x_lo, x_hi = _trimmed_extent(qx, trim_fraction)
        y_lo, y_hi = _trimmed_extent(qy, trim_fraction)
        area = (x_hi - x_lo) * (y_hi - y_lo)
        if best is None or area < best[0]:
            best = (area, theta, x_lo, x_hi, y_lo, y_hi)

    _, yaw, x_lo, x_hi, y_lo, y_hi = best
    z_lo, z_hi = _trimmed_extent(pts[:, 2], trim_fraction)
    cx_r, cy_r = (x_lo + x_hi) / 2.0, (y_lo + y_hi) / 2.0
    c, s = math.cos(yaw), math.sin(yaw)
    center = np.array(
        [cx_r * c - cy_r * s, cx_r * s + cy_r * c, (z_lo + z_hi) / 2.0]
    )
    eps = 1e-9  # degenerate thin extents still need a valid box
    size = np.array(
        [max(x_hi - x_lo, eps), max(y_hi - y_lo, eps), max(z_hi - z_lo, eps)]
    )
    return YawBox(center=center, size=size, yaw=yaw)


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_halfplane(poly: list, a: np.ndarray, b: np.ndarray) -> list:
    """Keep the part of `poly` left of the directed edge a->b."""
    edge = b - a
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        side_p = edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])
        side_q = edge[0] * (q[1] - a[1]) - edge[1] * (q[0] - a[0])
        if side_p >= 0:
            out.append(p)
            if side_q < 0:
                t = side_p / (side_p - side_q)
                out.append(p + t * (q - p))
        elif side_q > 0:
            t = side_p / (side_p - side_q)
            out.append(p + t * (q - p))
    return out


def convex_intersection_area(poly_a: np.ndarray, poly_b: np.ndarray) -> float:
    """Area of the intersection of two convex CCW polygons."""
    clipped = [np.asarray(p, dtype=np.float64) for p in poly_a]
    vb = np.asarray(poly_b, dtype=np.float64)
    for i in range(len(vb)):
        clipped = _clip_halfplane(clipped, vb[i], vb[(i + 1) % len(vb)])
        if not clipped:
            return 0.0
    return _polygon_area(np.asarray(clipped))


def _bev_footprint(box: Union[YawBox, Aabb]) -> np.ndarray:
    if isinstance(box, YawBox):
        return box.corners_bev()
    mn, mx = box.min_corner, box.max_corner
    return np.array(
        [[mn[0], mn[1]], [mx[0], mn[1]], [mx[0], mx[1]], [mn[0], mx[1]]]
    )


def bev_iou(a: Union[YawBox, Aabb], b: Union[YawBox, Aabb]) -> float:
    """Intersection-over-union of the two boxes' BEV footprints."""
    fa, fb = _bev_footprint(a), _bev_footprint(b)
    area_a, area_b = _polygon_area(fa), _polygon_area(fb)
    if area_a == 0.0 or area_b == 0.0:
        return 0.0
    inter = convex_intersection_area(fa, fb)
    return inter / (area_a + area_b - inter)


@dataclass
class AabbRegion:
    """Query region: the cuboid of an axis-aligned box."""

    box: Aabb


@dataclass
class FrontRegion:
    """Query region: cuboid in front of `anchor` along the horizontal heading.

    A point p with d = p - anchor is inside when 0 <= d.e_front <= depth,
    |d.e_lat| <= half_width, and d.e_up >= min_height, where e_front is the
    normalized horizontal projection of `direction`. There is no upper height
    bound.
    """

    anchor: np.ndarray
    direction: np.ndarray
    depth: float = 3.0
    half_width: float = 1.5
    min_height: float = 0.1

    def __post_init__(self) -> None:
        self.anchor = np.asarray(self.anchor, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if math.hypot(self.direction[0], self.direction[1]) == 0.0:
            raise ValueError("front region direction needs a horizontal component")

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        horiz = np.array([self.direction[0], self.direction[1], 0.0])
        e_front = horiz / np.linalg.norm(horiz)
        e_lat = np.array([-e_front[1], e_front[0], 0.0])
        e_up = np.array([0.0, 0.0, 1.0])
        return e_front, e_lat, e_up


Region = Union[AabbRegion, FrontRegion]


def region_mask(region: Region, points: np.ndarray) -> np.ndarray:
    """Vectorized membership test; returns a boolean mask over the rows."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if isinstance(region, AabbRegion):
        return region.box.contains(pts)
    e_front, e_lat, _ = region.axes()
    d = pts - region.anchor
    front = d @ e_front
    lat = d @ e_lat
    up = d[:, 2]
    return (
        (front >= 0.0)
        & (front <= region.depth)
        & (np.abs(lat) <= region.half_width)
        & (up >= region.min_height)
    )


def region_membership(region: Region, point: np.ndarray) -> bool:
    return bool(region_mask(region, np.asarray(point).reshape(1, 3))[0])
