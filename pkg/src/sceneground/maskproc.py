"""Per-frame 2D mask post-processing.

Confidence/area/margin filtering, greedy same-label duplicate suppression,
mirror-reflection absorption, and cross-label overlap resolution through a
re-prompting segmenter. All operations return new records; inputs are never
mutated.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
from PIL import Image

from .bundle import MaskRecord


@dataclass(frozen=True)
class FilterConfig:
    min_confidence: float = 0.5
    min_area_fraction: float = 0.001  # drop below 0.1% of the image
    margin_fraction: float = 0.05  # border band width per side
    max_margin_coverage: float = 0.5  # drop when more than half sits in the band
    dup_iou: float = 0.8
    mirror_overlap: float = 0.5  # strict: removal needs ratio > this
    reprompt_min_fraction: float = 0.0005  # conflicts below this go to the larger mask

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name}={value} outside [0, 1]")


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = int(np.logical_and(a, b).sum())
    union = int(np.logical_or(a, b).sum())
    return inter / union if union else 0.0


def _margin_band(height: int, width: int, margin_fraction: float) -> np.ndarray:
    bh = int(round(margin_fraction * height))
    bw = int(round(margin_fraction * width))
    band = np.zeros((height, width), dtype=bool)
    if bh > 0:
        band[:bh, :] = True
        band[height - bh:, :] = True
    if bw > 0:
        band[:, :bw] = True
        band[:, width - bw:] = True
    return band


def filter_masks(
    masks: Sequence[MaskRecord],
    image_dims: tuple[int, int],
    cfg: FilterConfig,
) -> list[MaskRecord]:
    """Drop low-confidence, tiny, and border-hugging masks.

    image_dims is (height, width). A mask is removed when its confidence is
    below min_confidence, its area is below min_area_fraction of the image, or
    more than max_margin_coverage of its pixels lie inside the
    margin_fraction border band.
    """
    height, width = image_dims
    band = _margin_band(height, width, cfg.margin_fraction)
    min_area = cfg.min_area_fraction * height * width
    kept = []
    for m in masks:
        if m.mask.shape != (height, width):
            raise ValueError(
                f"mask for frame {m.frame_index} is {m.mask.shape}, "
                f"expected {(height, width)}"
            )
        if m.confidence < cfg.min_confidence:
            continue
        area = m.area
        if area < min_area:
            continue
        in_band = int(np.logical_and(m.mask, band).sum())
        if in_band / area > cfg.max_margin_coverage:
            continue
        kept.append(m)
    return kept


def suppress_duplicates(
    masks: Sequence[MaskRecord], dup_iou: float
) -> list[MaskRecord]:
    """Greedy same-label suppression within each frame.

    Masks of one (frame, label) group are visited in descending area (ties by
    input position); a mask is dropped when its IoU with an already retained
    mask exceeds dup_iou. Retained pairs therefore all satisfy IoU <= dup_iou.
    """
    groups: dict[tuple[int, str], list[tuple[int, MaskRecord]]] = {}
    for pos, m in enumerate(masks):
        groups.setdefault((m.frame_index, m.label), []).append((pos, m))

    retained: list[tuple[int, MaskRecord]] = []
    for key in sorted(groups, key=lambda k: (k[0], k[1])):
        group = sorted(groups[key], key=lambda pm: (-pm[1].area, pm[0]))
        kept_here: list[tuple[int, MaskRecord]] = []
        for pos, m in group:
            if any(mask_iou(m.mask, k.mask) > dup_iou for _, k in kept_here):
                continue
            kept_here.append((pos, m))
        retained.extend(kept_here)

    retained.sort(key=lambda pm: pm[0])
    return [m for _, m in retained]


def apply_mirror_policy(
    masks: Sequence[MaskRecord],
    mirror_masks: Sequence[MaskRecord],
    mirror_overlap: float,
) -> list[MaskRecord]:
    """Remove masks primarily explained by a mirror reflection.

    A mask goes when the fraction of its pixels covered by some mirror mask is
    strictly greater than mirror_overlap; mirror masks themselves pass through
    untouched on the caller's side.
    """
    if not mirror_masks:
        return list(masks)
    out = []
    for m in masks:
        area = m.area
        if area == 0:
            out.append(m)
            continue
        absorbed = False
        for mm in mirror_masks:
            if mm.frame_index != m.frame_index:
                continue
            inter = int(np.logical_and(m.mask, mm.mask).sum())
            if inter / area > mirror_overlap:
                absorbed = True
                break
        if not absorbed:
            out.append(m)
    return out


@dataclass
class SegmentProposal:
    confidence: float
    mask: Optional[np.ndarray] = None  # crop-sized raster, optional


class SegmenterError(Exception):
    """The segmenter backend could not answer a re-query."""


class Segmenter(Protocol):
    def segment(
        self, image: np.ndarray, bounds: tuple[int, int, int, int], label: str
    ) -> list[SegmentProposal]:
        """Proposals for `label` inside crop bounds (u0, v0, u1, v1)."""
        ...


def request_key(bounds: tuple[int, int, int, int], label: str) -> str:
    """Stable key for a (crop bounds, label) re-query; used by file stubs."""
    u0, v0, u1, v1 = bounds
    payload = f"{u0},{v0},{u1},{v1}|{label}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


class FileStubSegmenter:
    """Canned responses from a directory, keyed by request hash.

    Each response is `<key>.json` with {"proposals": [{"confidence": c,
    "mask": "relative.png" | null}, ...]}. A missing key raises
    SegmenterError, which resolve_overlaps treats as an unresolved conflict.
    """

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def segment(self, image, bounds, label):
        path = self.directory / f"{request_key(bounds, label)}.json"
        if not path.is_file():
            raise SegmenterError(f"no canned response for bounds={bounds} label={label!r}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        proposals = []
        for p in doc.get("proposals", []):
            raster = None
            if p.get("mask"):
                with Image.open(self.directory / p["mask"]) as im:
                    raster = np.asarray(im.convert("L")) > 0
            proposals.append(SegmentProposal(confidence=float(p["confidence"]), mask=raster))
        return proposals


def write_stub_response(
    directory: Path,
    bounds: tuple[int, int, int, int],
    label: str,
    confidences: Sequence[float],
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{request_key(bounds, label)}.json"
    doc = {"proposals": [{"confidence": float(c), "mask": None} for c in confidences]}
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


@dataclass
class ResolveResult:
    masks: list[MaskRecord]
    unresolved: list[dict]  # conflicts the segmenter could not arbitrate
    ties: list[dict]  # equal-confidence conflicts broken by original area


def _bounds_of(region: np.ndarray) -> tuple[int, int, int, int]:
    rows, cols = np.nonzero(region)
    return int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1


def resolve_overlaps(
    masks: Sequence[MaskRecord],
    frame_image: np.ndarray,
    segmenter: Segmenter,
    cfg: FilterConfig,
) -> ResolveResult:
    """Assign cross-label overlap regions to the most confident re-query.

    Conflicting pairs are visited in descending initial-overlap order. Regions
    below reprompt_min_fraction of the image go to the larger mask without a
    re-query. One resolution pass only; masks falling below the area floor
    afterwards are dropped.
    """
    height, width = frame_image.shape[:2]
    rasters = [m.mask.copy() for m in masks]
    areas0 = [m.area for m in masks]
    unresolved: list[dict] = []
    ties: list[dict] = []

    pairs = []
    for i in range(len(masks)):
        for j in range(i + 1, len(masks)):
            if masks[i].label == masks[j].label:
                continue
            overlap = int(np.logical_and(rasters[i], rasters[j]).sum())
            if overlap:
                pairs.append((-overlap, i, j))
    pairs.sort()

    min_region = cfg.reprompt_min_fraction * height * width
    for _, i, j in pairs:
        region = np.logical_and(rasters[i], rasters[j])
        size = int(region.sum())
        if size == 0:
            continue
        bounds = _bounds_of(region)
        if size < min_region:
            loser = j if areas0[i] >= areas0[j] else i
            rasters[loser] &= ~region
            continue
        try:
            conf_i = max(
                (p.confidence for p in segmenter.segment(frame_image, bounds, masks[i].label)),
                default=0.0,
            )
            conf_j = max(
                (p.confidence for p in segmenter.segment(frame_image, bounds, masks[j].label)),
                default=0.0,
            )
        except SegmenterError as exc:
            unresolved.append(
                {"labels": [masks[i].label, masks[j].label], "bounds": bounds, "error": str(exc)}
            )
            continue
        if conf_i == conf_j:
            winner = i if areas0[i] >= areas0[j] else j
            ties.append(
                {"labels": [masks[i].label, masks[j].label], "bounds": bounds, "confidence": conf_i}
            )
        else:
            winner = i if conf_i > conf_j else j
        loser = j if winner == i else i
        rasters[loser] &= ~region

    min_area = cfg.min_area_fraction * height * width
    out = []
    for m, raster in zip(masks, rasters):
        if int(raster.sum()) < min_area:
            continue
        out.append(replace(m, mask=raster))
    return ResolveResult(masks=out, unresolved=unresolved, ties=ties)
