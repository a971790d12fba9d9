"""End-to-end grounding: bundle masks -> filtered 2D masks -> 3D instances.

Per frame: confidence/area/margin filtering, same-label duplicate
suppression, mirror absorption, optional cross-label re-prompting; then each
surviving mask is lifted, cleaned, and associated into the instance store.
A final pass drops weak instances, assigns contiguous ids, fits yaw boxes,
and merges same-label BEV duplicates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .bundle import SceneBundle
from .config import EngineConfig
from .lifting import (
    Decision,
    Instance,
    associate,
    bev_merge,
    clean_points,
    lift_mask_points,
    refine_instances,
)
from .maskproc import (
    Segmenter,
    apply_mirror_policy,
    filter_masks,
    resolve_overlaps,
    suppress_duplicates,
)

MIRROR_LABEL = "mirror"


@dataclass
class GroundingResult:
    instances: list[Instance]
    decisions: list[Decision]
    notes: list[str] = field(default_factory=list)


def ground_labels(
    bundle: SceneBundle,
    labels: Sequence[str],
    config: EngineConfig,
    segmenter: Optional[Segmenter] = None,
) -> GroundingResult:
    """Ground every requested label across all frames of the bundle."""
    label_set = {str(l) for l in labels}
    if not label_set:
        raise ValueError("at least one label is required")

    cfg = config.filtering
    store: list[Instance] = []
    decisions: list[Decision] = []
    notes: list[str] = []

    for frame in bundle.frames:
        frame_masks = bundle.masks_for_frame(frame.frame_index)
        targets = [m for m in frame_masks if m.label in label_set]
        if not targets:
            continue
        dims = (frame.height, frame.width)

        kept = filter_masks(targets, dims, cfg)
        kept = suppress_duplicates(kept, cfg.dup_iou)

        # Mirror masks absorb reflections of other labels; a mirror that was
        # itself requested still goes through lifting below.
        mirrors = [
            m
            for m in frame_masks
            if m.label == MIRROR_LABEL and m.confidence >= cfg.min_confidence
        ]
        if mirrors:
            non_mirror = [m for m in kept if m.label != MIRROR_LABEL]
            absorbed_count = len(non_mirror)
            non_mirror = apply_mirror_policy(non_mirror, mirrors, cfg.mirror_overlap)
            absorbed_count -= len(non_mirror)
            if absorbed_count:
                notes.append(
                    f"frame {frame.frame_index}: {absorbed_count} mask(s) absorbed by mirrors"
                )
            kept = non_mirror + [m for m in kept if m.label == MIRROR_LABEL]

        if segmenter is not None and len({m.label for m in kept}) > 1:
            resolved = resolve_overlaps(kept, frame.load_rgb(), segmenter, cfg)
            kept = resolved.masks
            for item in resolved.unresolved:
                notes.append(
                    f"frame {frame.frame_index}: unresolved overlap {item['labels']}"
                )
            for item in resolved.ties:
                notes.append(
                    f"frame {frame.frame_index}: re-query tie {item['labels']}, kept larger mask"
                )

        for m in kept:
            points = lift_mask_points(frame, m.mask)
            cleaned = clean_points(points, config.cleaning)
            if cleaned.shape[0] == 0:
                notes.append(
                    f"frame {frame.frame_index}: mask {m.label!r} had insufficient 3D support"
                )
                continue
            decisions.append(
                associate(
                    store,
                    cleaned,
                    m.label,
                    frame.frame_index,
                    config.association.tau,
                    config.association.voxel,
                )
            )

    refined = refine_instances(
        store,
        config.association.min_support,
        config.box_fit.angle_step,
        config.box_fit.trim_fraction,
    )
    merged = bev_merge(
        refined,
        config.association.bev_merge_iou,
        config.association.voxel,
        config.box_fit.angle_step,
        config.box_fit.trim_fraction,
    )
    return GroundingResult(instances=merged, decisions=decisions, notes=notes)
