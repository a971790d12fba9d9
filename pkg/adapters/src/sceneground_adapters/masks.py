"""Export native segmentation masks as 0/255 PNGs plus masks.json.

Output matches the engine's mask manifest: masks/<frame>_<j>.png rasters and
a masks.json of {"masks": [{"frame_index", "label", "confidence", "path"}]}.
Geometry is never touched; this is a pure format shim.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .pointmaps import AdapterError


@dataclass(frozen=True)
class NativeMask:
    frame_index: int
    label: str
    confidence: float
    array: np.ndarray  # boolean-coercible HxW


def _validate(mask: NativeMask) -> np.ndarray:
    if not mask.label:
        raise AdapterError(f"mask for frame {mask.frame_index} has no label")
    if not (0.0 <= mask.confidence <= 1.0):
        raise AdapterError(
            f"confidence {mask.confidence} outside [0, 1] "
            f"(frame {mask.frame_index}, label {mask.label!r})"
        )
    arr = np.asarray(mask.array)
    if arr.ndim != 2:
        raise AdapterError(f"mask must be HxW, got shape {arr.shape}")
    return arr.astype(bool)


def export_masks(masks: Sequence[NativeMask], out_dir: Path) -> Path:
    """Write PNG rasters and masks.json under out_dir; returns out_dir."""
    out_dir = Path(out_dir)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    per_frame: dict[int, int] = {}
    entries = []
    for mask in masks:
        raster = _validate(mask)
        j = per_frame.get(mask.frame_index, 0)
        per_frame[mask.frame_index] = j + 1
        rel = f"masks/{mask.frame_index}_{j}.png"
        Image.fromarray(raster.astype(np.uint8) * 255, mode="L").save(out_dir / rel)
        entries.append(
            {
                "frame_index": int(mask.frame_index),
                "label": mask.label,
                "confidence": float(mask.confidence),
                "path": rel,
            }
        )
    (out_dir / "masks.json").write_text(
        json.dumps({"masks": entries}, indent=2), encoding="utf-8"
    )
    return out_dir
