"""Export native HxWx3 point-map arrays as PMAP files plus a manifest.

The PMAP layout is reproduced here byte for byte from the engine's bundle
contract (magic "PMAP", three little-endian uint32 H/W/C with C=3, then
H*W*3 little-endian float32, NaN for invalid points) so the adapter stays an
independent implementation of the wire format.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

PMAP_MAGIC = b"PMAP"


class AdapterError(Exception):
    """Native input violates the adapter's expectations."""


def encode_pointmap(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise AdapterError(f"pointmap must be HxWx3, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        raise AdapterError(f"pointmap must be floating point, got dtype {arr.dtype}")
    h, w, c = arr.shape
    return (
        PMAP_MAGIC
        + struct.pack("<III", h, w, c)
        + arr.astype("<f4").tobytes(order="C")
    )


def export_pointmaps(
    arrays: Sequence[np.ndarray],
    out_dir: Path,
    source_model: str = "unknown",
    source_version: str = "unknown",
) -> Path:
    """Write one .pmap per frame plus adapter_manifest.json; returns out_dir."""
    out_dir = Path(out_dir)
    (out_dir / "pointmaps").mkdir(parents=True, exist_ok=True)
    entries = []
    for idx, arr in enumerate(arrays):
        payload = encode_pointmap(arr)
        rel = f"pointmaps/{idx}.pmap"
        (out_dir / rel).write_bytes(payload)
        entries.append(
            {
                "frame_index": idx,
                "path": rel,
                "shape": list(np.asarray(arr).shape),
                "dtype": "float32",
            }
        )
    manifest = {
        "source_model": source_model,
        "source_version": source_version,
        "frame_count": len(entries),
        "pointmaps": entries,
    }
    (out_dir / "adapter_manifest.json").write_text(
        json.dumps(manifest, indent=2), encoding="utf-8"
    )
    return out_dir
