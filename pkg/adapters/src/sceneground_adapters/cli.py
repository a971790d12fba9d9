"""Batch CLI entry points: export-pointmaps, export-masks, record-transcript."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .masks import NativeMask, export_masks
from .pointmaps import AdapterError, export_pointmaps
from .transcripts import record_transcript


def _load_arrays(path: Path) -> list[np.ndarray]:
    """A single .npy stack (N,H,W,C) or a directory of per-frame .npy files."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.npy"), key=lambda p: int(p.stem))
        if not files:
            raise AdapterError(f"{path}: no .npy files found")
        return [np.load(f) for f in files]
    stack = np.load(path)
    if stack.ndim != 4:
        raise AdapterError(
            f"{path}: expected a (N, H, W, C) stack, got shape {stack.shape}"
        )
    return [stack[i] for i in range(stack.shape[0])]


def export_pointmaps_main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="export-pointmaps",
        description="Convert native point-map arrays to .pmap files",
    )
    ap.add_argument("arrays", help=".npy stack (N,H,W,3) or directory of <i>.npy")
    ap.add_argument("--out", required=True)
    ap.add_argument("--source-model", default="unknown")
    ap.add_argument("--source-version", default="unknown")
    args = ap.parse_args(argv)
    try:
        out = export_pointmaps(
            _load_arrays(Path(args.arrays)),
            Path(args.out),
            source_model=args.source_model,
            source_version=args.source_version,
        )
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote pointmaps and adapter_manifest.json under {out}")
    return 0


def export_masks_main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="export-masks",
        description="Convert native masks + metadata to PNGs and masks.json",
    )
    ap.add_argument("arrays", help=".npy stack (N,H,W) or directory of <i>.npy")
    ap.add_argument("--meta", required=True,
                    help="JSON list of {frame_index,label,confidence}, aligned with the stack")
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    try:
        arrays = _load_arrays_2d(Path(args.arrays))
        meta = json.loads(Path(args.meta).read_text(encoding="utf-8"))
        if len(meta) != len(arrays):
            raise AdapterError(
                f"{len(arrays)} arrays but {len(meta)} metadata entries"
            )
        masks = [
            NativeMask(
                frame_index=int(m["frame_index"]),
                label=m.get("label", ""),
                confidence=float(m["confidence"]),
                array=arr,
            )
            for m, arr in zip(meta, arrays)
        ]
        out = export_masks(masks, Path(args.out))
    except (AdapterError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(masks)} mask(s) and masks.json under {out}")
    return 0


def _load_arrays_2d(path: Path) -> list[np.ndarray]:
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.npy"), key=lambda p: int(p.stem))
        if not files:
            raise AdapterError(f"{path}: no .npy files found")
        return [np.load(f) for f in files]
    stack = np.load(path)
    if stack.ndim != 3:
        raise AdapterError(
            f"{path}: expected a (N, H, W) stack, got shape {stack.shape}"
        )
    return [stack[i] for i in range(stack.shape[0])]


def record_transcript_main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="record-transcript",
        description="Convert a recorded session log into a replayable stub",
    )
    ap.add_argument("log", help="JSONL of {system, messages, response}")
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    try:
        out = record_transcript(Path(args.log), Path(args.out))
    except (AdapterError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote transcript stub {out}")
    return 0
