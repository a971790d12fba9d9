#!/usr/bin/env python3
"""Generate a synthetic scene bundle: N box-shaped objects observed by sliding
window views, with per-frame point maps and instance masks.

Example:
    python scripts/make_synth_bundle.py --out /tmp/scene --objects chair,chair,table
    sceneground ground /tmp/scene --labels chair,table --out /tmp/grounded
"""

import argparse
from pathlib import Path

import numpy as np

from sceneground.bundle import BundleWriter, Intrinsics


def object_grid(center, spacing=0.04, cols=55, rows=10, levels=6):
    xs = np.arange(cols) * spacing
    ys = np.arange(rows) * spacing
    zs = np.arange(levels) * spacing
    g = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
    return (g + np.asarray(center)).astype(np.float32)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--objects", default="chair,chair,table",
                    help="comma-separated labels, one object each")
    ap.add_argument("--frames", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    labels = [l for l in args.objects.split(",") if l]
    rng = np.random.default_rng(args.seed)
    centers = [
        np.array([4.0 * (i % 3), 4.0 * (i // 3), 0.5]) for i in range(len(labels))
    ]
    objects = [object_grid(c) for c in centers]

    shape = (16 * len(labels), 64)
    intr = Intrinsics(fx=50.0, fy=50.0, cx=shape[1] / 2, cy=shape[0] / 2)
    writer = BundleWriter(Path(args.out), scene_id="synthetic")
    step = max(1, (55 - 10) // max(1, args.frames - 1))
    for f in range(args.frames):
        pm = np.full((*shape, 3), np.nan, dtype=np.float32)
        rgb = np.zeros((*shape, 3), dtype=np.uint8)
        masks = []
        for idx, (label, obj) in enumerate(zip(labels, objects)):
            start = min(step * f, 45)
            window = obj.reshape(55, 10, 6, 3)[start : start + 10].reshape(-1, 3)
            row0 = idx * 16
            block = pm[row0 : row0 + 12].reshape(-1, 3)
            block[: len(window)] = window
            pm[row0 : row0 + 12] = block.reshape(12, shape[1], 3)
            mask = np.zeros(shape, dtype=bool)
            mask[row0 : row0 + 12].reshape(-1)[: len(window)] = True
            rgb[mask] = rng.integers(64, 255, 3, dtype=np.uint8)
            masks.append((label, 0.95, mask))
        writer.add_frame(f, rgb, intr, pointmap=pm)
        for label, conf, mask in masks:
            writer.add_mask(f, label, conf, mask)
    root = writer.write()
    print(f"wrote {args.frames}-frame bundle with {len(labels)} objects to {root}")


if __name__ == "__main__":
    main()
