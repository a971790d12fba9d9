#!/usr/bin/env python3
"""Grounding throughput benchmark: 100 frames x 10k points, 3 labels.

    python scripts/bench_ground.py --workdir /tmp/bench
"""

import argparse
import time
from pathlib import Path

import numpy as np

from sceneground.bundle import BundleWriter, Intrinsics, load_bundle
from sceneground.config import EngineConfig
from sceneground.pipeline import ground_labels


def build(root, frames=100, seed=7):
    rng = np.random.default_rng(seed)
    h, w = 100, 100
    intr = Intrinsics(fx=80.0, fy=80.0, cx=50.0, cy=50.0)
    labels = ["chair", "table", "lamp"]
    centers = {
        "chair": np.array([0.0, 0.0, 0.5]),
        "table": np.array([4.0, 0.0, 0.5]),
        "lamp": np.array([0.0, 4.0, 0.5]),
    }
    writer = BundleWriter(root, scene_id="bench")
    for i in range(frames):
        pm = np.full((h, w, 3), np.nan, dtype=np.float32)
        per_frame = []
        for j, lab in enumerate(labels):
            r0 = j * 33
            block = rng.uniform(-0.4, 0.4, (30, 22, 3)).astype(np.float32)
            block *= np.array([1.0, 1.0, 0.5], dtype=np.float32)
            block += centers[lab].astype(np.float32)
            block[..., 0] += np.float32(0.002 * i)
            pm[r0 : r0 + 30, 10:32] = block
            m = np.zeros((h, w), dtype=bool)
            m[r0 : r0 + 30, 10:32] = True
            per_frame.append((lab, 0.9, m))
        pm[95:100, 40:100] = rng.uniform(-5, 5, (5, 60, 3)).astype(np.float32)
        writer.add_frame(i, np.zeros((h, w, 3), dtype=np.uint8), intr, pointmap=pm)
        for lab, conf, m in per_frame:
            writer.add_mask(i, lab, conf, m)
    writer.write()
    return labels


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", required=True)
    ap.add_argument("--frames", type=int, default=100)
    args = ap.parse_args()
    root = Path(args.workdir) / "bundle"
    root.parent.mkdir(parents=True, exist_ok=True)

    t0 = time.monotonic()
    labels = build(root, frames=args.frames)
    t1 = time.monotonic()
    bundle = load_bundle(root)
    t2 = time.monotonic()
    result = ground_labels(bundle, labels, EngineConfig())
    t3 = time.monotonic()

    print(f"build   {t1 - t0:6.2f}s")
    print(f"load    {t2 - t1:6.2f}s")
    print(f"ground  {t3 - t2:6.2f}s")
    for inst in result.instances:
        print(f"  id={inst.id} label={inst.label} points={len(inst.points)} "
              f"frames={len(inst.frames)}")


if __name__ == "__main__":
    main()
