import json

import numpy as np
import pytest

from sceneground.bundle import BundleWriter, Intrinsics, load_bundle


def small_scene(root):
    """Two frames observing one chair blob; enough for ground + retrieve."""
    rng = np.random.default_rng(3)
    h, w = 24, 32
    intr = Intrinsics(fx=20.0, fy=20.0, cx=w / 2, cy=h / 2)
    writer = BundleWriter(root, scene_id="adapter-session")
    blob = rng.uniform(-0.2, 0.2, (300, 3)).astype(np.float32) + np.array(
        [1.0, 1.0, 0.5], dtype=np.float32
    )
    for i, count in enumerate((300, 200)):
        pm = np.full((h, w, 3), np.nan, dtype=np.float32)
        pm.reshape(-1, 3)[:count] = blob[:count]
        mask = np.zeros((h, w), dtype=bool)
        mask.reshape(-1)[:count] = True
        writer.add_frame(i, np.zeros((h, w, 3), dtype=np.uint8), intr, pointmap=pm)
        writer.add_mask(i, "chair", 0.9, mask)
    writer.write()
    return load_bundle(root)


class PlannerScript:
    """ground -> retrieve -> answer: exactly three planner exchanges."""

    def complete(self, system, messages):
        ctx = json.loads(messages[0]["text"])
        if ctx.get("summarize"):
            return "no answer"
        step = ctx["step"]
        if step == 1:
            return json.dumps({"kind": "ground", "payload": {"labels": ["chair"]}})
        if step == 2:
            return json.dumps({"kind": "retrieve", "payload": {"instance_id": 0, "k": 1}})
        return json.dumps({"kind": "answer", "payload": {"text": "one chair, two views"}})


@pytest.fixture
def scene(tmp_path):
    return small_scene(tmp_path / "scene")
