import json

import numpy as np
import pytest

from sceneground.agents import RecordingClient, request_hash
from sceneground.bundle import BundleWriter, Intrinsics, load_bundle

DEFAULT_INTR = Intrinsics(fx=50.0, fy=50.0, cx=32.0, cy=24.0)


def grid_points(center, half_extent, spacing):
    """Regular 3D grid centered at `center`; the workhorse synthetic object."""
    center = np.asarray(center, dtype=float)
    half = np.asarray(half_extent, dtype=float)
    axes = [
        np.arange(-half[i], half[i] + spacing / 2, spacing) + center[i]
        for i in range(3)
    ]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def pointmap_with(points, shape=(48, 64)):
    """Pack a point list into the leading pixels of a NaN-padded point map."""
    pm = np.full((*shape, 3), np.nan, dtype=np.float32)
    flat = np.asarray(points, dtype=np.float32)
    if flat.shape[0] > shape[0] * shape[1]:
        raise ValueError("too many points for the pointmap shape")
    pm.reshape(-1, 3)[: flat.shape[0]] = flat
    return pm


def mask_prefix(count, shape=(48, 64)):
    """Mask covering the first `count` pixels in row-major order."""
    m = np.zeros(shape, dtype=bool)
    m.reshape(-1)[:count] = True
    return m


def write_bundle(root, frames, scene_id="fixture"):
    """frames: list of dicts with keys pointmap/depth/pose/masks/rgb/intrinsics."""
    writer = BundleWriter(root, scene_id=scene_id)
    for i, spec in enumerate(frames):
        pm = spec.get("pointmap")
        depth = spec.get("depth")
        if pm is not None:
            h, w = pm.shape[:2]
        else:
            h, w = depth.shape
        rgb = spec.get("rgb")
        if rgb is None:
            rgb = np.zeros((h, w, 3), dtype=np.uint8)
        writer.add_frame(
            i,
            rgb,
            spec.get("intrinsics", DEFAULT_INTR),
            pointmap=pm,
            depth=depth,
            pose=spec.get("pose"),
        )
        for label, conf, mask in spec.get("masks", []):
            writer.add_mask(i, label, conf, mask)
    writer.write()
    return load_bundle(root)


class FnClient:
    """Model client driven by a plain function of (system, messages)."""

    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def complete(self, system, messages):
        self.calls += 1
        return self.fn(system, messages)


def record_to_stub(clients, tmp_path, run):
    """Run once with recording wrappers, then return a transcript stub path."""
    log_path = tmp_path / "session.log.jsonl"
    wrapped = {role: RecordingClient(c, log_path) for role, c in clients.items()}
    run(wrapped)
    stub_path = tmp_path / "transcript.jsonl"
    seen = {}
    lines = []
    for line in log_path.read_text(encoding="utf-8").splitlines():
        entry = json.loads(line)
        digest = request_hash(entry["system"], entry["messages"])
        if digest in seen:
            assert seen[digest] == entry["response"], "non-deterministic session log"
            continue
        seen[digest] = entry["response"]
        lines.append(json.dumps({"hash": digest, "response": entry["response"]}))
    stub_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return stub_path


def three_object_bundle(root):
    """Ten frames sliding over three well-separated same-label objects.

    Each object is a 55x10x6 grid at 0.04 m spacing; frame f observes a
    10-column window starting at column 5f, so consecutive windows share half
    their voxels (overlap score near 0.5). That makes association merge every
    window at tau=0.25 but none at tau=0.95, while the fragment BEV IoU of
    roughly 1/3 stays below the 0.5 category-merge bar.

    Returns (bundle, per-object ground-truth point arrays). Cleaning must be
    run with a generous outlier ratio (see fixture_clean_config) so the grids
    survive bit-exactly and partitions can be compared as exact sets.
    """
    centers = [np.array([0.0, 0.0, 0.5]), np.array([4.0, 0.0, 0.5]), np.array([0.0, 4.0, 0.5])]
    spacing = 0.04
    cols = np.arange(55) * spacing
    ys = np.arange(10) * spacing
    zs = np.arange(6) * spacing
    objects = []
    for c in centers:
        g = np.stack(np.meshgrid(cols, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
        objects.append((g + c).astype(np.float32))

    shape = (48, 64)
    frames = []
    for f in range(10):
        pm = np.full((*shape, 3), np.nan, dtype=np.float32)
        masks = []
        for obj_idx, obj in enumerate(objects):
            window = obj.reshape(55, 10, 6, 3)[5 * f : 5 * f + 10].reshape(-1, 3)
            row0 = obj_idx * 16
            block = pm[row0 : row0 + 12].reshape(-1, 3)
            block[: len(window)] = window
            pm[row0 : row0 + 12] = block.reshape(12, shape[1], 3)
            mask = np.zeros(shape, dtype=bool)
            mask[row0 : row0 + 12].reshape(-1)[: len(window)] = True
            masks.append(("chair", 0.95, mask))
        frames.append({"pointmap": pm, "masks": masks})
    bundle = write_bundle(root, frames, scene_id="three-objects")
    expected = [np.unique(obj.astype(np.float64), axis=0) for obj in objects]
    return bundle, expected


def fixture_clean_config():
    """Cleaning knobs under which the grid fixtures survive losslessly."""
    from sceneground.lifting import CleanConfig

    return CleanConfig(outlier_std_ratio=8.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
