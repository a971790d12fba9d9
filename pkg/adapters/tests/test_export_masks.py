import json

import numpy as np
import pytest

from sceneground_adapters.masks import NativeMask, export_masks
from sceneground_adapters.pointmaps import AdapterError

from sceneground.bundle import BundleWriter, Intrinsics, load_bundle


def test_single_mask_outputs(tmp_path):
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[2:5, 3:7] = 1
    export_masks([NativeMask(0, "chair", 0.8, mask)], tmp_path)
    doc = json.loads((tmp_path / "masks.json").read_text())
    assert doc["masks"] == [
        {"frame_index": 0, "label": "chair", "confidence": 0.8, "path": "masks/0_0.png"}
    ]
    assert (tmp_path / "masks" / "0_0.png").is_file()


def test_round_trip_through_primary_loader(tmp_path, monkeypatch=None):
    rng = np.random.default_rng(5)
    h, w = 12, 16
    rasters = [rng.uniform(size=(h, w)) < 0.4 for _ in range(3)]
    natives = [
        NativeMask(0, "chair", 0.9, rasters[0]),
        NativeMask(0, "sofa", 0.7, rasters[1]),
        NativeMask(1, "chair", 0.6, rasters[2]),
    ]

    # frames come from the engine's own writer; masks come from the adapter
    bundle_dir = tmp_path / "bundle"
    writer = BundleWriter(bundle_dir, scene_id="adapter-test")
    intr = Intrinsics(fx=10.0, fy=10.0, cx=w / 2, cy=h / 2)
    for i in range(2):
        pm = np.zeros((h, w, 3), dtype=np.float32)
        writer.add_frame(i, np.zeros((h, w, 3), dtype=np.uint8), intr, pointmap=pm)
    writer.write()
    export_masks(natives, bundle_dir)

    bundle = load_bundle(bundle_dir)
    assert len(bundle.masks) == 3
    for native, loaded in zip(natives, bundle.masks):
        assert loaded.frame_index == native.frame_index
        assert loaded.label == native.label
        assert loaded.confidence == pytest.approx(native.confidence)
        np.testing.assert_array_equal(loaded.mask, np.asarray(native.array, dtype=bool))


def test_per_frame_numbering(tmp_path):
    m = np.ones((4, 4), dtype=bool)
    export_masks(
        [NativeMask(0, "a", 0.5, m), NativeMask(0, "b", 0.5, m), NativeMask(2, "c", 0.5, m)],
        tmp_path,
    )
    doc = json.loads((tmp_path / "masks.json").read_text())
    assert [e["path"] for e in doc["masks"]] == [
        "masks/0_0.png", "masks/0_1.png", "masks/2_0.png",
    ]


def test_confidence_out_of_range_rejected(tmp_path):
    with pytest.raises(AdapterError, match="confidence"):
        export_masks([NativeMask(0, "a", 1.5, np.ones((2, 2), dtype=bool))], tmp_path)


def test_missing_label_rejected(tmp_path):
    with pytest.raises(AdapterError, match="label"):
        export_masks([NativeMask(0, "", 0.5, np.ones((2, 2), dtype=bool))], tmp_path)


def test_non_2d_mask_rejected(tmp_path):
    with pytest.raises(AdapterError, match="HxW"):
        export_masks([NativeMask(0, "a", 0.5, np.ones((2, 2, 2), dtype=bool))], tmp_path)
