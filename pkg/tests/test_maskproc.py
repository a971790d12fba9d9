import numpy as np
import pytest

from sceneground.bundle import MaskRecord
from sceneground.maskproc import (
    FileStubSegmenter,
    FilterConfig,
    SegmenterError,
    SegmentProposal,
    apply_mirror_policy,
    filter_masks,
    mask_iou,
    resolve_overlaps,
    suppress_duplicates,
    write_stub_response,
)

CFG = FilterConfig()


def rect_mask(shape, r0, r1, c0, c1):
    m = np.zeros(shape, dtype=bool)
    m[r0:r1, c0:c1] = True
    return m


def record(mask, label="obj", conf=0.9, frame=0):
    return MaskRecord(frame_index=frame, label=label, confidence=conf, mask=mask)


class TestFilterMasks:
    def test_tiny_mask_dropped(self):
        # 5 px in 640x480: 0.0016% of the image, far below the 0.1% floor
        m = np.zeros((480, 640), dtype=bool)
        m[200, 100:105] = True
        assert filter_masks([record(m)], (480, 640), CFG) == []

    def test_area_boundary_100x100(self):
        # floor is 0.1% of 10000 px = 10 px: 10 kept, 9 dropped
        at = rect_mask((100, 100), 50, 51, 40, 50)
        below = rect_mask((100, 100), 50, 51, 40, 49)
        assert len(filter_masks([record(at)], (100, 100), CFG)) == 1
        assert filter_masks([record(below)], (100, 100), CFG) == []

    def test_interior_mask_kept(self):
        m = rect_mask((100, 100), 20, 80, 20, 80)
        assert len(filter_masks([record(m, conf=0.9)], (100, 100), CFG)) == 1

    def test_confidence_boundary(self):
        m = rect_mask((100, 100), 20, 80, 20, 80)
        assert len(filter_masks([record(m, conf=0.5)], (100, 100), CFG)) == 1
        assert filter_masks([record(m, conf=0.49)], (100, 100), CFG) == []

    def test_margin_coverage(self):
        # band is 5 px wide on each side of a 100x100 image
        sixty_in_band = rect_mask((100, 100), 0, 3, 10, 30) | rect_mask(
            (100, 100), 10, 12, 10, 30
        )  # 60 px in band, 40 interior
        assert filter_masks([record(sixty_in_band)], (100, 100), CFG) == []
        half_in_band = rect_mask((100, 100), 0, 5, 10, 20) | rect_mask(
            (100, 100), 20, 25, 10, 20
        )  # exactly 50% in band: kept (strict >)
        assert len(filter_masks([record(half_in_band)], (100, 100), CFG)) == 1

    def test_dimension_mismatch(self):
        m = rect_mask((50, 50), 10, 20, 10, 20)
        with pytest.raises(ValueError, match="expected"):
            filter_masks([record(m)], (100, 100), CFG)

    def test_idempotent(self, rng):
        masks = []
        for i in range(30):
            r0, c0 = rng.integers(0, 80, 2)
            masks.append(
                record(
                    rect_mask((100, 100), r0, r0 + rng.integers(1, 20), c0, c0 + rng.integers(1, 20)),
                    conf=float(rng.uniform(0, 1)),
                )
            )
        once = filter_masks(masks, (100, 100), CFG)
        twice = filter_masks(once, (100, 100), CFG)
        assert [id(m) for m in twice] == [id(m) for m in once]


class TestSuppressDuplicates:
    def test_single_mask_unchanged(self):
        m = record(rect_mask((50, 50), 10, 20, 10, 20))
        assert suppress_duplicates([m], 0.8) == [m]

    def test_greedy_keeps_largest_and_distinct(self):
        # A: 100 px, B overlaps A heavily (IoU > 0.8), C overlaps A lightly
        a = record(rect_mask((50, 50), 10, 20, 10, 20), label="x")  # 100 px
        b_mask = rect_mask((50, 50), 10, 20, 10, 19) | rect_mask((50, 50), 10, 18, 19, 20)
        b = record(b_mask, label="x")  # 98 px, IoU(A,B)=98/100 > 0.8
        c = record(rect_mask((50, 50), 18, 23, 18, 28), label="x")  # 50 px, small overlap
        assert mask_iou(a.mask, b.mask) > 0.8
        assert mask_iou(a.mask, c.mask) < 0.8
        kept = suppress_duplicates([b, c, a], 0.8)
        assert {id(m) for m in kept} == {id(a), id(c)}

    def test_identical_pair_keeps_one(self):
        m1 = record(rect_mask((50, 50), 10, 20, 10, 20))
        m2 = record(rect_mask((50, 50), 10, 20, 10, 20))
        kept = suppress_duplicates([m1, m2], 0.8)
        assert kept == [m1]  # first input position wins the area tie

    def test_iou_exactly_at_threshold_kept(self):
        # A (80 px) inside B (100 px): IoU = 0.8, not greater, so both stay
        b = record(rect_mask((50, 50), 10, 20, 10, 20), label="x")
        a = record(rect_mask((50, 50), 10, 18, 10, 20), label="x")
        assert mask_iou(a.mask, b.mask) == pytest.approx(0.8)
        assert len(suppress_duplicates([a, b], 0.8)) == 2

    def test_labels_isolated(self):
        m1 = record(rect_mask((50, 50), 10, 20, 10, 20), label="chair")
        m2 = record(rect_mask((50, 50), 10, 20, 10, 20), label="sofa")
        assert len(suppress_duplicates([m1, m2], 0.8)) == 2

    def test_postcondition_fuzz(self, rng):
        for trial in range(100):
            masks = []
            for _ in range(rng.integers(2, 10)):
                r0, c0 = rng.integers(0, 30, 2)
                h, w = rng.integers(5, 25, 2)
                masks.append(record(rect_mask((60, 60), r0, r0 + h, c0, c0 + w), label="x"))
            kept = suppress_duplicates(masks, 0.8)
            for i in range(len(kept)):
                for j in range(i + 1, len(kept)):
                    assert mask_iou(kept[i].mask, kept[j].mask) <= 0.8

    def test_order_independence(self, rng):
        masks = []
        for k in range(8):
            r0, c0 = rng.integers(0, 30, 2)
            # distinct sizes so the visit order is permutation-proof
            masks.append(
                record(rect_mask((60, 60), r0, r0 + 10 + k, c0, c0 + 10 + k), label="x")
            )
        kept_a = suppress_duplicates(masks, 0.8)
        perm = [masks[i] for i in rng.permutation(len(masks))]
        kept_b = suppress_duplicates(perm, 0.8)
        sets_a = {m.mask.tobytes() for m in kept_a}
        sets_b = {m.mask.tobytes() for m in kept_b}
        assert sets_a == sets_b

    def test_idempotent(self, rng):
        masks = [
            record(rect_mask((60, 60), i, i + 12, 5, 30), label="x") for i in range(0, 30, 4)
        ]
        once = suppress_duplicates(masks, 0.8)
        assert suppress_duplicates(once, 0.8) == once


class TestMirrorPolicy:
    def make(self, overlap_px, area=100):
        shape = (50, 50)
        mask = rect_mask(shape, 0, 10, 0, 10)  # 100 px
        mirror = np.zeros(shape, dtype=bool)
        mirror[0:10, 0:10] = False
        mirror.reshape(-1)[:0] = False
        flat_idx = np.flatnonzero(mask.reshape(-1))[:overlap_px]
        mflat = mirror.reshape(-1)
        mflat[flat_idx] = True
        mirror = mflat.reshape(shape)
        return record(mask, label="chair"), record(mirror, label="mirror")

    def test_above_half_removed(self):
        m, mirror = self.make(60)
        assert apply_mirror_policy([m], [mirror], 0.5) == []

    def test_no_overlap_kept(self):
        m, mirror = self.make(0)
        assert apply_mirror_policy([m], [mirror], 0.5) == [m]

    def test_exactly_half_kept(self):
        m, mirror = self.make(50)
        assert apply_mirror_policy([m], [mirror], 0.5) == [m]

    def test_mirror_masks_untouched(self):
        m, mirror = self.make(80)
        before = mirror.mask.copy()
        apply_mirror_policy([m], [mirror], 0.5)
        np.testing.assert_array_equal(mirror.mask, before)

    def test_other_frame_mirror_ignored(self):
        m, mirror = self.make(80)
        far = MaskRecord(frame_index=3, label="mirror", confidence=0.9, mask=mirror.mask)
        assert apply_mirror_policy([m], [far], 0.5) == [m]


class ScriptedSegmenter:
    """Confidence per label; optionally fails for specific labels."""

    def __init__(self, confidences, fail_labels=()):
        self.confidences = confidences
        self.fail_labels = set(fail_labels)
        self.queries = []

    def segment(self, image, bounds, label):
        self.queries.append((bounds, label))
        if label in self.fail_labels:
            raise SegmenterError(f"backend down for {label}")
        return [SegmentProposal(confidence=self.confidences.get(label, 0.0))]


IMAGE = np.zeros((100, 100, 3), dtype=np.uint8)


class TestResolveOverlaps:
    def test_no_overlap_unchanged(self):
        a = record(rect_mask((100, 100), 10, 30, 10, 30), label="chair")
        b = record(rect_mask((100, 100), 50, 70, 50, 70), label="sofa")
        seg = ScriptedSegmenter({})
        result = resolve_overlaps([a, b], IMAGE, seg, CFG)
        assert len(result.masks) == 2
        np.testing.assert_array_equal(result.masks[0].mask, a.mask)
        np.testing.assert_array_equal(result.masks[1].mask, b.mask)
        assert seg.queries == []

    def test_winner_takes_region(self):
        a = record(rect_mask((100, 100), 10, 40, 10, 40), label="chair")
        b = record(rect_mask((100, 100), 30, 60, 10, 40), label="sofa")
        seg = ScriptedSegmenter({"chair": 0.9, "sofa": 0.4})
        result = resolve_overlaps([a, b], IMAGE, seg, CFG)
        chair = next(m for m in result.masks if m.label == "chair")
        sofa = next(m for m in result.masks if m.label == "sofa")
        overlap = rect_mask((100, 100), 30, 40, 10, 40)
        assert chair.mask[overlap].all()
        assert not sofa.mask[overlap].any()

    def test_loser_below_floor_dropped(self):
        a = record(rect_mask((100, 100), 10, 50, 10, 50), label="chair")
        # sofa = the whole shared region plus a 5 px sliver; losing the region
        # leaves it under the 10 px area floor
        b_mask = rect_mask((100, 100), 10, 50, 10, 50) | rect_mask((100, 100), 50, 51, 10, 15)
        b = record(b_mask, label="sofa")
        seg = ScriptedSegmenter({"chair": 0.9, "sofa": 0.4})
        result = resolve_overlaps([a, b], IMAGE, seg, CFG)
        assert [m.label for m in result.masks] == ["chair"]

    def test_segmenter_failure_flagged(self):
        a = record(rect_mask((100, 100), 10, 40, 10, 40), label="chair")
        b = record(rect_mask((100, 100), 30, 60, 10, 40), label="sofa")
        seg = ScriptedSegmenter({}, fail_labels={"chair"})
        result = resolve_overlaps([a, b], IMAGE, seg, CFG)
        assert len(result.unresolved) == 1
        assert result.unresolved[0]["labels"] == ["chair", "sofa"]
        # masks left as-is for the unresolved pair
        assert len(result.masks) == 2
        np.testing.assert_array_equal(result.masks[0].mask, a.mask)

    def test_tie_goes_to_larger_mask(self):
        big = record(rect_mask((100, 100), 10, 50, 10, 50), label="chair")
        small = record(rect_mask((100, 100), 40, 60, 10, 40), label="sofa")
        seg = ScriptedSegmenter({"chair": 0.7, "sofa": 0.7})
        result = resolve_overlaps([big, small], IMAGE, seg, CFG)
        chair = next(m for m in result.masks if m.label == "chair")
        overlap = rect_mask((100, 100), 40, 50, 10, 40)
        assert chair.mask[overlap].all()
        assert len(result.ties) == 1

    def test_small_conflict_skips_requery(self):
        # overlap of 4 px < 0.05% of 100x100 (5 px): assigned to larger mask
        a = record(rect_mask((100, 100), 10, 30, 10, 30), label="chair")
        b = record(rect_mask((100, 100), 28, 49, 28, 32), label="sofa")
        overlap = np.logical_and(a.mask, b.mask).sum()
        assert overlap == 4
        seg = ScriptedSegmenter({"chair": 0.1, "sofa": 0.99})
        result = resolve_overlaps([a, b], IMAGE, seg, CFG)
        assert seg.queries == []
        chair = next(m for m in result.masks if m.label == "chair")
        assert chair.area == 400  # larger mask kept everything

    def test_output_cross_label_disjoint(self, rng):
        masks = []
        for i in range(6):
            r0, c0 = rng.integers(5, 60, 2)
            masks.append(
                record(
                    rect_mask((100, 100), r0, r0 + 25, c0, c0 + 25),
                    label=f"lab{i}",
                )
            )
        seg = ScriptedSegmenter({f"lab{i}": 0.1 * i + 0.05 for i in range(6)})
        result = resolve_overlaps(masks, IMAGE, seg, CFG)
        for i in range(len(result.masks)):
            for j in range(i + 1, len(result.masks)):
                if result.masks[i].label != result.masks[j].label:
                    assert not np.logical_and(
                        result.masks[i].mask, result.masks[j].mask
                    ).any()


class TestFileStubSegmenter:
    def test_round_trip(self, tmp_path):
        write_stub_response(tmp_path, (10, 20, 30, 40), "chair", [0.85, 0.4])
        seg = FileStubSegmenter(tmp_path)
        proposals = seg.segment(IMAGE, (10, 20, 30, 40), "chair")
        assert [p.confidence for p in proposals] == [0.85, 0.4]

    def test_missing_response(self, tmp_path):
        seg = FileStubSegmenter(tmp_path)
        with pytest.raises(SegmenterError):
            seg.segment(IMAGE, (0, 0, 1, 1), "sofa")

    def test_drives_resolution(self, tmp_path):
        a = record(rect_mask((100, 100), 10, 40, 10, 40), label="chair")
        b = record(rect_mask((100, 100), 30, 60, 10, 40), label="sofa")
        bounds = (10, 30, 40, 40)  # u0, v0, u1, v1 of the overlap
        write_stub_response(tmp_path, bounds, "chair", [0.9])
        write_stub_response(tmp_path, bounds, "sofa", [0.2])
        result = resolve_overlaps([a, b], IMAGE, FileStubSegmenter(tmp_path), CFG)
        chair = next(m for m in result.masks if m.label == "chair")
        assert chair.mask[rect_mask((100, 100), 30, 40, 10, 40)].all()
        assert result.unresolved == []
