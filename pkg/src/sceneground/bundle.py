"""On-disk scene bundle: binary point maps, PNG rasters, JSON manifests.

Bundle layout under a root directory:

    manifest.json       scene meta + frame table
    frames/<i>.png      RGB frames (8-bit, 3 channel)
    pointmaps/<i>.pmap  scene-frame point maps (see PMAP below)
    depths/<i>.dmap     optional per-frame depth (DMAP)
    masks/<i>_<j>.png   binary masks (8-bit single channel, 0/255)
    masks.json          mask manifest (label, confidence, frame_index, path)

PMAP: magic "PMAP", three little-endian uint32 (H, W, C=3), then H*W*3
little-endian float32. NaN marks invalid points. DMAP is the single-channel
analogue for depth: magic "DMAP", uint32 H, W, then H*W float32.

Units are meters and the up axis is +z; loaders reject anything else.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .geometry import YawBox

PMAP_MAGIC = b"PMAP"
DMAP_MAGIC = b"DMAP"


class BundleError(Exception):
    """Malformed or inconsistent bundle content; message carries the path."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not all(np.isfinite([self.fx, self.fy, self.cx, self.cy])):
            raise ValueError("intrinsics must be finite")

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_json(cls, obj: dict) -> "Intrinsics":
        return cls(
            fx=float(obj["fx"]), fy=float(obj["fy"]),
            cx=float(obj["cx"]), cy=float(obj["cy"]),
        )


@dataclass
class FrameRecord:
    frame_index: int
    rgb_path: Path
    width: int
    height: int
    intrinsics: Intrinsics
    pointmap: Optional[np.ndarray] = None  # (Hp, Wp, 3) scene-frame meters
    depth: Optional[np.ndarray] = None  # (H, W) meters
    pose: Optional[np.ndarray] = None  # 4x4 camera-to-scene, row-major

    def load_rgb(self) -> np.ndarray:
        with Image.open(self.rgb_path) as im:
            return np.asarray(im.convert("RGB"))


@dataclass
class MaskRecord:
    frame_index: int
    label: str
    confidence: float
    mask: np.ndarray  # (H, W) bool

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        self.mask = np.asarray(self.mask, dtype=bool)

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass
class SceneMeta:
    scene_id: str
    units: str = "meters"
    up_axis: str = "+z"


@dataclass
class SceneBundle:
    frames: list[FrameRecord]
    masks: list[MaskRecord]
    meta: SceneMeta
    root: Optional[Path] = None

    def masks_for_frame(self, frame_index: int) -> list[MaskRecord]:
        return [m for m in self.masks if m.frame_index == frame_index]


def write_pointmap(path: Path, pointmap: np.ndarray) -> None:
    arr = np.asarray(pointmap, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"pointmap must be HxWx3, got {arr.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(PMAP_MAGIC)
        fh.write(struct.pack("<III", h, w, c))
        fh.write(arr.astype("<f4").tobytes())


def read_pointmap(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != PMAP_MAGIC:
        raise BundleError(f"{path}: bad magic, expected PMAP")
    if len(raw) < 16:
        raise BundleError(f"{path}: truncated header")
    h, w, c = struct.unpack("<III", raw[4:16])
    if c != 3:
        raise BundleError(f"{path}: channel count must be 3, header says {c}")
    expected = 16 + h * w * c * 4
    if len(raw) != expected:
        raise BundleError(
            f"{path}: payload size mismatch, header {h}x{w}x{c} needs "
            f"{expected} bytes, file has {len(raw)}"
        )
    return np.frombuffer(raw, dtype="<f4", offset=16).reshape(h, w, c).copy()


def write_depthmap(path: Path, depth: np.ndarray) -> None:
    arr = np.asarray(depth, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"depth must be HxW, got {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(DMAP_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(arr.astype("<f4").tobytes())


def read_depthmap(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != DMAP_MAGIC:
        raise BundleError(f"{path}: bad magic, expected DMAP")
    if len(raw) < 12:
        raise BundleError(f"{path}: truncated header")
    h, w = struct.unpack("<II", raw[4:12])
    expected = 12 + h * w * 4
    if len(raw) != expected:
        raise BundleError(
            f"{path}: payload size mismatch, header {h}x{w} needs "
            f"{expected} bytes, file has {len(raw)}"
        )
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w).copy()


def _write_mask_png(path: Path, mask: np.ndarray) -> None:
    arr = (np.asarray(mask, dtype=bool).astype(np.uint8)) * 255
    Image.fromarray(arr, mode="L").save(path)


def _read_mask_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 0


class BundleWriter:
    """Accumulates frames and masks in memory, then writes a valid bundle."""

    def __init__(self, root: Path, scene_id: str = "scene"):
        self.root = Path(root)
        self.scene_id = scene_id
        self._frames: dict[int, dict] = {}
        self._masks: list[tuple[int, str, float, np.ndarray]] = []

    def add_frame(
        self,
        frame_index: int,
        rgb: np.ndarray,
        intrinsics: Intrinsics,
        pointmap: Optional[np.ndarray] = None,
        depth: Optional[np.ndarray] = None,
        pose: Optional[np.ndarray] = None,
    ) -> None:
        if frame_index in self._frames:
            raise ValueError(f"duplicate frame index {frame_index}")
        if pointmap is None and depth is None:
            raise ValueError("frame needs a pointmap or a depth map")
        self._frames[frame_index] = {
            "rgb": np.asarray(rgb, dtype=np.uint8),
            "intrinsics": intrinsics,
            "pointmap": pointmap,
            "depth": depth,
            "pose": pose,
        }

    def add_mask(
        self, frame_index: int, label: str, confidence: float, mask: np.ndarray
    ) -> None:
        self._masks.append((frame_index, label, float(confidence), np.asarray(mask, dtype=bool)))

    def write(self) -> Path:
        root = self.root
        for sub in ("frames", "pointmaps", "depths", "masks"):
            (root / sub).mkdir(parents=True, exist_ok=True)

        frame_table = []
        for idx in sorted(self._frames):
            rec = self._frames[idx]
            rgb = rec["rgb"]
            h, w = rgb.shape[:2]
            rgb_rel = f"frames/{idx}.png"
            Image.fromarray(rgb, mode="RGB").save(root / rgb_rel)
            entry = {
                "frame_index": idx,
                "width": w,
                "height": h,
                "rgb": rgb_rel,
                "pointmap": None,
                "depth": None,
                "intrinsics": rec["intrinsics"].to_json(),
                "pose": None,
            }
            if rec["pointmap"] is not None:
                rel = f"pointmaps/{idx}.pmap"
                write_pointmap(root / rel, rec["pointmap"])
                entry["pointmap"] = rel
            if rec["depth"] is not None:
                rel = f"depths/{idx}.dmap"
                write_depthmap(root / rel, rec["depth"])
                entry["depth"] = rel
            if rec["pose"] is not None:
                pose = np.asarray(rec["pose"], dtype=np.float64)
                if pose.shape != (4, 4):
                    raise ValueError(f"pose must be 4x4, got {pose.shape}")
                entry["pose"] = pose.tolist()
            frame_table.append(entry)

        manifest = {
            "scene_id": self.scene_id,
            "units": "meters",
            "up_axis": "+z",
            "frames": frame_table,
        }
        (root / "manifest.json").write_text(
            json.dumps(manifest, indent=2), encoding="utf-8"
        )

        per_frame_counter: dict[int, int] = {}
        mask_entries = []
        for frame_index, label, confidence, mask in self._masks:
            j = per_frame_counter.get(frame_index, 0)
            per_frame_counter[frame_index] = j + 1
            rel = f"masks/{frame_index}_{j}.png"
            _write_mask_png(root / rel, mask)
            mask_entries.append(
                {
                    "frame_index": frame_index,
                    "label": label,
                    "confidence": confidence,
                    "path": rel,
                }
            )
        (root / "masks.json").write_text(
            json.dumps({"masks": mask_entries}, indent=2), encoding="utf-8"
        )
        return root


def load_bundle(root: Path) -> SceneBundle:
    """Load and fully validate a bundle directory."""
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise BundleError(f"{manifest_path}: manifest missing")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"{manifest_path}: invalid JSON ({exc})") from exc

    units = manifest.get("units")
    if units != "meters":
        raise BundleError(f"{manifest_path}: field 'units' must be 'meters', got {units!r}")
    up_axis = manifest.get("up_axis")
    if up_axis != "+z":
        raise BundleError(f"{manifest_path}: field 'up_axis' must be '+z', got {up_axis!r}")
    meta = SceneMeta(scene_id=str(manifest.get("scene_id", "")), units=units, up_axis=up_axis)

    entries = manifest.get("frames", [])
    seen: set[int] = set()
    frames: list[FrameRecord] = []
    for entry in entries:
        idx = entry.get("frame_index")
        if not isinstance(idx, int) or idx < 0:
            raise BundleError(
                f"{manifest_path}: field 'frame_index' must be a non-negative "
                f"integer, got {idx!r}"
            )
        if idx in seen:
            raise BundleError(f"{manifest_path}: duplicate frame index {idx}")
        seen.add(idx)

        rgb_path = root / entry["rgb"]
        if not rgb_path.is_file():
            raise BundleError(f"{rgb_path}: referenced RGB frame missing")
        with Image.open(rgb_path) as im:
            w_actual, h_actual = im.size
        width, height = int(entry["width"]), int(entry["height"])
        if (w_actual, h_actual) != (width, height):
            raise BundleError(
                f"{rgb_path}: image is {w_actual}x{h_actual}, manifest field "
                f"'width'/'height' says {width}x{height}"
            )

        try:
            intr = Intrinsics.from_json(entry["intrinsics"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BundleError(
                f"{manifest_path}: frame {idx} field 'intrinsics' invalid ({exc})"
            ) from exc

        pointmap = None
        if entry.get("pointmap"):
            pm_path = root / entry["pointmap"]
            if not pm_path.is_file():
                raise BundleError(f"{pm_path}: referenced pointmap missing")
            pointmap = read_pointmap(pm_path)

        depth = None
        if entry.get("depth"):
            d_path = root / entry["depth"]
            if not d_path.is_file():
                raise BundleError(f"{d_path}: referenced depth map missing")
            depth = read_depthmap(d_path)
            if depth.shape != (height, width):
                raise BundleError(
                    f"{d_path}: depth is {depth.shape}, frame {idx} declares "
                    f"{height}x{width}"
                )

        if pointmap is None and depth is None:
            raise BundleError(
                f"{manifest_path}: frame {idx} carries neither field "
                f"'pointmap' nor 'depth'"
            )

        pose = None
        if entry.get("pose") is not None:
            pose = np.asarray(entry["pose"], dtype=np.float64)
            if pose.shape != (4, 4):
                raise BundleError(
                    f"{manifest_path}: frame {idx} field 'pose' must be 4x4"
                )

        frames.append(
            FrameRecord(
                frame_index=idx,
                rgb_path=rgb_path,
                width=width,
                height=height,
                intrinsics=intr,
                pointmap=pointmap,
                depth=depth,
                pose=pose,
            )
        )

    if seen and seen != set(range(len(seen))):
        raise BundleError(
            f"{manifest_path}: frame indices must be dense from 0, got {sorted(seen)}"
        )
    frames.sort(key=lambda f: f.frame_index)

    masks_path = root / "masks.json"
    masks: list[MaskRecord] = []
    if masks_path.is_file():
        try:
            mask_doc = json.loads(masks_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise BundleError(f"{masks_path}: invalid JSON ({exc})") from exc
        for m in mask_doc.get("masks", []):
            fidx = m.get("frame_index")
            if fidx not in seen:
                raise BundleError(
                    f"{masks_path}: mask field 'frame_index'={fidx!r} references "
                    f"no frame"
                )
            conf = float(m["confidence"])
            if not (0.0 <= conf <= 1.0):
                raise BundleError(
                    f"{masks_path}: mask field 'confidence'={conf} outside [0, 1]"
                )
            png_path = root / m["path"]
            if not png_path.is_file():
                raise BundleError(f"{png_path}: referenced mask raster missing")
            raster = _read_mask_png(png_path)
            frame = frames[fidx]
            if raster.shape != (frame.height, frame.width):
                raise BundleError(
                    f"{png_path}: mask is {raster.shape}, frame {fidx} is "
                    f"{frame.height}x{frame.width}"
                )
            masks.append(
                MaskRecord(
                    frame_index=fidx, label=str(m["label"]), confidence=conf, mask=raster
                )
            )

    return SceneBundle(frames=frames, masks=masks, meta=meta, root=root)


@dataclass
class InstanceRecord:
    """What the instance JSON stores; the lightweight read-side counterpart."""

    id: int
    label: str
    box: Optional[YawBox]
    num_points: int
    frames: list[int]


def _instance_to_json(inst) -> dict:
    box = getattr(inst, "box", None)
    if box is not None:
        box_doc = {
            "center": [float(v) for v in box.center],
            "size": [float(v) for v in box.size],
            "yaw": float(box.yaw),
        }
    else:
        box_doc = None
    points = getattr(inst, "points", None)
    num_points = len(points) if points is not None else int(inst.num_points)
    return {
        "id": int(inst.id),
        "label": str(inst.label),
        "box": box_doc,
        "num_points": num_points,
        "frames": sorted(int(f) for f in inst.frames),
    }


def write_instances(instances: Sequence, path: Path) -> None:
    """Serialize refined instances; ids must already be contiguous from 0."""
    ids = [int(inst.id) for inst in instances]
    if ids != list(range(len(ids))):
        raise ValueError(f"instance ids must be contiguous from 0, got {ids}")
    doc = {"instances": [_instance_to_json(inst) for inst in instances]}
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def read_instances(path: Path) -> list[InstanceRecord]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path}: invalid JSON ({exc})") from exc
    out = []
    for obj in doc.get("instances", []):
        box = None
        if obj.get("box") is not None:
            b = obj["box"]
            box = YawBox(
                center=np.asarray(b["center"], dtype=np.float64),
                size=np.asarray(b["size"], dtype=np.float64),
                yaw=float(b["yaw"]),
            )
        out.append(
            InstanceRecord(
                id=int(obj["id"]),
                label=str(obj["label"]),
                box=box,
                num_points=int(obj["num_points"]),
                frames=[int(f) for f in obj.get("frames", [])],
            )
        )
    return out
