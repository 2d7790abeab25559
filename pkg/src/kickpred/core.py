"""Shared domain types, dataset manifest I/O, splits, and keypoint utilities.

Coordinate conventions: image coordinates with origin at the top-left,
x to the right, y downward, units of pixels. Poses follow the COCO-17
keypoint ordering (0 nose ... 15 left ankle, 16 right ankle).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    InputError,
    InsufficientData,
    InvalidFrameGeometry,
    ManifestParseError,
)

N_KEYPOINTS = 17
SEQ_LEN = 8

# COCO-17 indices used throughout.
KP_NOSE = 0
KP_LEFT_SHOULDER = 5
KP_RIGHT_SHOULDER = 6
KP_LEFT_HIP = 11
KP_RIGHT_HIP = 12
KP_LEFT_ANKLE = 15
KP_RIGHT_ANKLE = 16


class DirectionLabel(Enum):
    """Goal third the ball ends in, from the goalkeeper's perspective."""

    LEFT = "left"
    MIDDLE = "middle"
    RIGHT = "right"

    @property
    def index(self) -> int:
        return _LABEL_ORDER.index(self)

    @classmethod
    def from_index(cls, i: int) -> "DirectionLabel":
        return _LABEL_ORDER[i]

    @classmethod
    def from_string(cls, s: str) -> "DirectionLabel":
        try:
            return cls(s.lower())
        except ValueError:
            raise InputError(f"unknown direction label {s!r}") from None

    def one_hot(self) -> np.ndarray:
        v = np.zeros(3, dtype=np.float32)
        v[self.index] = 1.0
        return v


_LABEL_ORDER = (DirectionLabel.LEFT, DirectionLabel.MIDDLE, DirectionLabel.RIGHT)


class ObjectClass(Enum):
    SHOOTER = "shooter"
    GOALKEEPER = "goalkeeper"
    NET = "net"
    BALL = "ball"


class Split(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in image coordinates, corners (x1,y1) and (x2,y2)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise InputError(f"bounding box values must be finite and >= 0, got {vals}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InputError(f"bounding box must satisfy x1 < x2 and y1 < y2, got {vals}")

    def scaled(self, s: float) -> "BoundingBox":
        return BoundingBox(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)


@dataclass(frozen=True)
class Detection:
    cls: ObjectClass
    box: BoundingBox
    conf: float

    def __post_init__(self):
        if not (0.0 <= self.conf <= 1.0):
            raise InputError(f"detection confidence must be in [0,1], got {self.conf}")


class PoseFrame:
    """17 COCO keypoints for one frame, each (x, y, confidence)."""

    __slots__ = ("keypoints",)

    def __init__(self, keypoints):
        kps = np.asarray(keypoints, dtype=np.float64)
        if kps.shape != (N_KEYPOINTS, 3):
            raise InputError(f"pose must have shape (17, 3), got {kps.shape}")
        if not np.all(np.isfinite(kps[:, :2])):
            raise InputError("pose keypoint coordinates must be finite")
        if np.any(kps[:, 2] < 0) or np.any(kps[:, 2] > 1):
            raise InputError("pose keypoint confidences must be in [0,1]")
        self.keypoints = kps

    def xy(self) -> np.ndarray:
        return self.keypoints[:, :2]

    def conf(self) -> np.ndarray:
        return self.keypoints[:, 2]

    def scaled(self, s: float) -> "PoseFrame":
        kps = self.keypoints.copy()
        kps[:, :2] *= s
        return PoseFrame(kps)

    def __eq__(self, other):
        return isinstance(other, PoseFrame) and np.array_equal(self.keypoints, other.keypoints)


@dataclass
class FrameRecord:
    """One frame of a detection/pose stream.

    `image` carries in-memory pixels for synthetic or already-decoded
    streams; `image_ref` points at a raster file for streams on disk.
    Either (or neither, for geometry-only processing) may be present.
    """

    frame_index: int
    detections: list[Detection] = field(default_factory=list)
    pose: Optional[PoseFrame] = None
    image_ref: Optional[str] = None
    image: Optional[np.ndarray] = None

    def best_detection(self, cls: ObjectClass) -> Optional[Detection]:
        """Highest-confidence detection of `cls` in this frame, if any."""
        hits = [d for d in self.detections if d.cls is cls]
        return max(hits, key=lambda d: d.conf) if hits else None

    def scaled(self, s: float) -> "FrameRecord":
        """Copy with every coordinate (boxes and keypoints) multiplied by s."""
        return FrameRecord(
            frame_index=self.frame_index,
            detections=[Detection(d.cls, d.box.scaled(s), d.conf) for d in self.detections],
            pose=self.pose.scaled(s) if self.pose is not None else None,
            image_ref=self.image_ref,
            image=self.image,
        )


def scale_stream(stream: Sequence[FrameRecord], s: float) -> list[FrameRecord]:
    """Multiply every coordinate in a stream by s (camera zoom model)."""
    return [r.scaled(s) for r in stream]


@dataclass
class KickSample:
    """Model-ready sample: 8 frames, 8x17x2 normalized keypoints, a label."""

    frames: np.ndarray      # (8, H, W, 3) float32 in [0, 1]
    keypoints: np.ndarray   # (8, 17, 2) float32 in [0, 1]
    label: DirectionLabel
    sample_id: str


def validate_kick_sample(sample: KickSample) -> None:
    """Raise InputError unless the sample meets every structural invariant."""
    f, k = sample.frames, sample.keypoints
    if f.ndim != 4 or f.shape[0] != SEQ_LEN or f.shape[3] != 3:
        raise InputError(f"frames must be (8, H, W, 3), got {f.shape}")
    if k.shape != (SEQ_LEN, N_KEYPOINTS, 2):
        raise InputError(f"keypoints must be (8, 17, 2), got {k.shape}")
    if f.min() < 0.0 or f.max() > 1.0:
        raise InputError("frame pixel values must lie in [0, 1]")
    if k.min() < 0.0 or k.max() > 1.0:
        raise InputError("normalized keypoints must lie in [0, 1]")
    if not isinstance(sample.label, DirectionLabel):
        raise InputError(f"label must be a DirectionLabel, got {type(sample.label)}")


def normalize_keypoints(pose: PoseFrame, width: float, height: float) -> np.ndarray:
    """Keypoint (x, y) divided by frame width/height; confidence dropped."""
    if width <= 0 or height <= 0:
        raise InvalidFrameGeometry(f"frame dimensions must be positive, got {width}x{height}")
    out = pose.xy().copy()
    out[:, 0] /= width
    out[:, 1] /= height
    return out


def denormalize_keypoints(coords: np.ndarray, width: float, height: float) -> np.ndarray:
    """Inverse of normalize_keypoints on the coordinate array."""
    if width <= 0 or height <= 0:
        raise InvalidFrameGeometry(f"frame dimensions must be positive, got {width}x{height}")
    out = np.asarray(coords, dtype=np.float64).copy()
    out[:, 0] *= width
    out[:, 1] *= height
    return out


# ---------------------------------------------------------------------------
# Deterministic stratified splitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitAssignment:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]

    def split_of(self, i: int) -> Split:
        if i in set(self.val):
            return Split.VAL
        if i in set(self.test):
            return Split.TEST
        return Split.TRAIN


def _largest_remainder(quotas: list[float], caps: list[int], total: int) -> list[int]:
    """Integer allocation summing to `total`, each within its cap, each
    within 1 of its real-valued quota wherever the caps allow."""
    alloc = [min(int(math.floor(q)), c) for q, c in zip(quotas, caps)]
    remaining = total - sum(alloc)
    # Hand out the remainder by descending fractional part, stable in index.
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - math.floor(quotas[i])), i))
    while remaining > 0:
        progressed = False
        for i in order:
            if remaining == 0:
                break
            if alloc[i] < caps[i]:
                alloc[i] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            raise InputError("split allocation infeasible: caps below requested total")
    return alloc


def split_dataset(
    n_samples: int, labels: Sequence[DirectionLabel], seed: int
) -> SplitAssignment:
    """Deterministic stratified 70/15/15 split.

    Val and test each get floor(0.15*n) samples; the remainder goes to
    train. Within val/test the per-label counts track the global label
    proportions to within one sample.
    """
    if n_samples < 3:
        raise InsufficientData(f"need at least 3 samples to split, got {n_samples}")
    if len(labels) != n_samples:
        raise InputError(f"labels length {len(labels)} != n_samples {n_samples}")

    n_val = n_test = int(math.floor(0.15 * n_samples))
    rng = np.random.default_rng(seed)

    by_label: dict[DirectionLabel, list[int]] = {lab: [] for lab in _LABEL_ORDER}
    for i, lab in enumerate(labels):
        by_label[lab].append(i)
    groups = [lab for lab in _LABEL_ORDER if by_label[lab]]
    pools = {lab: list(rng.permutation(by_label[lab])) for lab in groups}

    counts = [len(by_label[lab]) for lab in groups]
    quotas = [c * n_val / n_samples for c in counts]
    val_alloc = _largest_remainder(quotas, counts, n_val)
    test_caps = [c - a for c, a in zip(counts, val_alloc)]
    test_alloc = _largest_remainder(quotas, test_caps, n_test)

    val: list[int] = []
    test: list[int] = []
    train: list[int] = []
    for lab, nv, nt in zip(groups, val_alloc, test_alloc):
        pool = pools[lab]
        val.extend(int(i) for i in pool[:nv])
        test.extend(int(i) for i in pool[nv:nv + nt])
        train.extend(int(i) for i in pool[nv + nt:])
    return SplitAssignment(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)))


# ---------------------------------------------------------------------------
# Dataset manifest (single JSON document)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleRef:
    sample_id: str
    path: str
    label: DirectionLabel
    split: Split


@dataclass
class DatasetManifest:
    samples: list[SampleRef]
    seed: int
    threshold: float

    def ids_for_split(self, split: Split) -> list[str]:
        return [s.sample_id for s in self.samples if s.split is split]


def manifest_to_json(manifest: DatasetManifest) -> str:
    doc = {
        "seed": manifest.seed,
        "threshold": manifest.threshold,
        "samples": [
            {"id": s.sample_id, "path": s.path, "label": s.label.value, "split": s.split.value}
            for s in manifest.samples
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(manifest_to_json(manifest))


def manifest_from_json(text: str) -> DatasetManifest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ManifestParseError(f"line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ManifestParseError("top-level value must be a JSON object")
    for key in ("seed", "threshold", "samples"):
        if key not in doc:
            raise ManifestParseError(f"missing required field {key!r}")
    samples = []
    for i, entry in enumerate(doc["samples"]):
        for key in ("id", "path", "label", "split"):
            if key not in entry:
                raise ManifestParseError(f"sample {i}: missing field {key!r}")
        try:
            label = DirectionLabel(entry["label"])
        except ValueError:
            raise ManifestParseError(f"sample {i}: unknown label {entry['label']!r}") from None
        try:
            split = Split(entry["split"])
        except ValueError:
            raise ManifestParseError(f"sample {i}: unknown split {entry['split']!r}") from None
        samples.append(SampleRef(str(entry["id"]), str(entry["path"]), label, split))
    return DatasetManifest(samples=samples, seed=int(doc["seed"]), threshold=float(doc["threshold"]))


def read_manifest(path) -> DatasetManifest:
    return manifest_from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# Frame-record stream codec (line-delimited JSON)
# ---------------------------------------------------------------------------

def frame_record_to_json(record: FrameRecord) -> str:
    doc: dict = {
        "frame": record.frame_index,
        "detections": [
            {
                "cls": d.cls.value,
                "bbox": [d.box.x1, d.box.y1, d.box.x2, d.box.y2],
                "conf": d.conf,
            }
            for d in record.detections
        ],
    }
    if record.pose is not None:
        doc["pose"] = {"kps": record.pose.keypoints.tolist()}
    if record.image_ref is not None:
        doc["image"] = record.image_ref
    return json.dumps(doc, sort_keys=True)


def frame_record_from_json(text: str) -> FrameRecord:
    """Parse one stream line. Unknown fields are ignored; a missing
    "pose" key means no pose was extracted for that frame."""
    doc = json.loads(text)
    if not isinstance(doc, dict) or "frame" not in doc:
        raise InputError("frame record must be an object with a 'frame' field")
    detections = []
    for d in doc.get("detections", []):
        x1, y1, x2, y2 = d["bbox"]
        detections.append(
            Detection(ObjectClass(d["cls"]), BoundingBox(x1, y1, x2, y2), float(d["conf"]))
        )
    pose = None
    if doc.get("pose") is not None:
        pose = PoseFrame(doc["pose"]["kps"])
    return FrameRecord(
        frame_index=int(doc["frame"]),
        detections=detections,
        pose=pose,
        image_ref=doc.get("image"),
    )


def write_stream_jsonl(stream: Sequence[FrameRecord], path) -> None:
    with open(path, "w") as fh:
        for record in stream:
            fh.write(frame_record_to_json(record) + "\n")


def read_stream_jsonl(path) -> list[FrameRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(frame_record_from_json(line))
            except (json.JSONDecodeError, KeyError, ValueError, InputError) as e:
                raise ManifestParseError(f"{path}: line {lineno}: {e}") from None
    return records
