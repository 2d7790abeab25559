"""Approach-sequence segmentation from detection/pose streams.

A stream is cut at the first frame where the kicker's nearest-foot-to-ball
distance, normalized by the frozen ball-to-net reference distance, falls
to the configured ratio. Eight frames are then sampled at a fixed stride
across the segment, low-confidence pose frames are repaired from their
nearest valid neighbors, and the result is packaged as a model-ready
sample. All ratios are dimensionless, so the segmentation is invariant to
camera zoom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import cv2
import numpy as np

from .core import (
    KP_LEFT_ANKLE,
    KP_RIGHT_ANKLE,
    BoundingBox,
    DirectionLabel,
    FrameRecord,
    KickSample,
    ObjectClass,
    PoseFrame,
    normalize_keypoints,
)
from .errors import (
    DegenerateReference,
    InputError,
    MissingReferenceObjects,
    NoEndpoint,
    NoValidFoot,
    NoValidPoseInSegment,
    SequenceTooShort,
)


@dataclass(frozen=True)
class ThresholdConfig:
    """Segmentation parameters: trigger ratio, pose validity floor, length."""

    ratio: float
    min_pose_conf: float = 0.6
    seq_len: int = 8

    def __post_init__(self):
        if not (0.0 < self.ratio < 1.0):
            raise InputError(f"threshold ratio must be in (0,1), got {self.ratio}")
        if not (0.0 <= self.min_pose_conf <= 1.0):
            raise InputError(f"min_pose_conf must be in [0,1], got {self.min_pose_conf}")
        if self.seq_len < 2:
            raise InputError(f"seq_len must be >= 2, got {self.seq_len}")


@dataclass
class RatioTrace:
    """Per-frame normalized foot-to-ball ratios; None marks frames where
    the ratio could not be computed (no pose/foot/ball, or before the
    reference distance was established)."""

    entries: list[tuple[int, Optional[float]]]
    reference_distance: float


def bbox_center(box: BoundingBox) -> tuple[float, float]:
    return ((box.x1 + box.x2) / 2.0, (box.y1 + box.y2) / 2.0)


def reference_distance(ball_start: BoundingBox, net_start: BoundingBox) -> float:
    """Distance between the starting ball center and the net midpoint.

    Frozen once per stream; all subsequent foot-to-ball distances are
    expressed relative to it.
    """
    bx, by = bbox_center(ball_start)
    nx, ny = bbox_center(net_start)
    dist = math.hypot(bx - nx, by - ny)
    if dist <= 0.0:
        raise DegenerateReference("ball and net centers coincide")
    return dist


def foot_to_ball_distance(pose: PoseFrame, ball: BoundingBox) -> float:
    """Distance from the nearer ankle to the ball center."""
    bx, by = bbox_center(ball)
    dists = []
    for idx in (KP_LEFT_ANKLE, KP_RIGHT_ANKLE):
        x, y, conf = pose.keypoints[idx]
        if conf > 0.0:
            dists.append(math.hypot(x - bx, y - by))
    if not dists:
        raise NoValidFoot("both ankle keypoints have zero confidence")
    return min(dists)


def normalized_ratio(foot_dist: float, ref_dist: float) -> float:
    if ref_dist <= 0.0:
        raise DegenerateReference(f"reference distance must be positive, got {ref_dist}")
    if foot_dist < 0.0:
        raise InputError(f"foot distance must be >= 0, got {foot_dist}")
    return foot_dist / ref_dist


def find_endpoint(trace: RatioTrace, cfg: ThresholdConfig) -> int:
    """First frame index whose ratio is present and <= the threshold.

    Frames with a missing ratio are skipped, not interpolated.
    """
    if not trace.entries:
        raise NoEndpoint("empty ratio trace")
    for frame_index, ratio in trace.entries:
        if ratio is not None and ratio <= cfg.ratio:
            return frame_index
    raise NoEndpoint(f"ratio never fell to {cfg.ratio}")


def uniform_sample_indices(n_frames: int, k: int = 8) -> list[int]:
    """k indices at stride floor((n-1)/(k-1)) starting from 0.

    For a 100-frame segment and k=8 this selects 0,14,28,...,98.
    """
    if n_frames < k:
        raise SequenceTooShort(f"segment has {n_frames} frames, need at least {k}")
    step = (n_frames - 1) // (k - 1)
    return [j * step for j in range(k)]


def validate_pose_frame(pose: Optional[PoseFrame], min_conf: float) -> bool:
    """True iff the mean keypoint confidence is strictly above min_conf."""
    if pose is None:
        return False
    return float(np.mean(pose.conf())) > min_conf


def nearest_valid_index(idx: int, validity: Sequence[bool]) -> int:
    """Closest valid position to idx; ties broken toward the later frame."""
    if validity[idx]:
        return idx
    best: Optional[int] = None
    best_dist = len(validity) + 1
    for j, ok in enumerate(validity):
        if not ok:
            continue
        d = abs(j - idx)
        if d < best_dist or (d == best_dist and j > best):
            best, best_dist = j, d
    if best is None:
        raise NoValidPoseInSegment("no frame in the segment passes the validity test")
    return best


def repair_indices(indices: Sequence[int], validity: Sequence[bool]) -> list[int]:
    """Replace invalid positions by their nearest valid neighbor and
    re-impose ascending order. Duplicates are allowed."""
    return sorted(nearest_valid_index(i, validity) for i in indices)


# ---------------------------------------------------------------------------
# Whole-stream planning and sample materialization
# ---------------------------------------------------------------------------

@dataclass
class SamplePlan:
    """Everything decided while cutting a stream, before touching pixels."""

    endpoint_frame: int
    endpoint_pos: int
    raw_indices: list[int]
    chosen_indices: list[int]
    repairs: list[tuple[int, int]]
    trace: RatioTrace
    reference_pos: int

    def to_sidecar(self) -> dict:
        return {
            "endpoint": self.endpoint_frame,
            "indices": self.chosen_indices,
            "repairs": [list(r) for r in self.repairs],
            "reference_distance": self.trace.reference_distance,
            "ratio_trace": [[i, r] for i, r in self.trace.entries],
        }


def _find_reference(stream: Sequence[FrameRecord]) -> tuple[int, float]:
    for pos, record in enumerate(stream):
        ball = record.best_detection(ObjectClass.BALL)
        net = record.best_detection(ObjectClass.NET)
        if ball is not None and net is not None:
            return pos, reference_distance(ball.box, net.box)
    raise MissingReferenceObjects("no frame contains both ball and net detections")


def compute_trace(stream: Sequence[FrameRecord]) -> tuple[RatioTrace, int]:
    """Ratio trace over a stream, plus the position where the reference
    was frozen. Frames before that position, or without a usable foot or
    ball, contribute a missing entry."""
    ref_pos, ref_dist = _find_reference(stream)
    entries: list[tuple[int, Optional[float]]] = []
    for pos, record in enumerate(stream):
        ratio: Optional[float] = None
        if pos >= ref_pos and record.pose is not None:
            ball = record.best_detection(ObjectClass.BALL)
            if ball is not None:
                try:
                    ratio = normalized_ratio(
                        foot_to_ball_distance(record.pose, ball.box), ref_dist
                    )
                except NoValidFoot:
                    ratio = None
        entries.append((record.frame_index, ratio))
    return RatioTrace(entries=entries, reference_distance=ref_dist), ref_pos


def plan_sample(stream: Sequence[FrameRecord], cfg: ThresholdConfig) -> SamplePlan:
    """Cut a stream: freeze the reference, find the endpoint, sample at
    the uniform stride, and repair invalid pose frames. Pixel-free."""
    if not stream:
        raise InputError("empty stream")
    trace, ref_pos = compute_trace(stream)
    endpoint_frame = find_endpoint(trace, cfg)
    endpoint_pos = next(
        pos for pos, r in enumerate(stream) if r.frame_index == endpoint_frame
    )
    n_seg = endpoint_pos + 1  # endpoint frame included in the segment
    raw = uniform_sample_indices(n_seg, cfg.seq_len)
    validity = [
        validate_pose_frame(stream[pos].pose, cfg.min_pose_conf) for pos in range(n_seg)
    ]
    chosen = [nearest_valid_index(i, validity) for i in raw]
    repairs = [(old, new) for old, new in zip(raw, chosen) if old != new]
    return SamplePlan(
        endpoint_frame=endpoint_frame,
        endpoint_pos=endpoint_pos,
        raw_indices=raw,
        chosen_indices=sorted(chosen),
        repairs=repairs,
        trace=trace,
        reference_pos=ref_pos,
    )


def load_frame_image(record: FrameRecord, base_dir=None) -> np.ndarray:
    """Resolve a record's pixels: in-memory array first, file second."""
    if record.image is not None:
        return record.image
    if record.image_ref is None:
        raise InputError(f"frame {record.frame_index} carries no image")
    path = Path(record.image_ref)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise InputError(f"could not read frame image {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def assemble_arrays(
    stream: Sequence[FrameRecord],
    plan: SamplePlan,
    image_source: Optional[Callable[[FrameRecord], np.ndarray]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Model-ready arrays for a plan: (8,H,W,3) pixels in [0,1] and
    (8,17,2) keypoints normalized by the frame dimensions. The offline
    builder and the streaming pipeline both go through here, so the two
    paths produce bit-identical tensors."""
    source = image_source or load_frame_image
    frames = []
    keypoints = []
    for pos in plan.chosen_indices:
        record = stream[pos]
        img = np.asarray(source(record))
        if img.ndim != 3 or img.shape[2] != 3:
            raise InputError(f"frame {record.frame_index}: expected HxWx3 image, got {img.shape}")
        h, w = img.shape[:2]
        frames.append(img.astype(np.float32) / 255.0)
        keypoints.append(normalize_keypoints(record.pose, w, h).astype(np.float32))
    return np.stack(frames), np.stack(keypoints)


def materialize_sample(
    stream: Sequence[FrameRecord],
    plan: SamplePlan,
    label: DirectionLabel,
    sample_id: str,
    image_source: Optional[Callable[[FrameRecord], np.ndarray]] = None,
) -> KickSample:
    """Turn a plan into a packaged sample."""
    frames, keypoints = assemble_arrays(stream, plan, image_source)
    return KickSample(frames=frames, keypoints=keypoints, label=label, sample_id=sample_id)


def build_sample(
    stream: Sequence[FrameRecord],
    cfg: ThresholdConfig,
    label: DirectionLabel,
    sample_id: str = "sample",
    image_source: Optional[Callable[[FrameRecord], np.ndarray]] = None,
) -> tuple[KickSample, RatioTrace]:
    """Full offline path: plan, then materialize frames and keypoints."""
    plan = plan_sample(stream, cfg)
    sample = materialize_sample(stream, plan, label, sample_id, image_source)
    return sample, plan.trace


# ---------------------------------------------------------------------------
# On-disk sample directories: 8 rasters + one JSON sidecar
# ---------------------------------------------------------------------------

SIDECAR_NAME = "sample.json"


def write_sample_dir(sample: KickSample, plan: SamplePlan, out_dir) -> None:
    import json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(sample.frames):
        rgb = (frame * 255.0).round().astype(np.uint8)
        cv2.imwrite(str(out / f"frame_{i}.png"), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR))
    doc = plan.to_sidecar()
    doc.update(
        {
            "sample_id": sample.sample_id,
            "label": sample.label.value,
            "keypoints": sample.keypoints.tolist(),
            "frame_files": [f"frame_{i}.png" for i in range(len(sample.frames))],
        }
    )
    (out / SIDECAR_NAME).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_sample_dir(sample_dir) -> KickSample:
    import json

    d = Path(sample_dir)
    doc = json.loads((d / SIDECAR_NAME).read_text())
    frames = []
    for name in doc["frame_files"]:
        bgr = cv2.imread(str(d / name), cv2.IMREAD_COLOR)
        if bgr is None:
            raise InputError(f"could not read frame image {d / name}")
        frames.append(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0)
    return KickSample(
        frames=np.stack(frames),
        keypoints=np.asarray(doc["keypoints"], dtype=np.float32),
        label=DirectionLabel(doc["label"]),
        sample_id=doc["sample_id"],
    )
