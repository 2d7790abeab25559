"""Deterministic synthetic penalty-kick scenario generator.

Stands in for real broadcast footage: a stick-figure shooter runs up to a
static ball in front of a net, and the shot direction is encoded as a
shoulder/hip-line rotation (plus a plant-foot offset) that switches on
only in the final stretch of the run-up. Because the cue is concentrated
near ball contact, datasets segmented at tighter ratio thresholds carry
more signal than loose ones, which is the trend the evaluation harnesses
measure.

Layout and kinematics live in *world units* (pixels at camera scale 1);
`camera_scale` multiplies every coordinate, modelling zoom. Keypoint
noise is injected before scaling so the normalized ratio trace is
scale-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import cv2
import numpy as np

from .core import (
    KP_LEFT_ANKLE,
    KP_LEFT_HIP,
    KP_LEFT_SHOULDER,
    KP_RIGHT_ANKLE,
    KP_RIGHT_HIP,
    KP_RIGHT_SHOULDER,
    BoundingBox,
    DatasetManifest,
    Detection,
    DirectionLabel,
    FrameRecord,
    KickSample,
    ObjectClass,
    PoseFrame,
    SampleRef,
    Split,
    normalize_keypoints,
    split_dataset,
)
from .errors import GenerationFailed, InputError, KickpredError
from .segmentation import SamplePlan, ThresholdConfig, materialize_sample, plan_sample

# Scene layout as fractions of the canvas (world units at camera scale 1).
# Everything stays below 0.47 so a 2.0 zoom still fits on the canvas.
_NET_CENTER = (0.23, 0.075)
_NET_HALF = (0.10, 0.0275)
_KEEPER_POS = (0.23, 0.125)
_BALL_CENTER = (0.23, 0.28)
_BALL_RADIUS = 0.009
_REF_DIST = math.hypot(_BALL_CENTER[0] - _NET_CENTER[0], _BALL_CENTER[1] - _NET_CENTER[1])

_START_RATIO = 0.90
# Piecewise-linear ratio plan (run-up fraction -> planned ratio). The flat
# tail keeps the trace ~6 sigma above 0.15 until the strike frame, which is
# forced to 0.02, so the 0.15 crossing is always the final frame while the
# 0.35 and 0.25 crossings land before / around the rotation-cue onset.
_RATIO_ANCHORS = ((0.0, _START_RATIO), (0.75, 0.35), (0.86, 0.27), (0.89, 0.24), (1.0, 0.24))
_FINAL_RATIO = 0.02

# Body proportions (world units).
_LEG_LEN = 0.105
_TORSO_LEN = 0.13
_SHOULDER_HALF = 0.07
_HIP_HALF = 0.04
_HEAD_RISE = 0.045
_STRIDE_BASE = 0.06
_STRIDE_AMP = 0.02

_SKELETON_EDGES = (
    (0, 1), (0, 2), (1, 3), (2, 4),          # head
    (5, 6), (5, 7), (7, 9), (6, 8), (8, 10),  # shoulders / arms
    (5, 11), (6, 12), (11, 12),               # trunk
    (11, 13), (13, 15), (12, 14), (14, 16),   # legs
)
# Trunk edges are represented by the filled torso quad when a pose is
# rendered; stroking them too would bury the facing hue under bone pixels.
_TRUNK_EDGES = {(5, 6), (5, 11), (6, 12), (11, 12)}


@dataclass(frozen=True)
class ScenarioParams:
    """Knobs for one synthetic kick."""

    label: DirectionLabel
    n_frames: int = 148
    camera_scale: float = 1.5
    cue_strength: float = 0.8          # shoulder/hip rotation magnitude, radians
    cue_onset: float = 0.85            # fraction of the run-up; cue active after it
    keypoint_noise_sigma: float = 1.0  # pixels, at a 224-px canvas and scale 1
    dropout_prob: float = 0.08         # chance a frame fails the pose-validity test
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 8:
            raise InputError(f"n_frames must be >= 8, got {self.n_frames}")
        if not (0.0 < self.cue_onset < 1.0):
            raise InputError(f"cue_onset must be in (0,1), got {self.cue_onset}")
        if not (0.5 <= self.camera_scale <= 2.0):
            raise InputError(f"camera_scale must be in [0.5, 2.0], got {self.camera_scale}")
        if self.cue_strength < 0:
            raise InputError(f"cue_strength must be >= 0, got {self.cue_strength}")
        if not (0.0 <= self.dropout_prob <= 1.0):
            raise InputError(f"dropout_prob must be in [0,1], got {self.dropout_prob}")


@dataclass(frozen=True)
class ScenarioGeometry:
    """What the rotation oracle needs to read a scenario's keypoints."""

    base_shoulder_angle: float
    cue_strength: float


@dataclass
class Scenario:
    """A generated kick: frame records plus ground-truth kinematics."""

    params: ScenarioParams
    frame_size: int
    records: list[FrameRecord]
    geometry: ScenarioGeometry
    rotations: np.ndarray     # (n,) applied shoulder rotation per frame
    plan_ratios: np.ndarray   # (n,) planned (noise-free) ratio per frame
    _static_shapes: dict = field(repr=False, default_factory=dict)

    @property
    def label(self) -> DirectionLabel:
        return self.params.label

    def render_frame(self, record: FrameRecord) -> np.ndarray:
        return _render(record, self._static_shapes, self.frame_size)


def _plan_ratio(u: float) -> float:
    for (u0, r0), (u1, r1) in zip(_RATIO_ANCHORS, _RATIO_ANCHORS[1:]):
        if u <= u1:
            t = (u - u0) / (u1 - u0)
            return r0 + t * (r1 - r0)
    return _RATIO_ANCHORS[-1][1]


def _rot(v: tuple[float, float], angle: float) -> tuple[float, float]:
    c, s = math.cos(angle), math.sin(angle)
    return (v[0] * c - v[1] * s, v[0] * s + v[1] * c)


def _unit(angle: float) -> tuple[float, float]:
    return (math.cos(angle), math.sin(angle))


def generate_scenario(params: ScenarioParams, frame_size: int = 224) -> Scenario:
    """Build one kick scenario, deterministic under params.seed.

    The kicking ankle follows the planned ratio curve exactly (rotational
    wobble around the ball preserves distance); the strike frame is
    projected back onto its planned radius after noise so the final ratio
    is below 0.05 by construction.
    """
    rng = np.random.default_rng(params.seed)
    S = float(frame_size)
    n = params.n_frames
    scale = params.camera_scale
    sigma_w = params.keypoint_noise_sigma * (S / 224.0)

    # Per-scenario draws, consumed in a fixed order regardless of label so
    # that zero-cue scenarios are identical across labels under one seed.
    side = 1.0 if rng.random() < 0.5 else -1.0
    approach_elev = rng.uniform(0.50, 0.70)
    wobble_amp = rng.uniform(0.01, 0.04)
    wobble_freq = rng.uniform(1.0, 2.0)
    wobble_phase = rng.uniform(0.0, 2.0 * math.pi)
    gait_freq = rng.uniform(3.0, 5.0)
    gait_phase = rng.uniform(0.0, 2.0 * math.pi)
    kick_right = rng.random() < 0.5
    rot_noise = rng.uniform(-1.0, 1.0)

    if params.label is DirectionLabel.RIGHT:
        rot_target = params.cue_strength
    elif params.label is DirectionLabel.LEFT:
        rot_target = -params.cue_strength
    else:
        rot_target = rot_noise * 0.9 * params.cue_strength / 4.0

    ball = np.array(_BALL_CENTER) * S
    away = np.array([side * math.sin(approach_elev), math.cos(approach_elev)])
    facing = math.atan2(-away[1], -away[0])
    base_shoulder_angle = facing - math.pi / 2.0
    onset_frame = int(math.floor(params.cue_onset * n))
    ref_w = _REF_DIST * S

    records: list[FrameRecord] = []
    rotations = np.zeros(n)
    plan_ratios = np.zeros(n)
    net_box = BoundingBox(
        (_NET_CENTER[0] - _NET_HALF[0]) * S * scale,
        (_NET_CENTER[1] - _NET_HALF[1]) * S * scale,
        (_NET_CENTER[0] + _NET_HALF[0]) * S * scale,
        (_NET_CENTER[1] + _NET_HALF[1]) * S * scale,
    )
    keeper_box = BoundingBox(
        (_KEEPER_POS[0] - 0.018) * S * scale,
        (_KEEPER_POS[1] - 0.032) * S * scale,
        (_KEEPER_POS[0] + 0.018) * S * scale,
        (_KEEPER_POS[1] + 0.032) * S * scale,
    )
    ball_box = BoundingBox(
        ball[0] * scale - _BALL_RADIUS * S * scale,
        ball[1] * scale - _BALL_RADIUS * S * scale,
        ball[0] * scale + _BALL_RADIUS * S * scale,
        ball[1] * scale + _BALL_RADIUS * S * scale,
    )

    for t in range(n):
        u = t / (n - 1)
        plan = _FINAL_RATIO if t == n - 1 else _plan_ratio(u)
        plan_ratios[t] = plan
        rot = rot_target if t > onset_frame else 0.0
        rotations[t] = rot

        wobble = wobble_amp * math.sin(2 * math.pi * wobble_freq * u + wobble_phase)
        gait = math.sin(2 * math.pi * gait_freq * u + gait_phase)
        d = plan * ref_w
        kick_ankle = ball + d * np.array(_rot(tuple(away), wobble))
        stride = (_STRIDE_BASE + _STRIDE_AMP * gait) * S
        plant_lat = 0.18 * math.cos(2 * math.pi * gait_freq * u + gait_phase)
        if params.cue_strength > 0:
            plant_lat += 0.10 * (rot / params.cue_strength)
        plant_ankle = ball + (d + stride) * np.array(_rot(tuple(away), wobble + plant_lat))

        mid = (kick_ankle + plant_ankle) / 2.0
        root = mid + np.array([0.0, -_LEG_LEN * S])
        hip_dir = np.array(_unit(base_shoulder_angle + rot))
        hip_l = root - hip_dir * _HIP_HALF * S
        hip_r = root + hip_dir * _HIP_HALF * S
        sc = root + np.array([0.0, -_TORSO_LEN * S])
        sh_dir = np.array(_unit(base_shoulder_angle + rot))
        sh_l = sc - sh_dir * _SHOULDER_HALF * S
        sh_r = sc + sh_dir * _SHOULDER_HALF * S
        nose = sc + np.array([0.0, -_HEAD_RISE * S])
        eye_l = nose - sh_dir * 0.010 * S + np.array([0.0, -0.005 * S])
        eye_r = nose + sh_dir * 0.010 * S + np.array([0.0, -0.005 * S])
        ear_l = nose - sh_dir * 0.016 * S
        ear_r = nose + sh_dir * 0.016 * S
        arm_swing = 0.015 * S * gait * np.array(_unit(facing))
        elb_l = sh_l + np.array([0.0, 0.048 * S]) - arm_swing
        elb_r = sh_r + np.array([0.0, 0.048 * S]) + arm_swing
        wr_l = elb_l + np.array([0.0, 0.042 * S]) - arm_swing
        wr_r = elb_r + np.array([0.0, 0.042 * S]) + arm_swing
        ankle_l, ankle_r = (plant_ankle, kick_ankle) if kick_right else (kick_ankle, plant_ankle)
        knee_l = (hip_l + ankle_l) / 2.0 + np.array([0.0, -0.005 * S])
        knee_r = (hip_r + ankle_r) / 2.0 + np.array([0.0, -0.005 * S])

        xy = np.stack([
            nose, eye_l, eye_r, ear_l, ear_r,
            sh_l, sh_r, elb_l, elb_r, wr_l, wr_r,
            hip_l, hip_r, knee_l, knee_r, ankle_l, ankle_r,
        ])
        xy = xy + rng.normal(0.0, sigma_w, size=xy.shape)

        # Strike frame: pin the kicking ankle back onto its planned radius
        # so the final ratio is exact regardless of noise.
        if t == n - 1:
            ki = KP_RIGHT_ANKLE if kick_right else KP_LEFT_ANKLE
            v = xy[ki] - ball
            norm = float(np.hypot(v[0], v[1]))
            xy[ki] = ball + (d / norm) * v if norm > 0 else ball + d * away

        raw_conf = rng.uniform(0.0, 1.0, size=17)
        if rng.random() < params.dropout_prob:
            conf = 0.20 + raw_conf * 0.35   # mean well under the 0.6 validity bar
        else:
            conf = 0.75 + raw_conf * 0.24

        pose = PoseFrame(np.column_stack([xy * scale, conf]))
        pad = 0.012 * S * scale
        sxy = xy * scale
        shooter_box = BoundingBox(
            max(0.0, sxy[:, 0].min() - pad),
            max(0.0, sxy[:, 1].min() - pad),
            sxy[:, 0].max() + pad,
            sxy[:, 1].max() + pad,
        )
        records.append(
            FrameRecord(
                frame_index=t,
                detections=[
                    Detection(ObjectClass.BALL, ball_box, 0.93),
                    Detection(ObjectClass.NET, net_box, 0.97),
                    Detection(ObjectClass.GOALKEEPER, keeper_box, 0.95),
                    Detection(ObjectClass.SHOOTER, shooter_box, 0.91),
                ],
                pose=pose,
            )
        )

    static = {
        "base_shoulder_angle": base_shoulder_angle,
        "net_box": net_box,
        "keeper_box": keeper_box,
        "ball_center": (float(ball[0] * scale), float(ball[1] * scale)),
        "ball_radius": _BALL_RADIUS * S * scale,
        "keeper_pos": (float(_KEEPER_POS[0] * S * scale), float(_KEEPER_POS[1] * S * scale)),
        "keeper_size": 0.03 * S * scale,
    }
    return Scenario(
        params=params,
        frame_size=frame_size,
        records=records,
        geometry=ScenarioGeometry(base_shoulder_angle, params.cue_strength),
        rotations=rotations,
        plan_ratios=plan_ratios,
        _static_shapes=static,
    )


def _render(record: FrameRecord, static: dict, frame_size: int) -> np.ndarray:
    """Rasterize one frame: flat pitch, net, keeper, ball, shooter bones."""
    S = frame_size
    img = np.empty((S, S, 3), dtype=np.uint8)
    img[:] = (34, 102, 34)
    thick = max(1, S // 112)

    nb = static["net_box"]
    p1 = (int(round(nb.x1)), int(round(nb.y1)))
    p2 = (int(round(nb.x2)), int(round(nb.y2)))
    cv2.rectangle(img, p1, p2, (235, 235, 235), thick)
    for fx in (0.33, 0.67):
        x = int(round(nb.x1 + fx * (nb.x2 - nb.x1)))
        cv2.line(img, (x, p1[1]), (x, p2[1]), (235, 235, 235), 1)

    kx, ky = static["keeper_pos"]
    ks = static["keeper_size"]
    cv2.line(img, (int(kx), int(ky - ks)), (int(kx), int(ky + ks)), (70, 130, 220), thick)
    cv2.line(img, (int(kx - ks * 0.8), int(ky - ks * 0.3)),
             (int(kx + ks * 0.8), int(ky - ks * 0.3)), (70, 130, 220), thick)
    cv2.circle(img, (int(kx), int(ky - ks * 1.3)), max(1, int(ks * 0.35)), (70, 130, 220), -1)

    bx, by = static["ball_center"]
    br = max(1, int(round(static["ball_radius"])))
    cv2.circle(img, (int(round(bx)), int(round(by))), br, (250, 250, 250), -1)
    cv2.circle(img, (int(round(bx)), int(round(by))), br, (30, 30, 30), 1)

    if record.pose is not None:
        pts = record.pose.xy()
        bone_thick = max(2, thick)
        v = pts[KP_RIGHT_SHOULDER] - pts[KP_LEFT_SHOULDER]
        rot = math.atan2(v[1], v[0]) - static["base_shoulder_angle"]
        rot = math.atan2(math.sin(rot), math.cos(rot))
        # Torso facing rendered as a hue shift (red vs blue), so the signed
        # orientation survives pooling regardless of the quad's shape.
        warm = int(np.clip(150 + 125 * math.sin(rot), 0, 255))
        cool = int(np.clip(150 - 125 * math.sin(rot), 0, 255))
        quad = np.array([
            pts[KP_LEFT_SHOULDER], pts[KP_RIGHT_SHOULDER],
            pts[KP_RIGHT_HIP], pts[KP_LEFT_HIP],
        ]).round().astype(np.int32)
        cv2.fillConvexPoly(img, quad, (warm, 60, cool))
        for a, b in _SKELETON_EDGES:
            if (a, b) in _TRUNK_EDGES:
                continue
            pa = (int(round(pts[a, 0])), int(round(pts[a, 1])))
            pb = (int(round(pts[b, 0])), int(round(pts[b, 1])))
            cv2.line(img, pa, pb, (235, 70, 50), bone_thick)
        for x, y in pts:
            cv2.circle(img, (int(round(x)), int(round(y))), max(1, thick - 1), (250, 120, 90), -1)
    return img


def render_scenario_frames(scenario: Scenario) -> None:
    """Attach rendered pixels to every record (for streaming providers)."""
    for record in scenario.records:
        if record.image is None:
            record.image = scenario.render_frame(record)


def planned_keypoints(scenario: Scenario, plan: SamplePlan) -> np.ndarray:
    """Normalized (8,17,2) keypoints at the plan's chosen frames, pixel-free."""
    S = scenario.frame_size
    out = [
        normalize_keypoints(scenario.records[pos].pose, S, S).astype(np.float32)
        for pos in plan.chosen_indices
    ]
    return np.stack(out)


def oracle_classify(keypoints: np.ndarray, geometry: ScenarioGeometry) -> DirectionLabel:
    """Direction read directly from the shoulder line of the last 3 frames.

    Independent of the neural model: the mean signed rotation of the
    left-to-right shoulder vector against the scenario's base orientation
    decides the label with a half-cue-strength dead zone.
    """
    kps = np.asarray(keypoints)
    if kps.ndim != 3 or kps.shape[1:] != (17, 2):
        raise InputError(f"expected (T, 17, 2) keypoints, got {kps.shape}")
    rots = []
    for t in range(kps.shape[0] - 3, kps.shape[0]):
        v = kps[t, KP_RIGHT_SHOULDER] - kps[t, KP_LEFT_SHOULDER]
        ang = math.atan2(v[1], v[0]) - geometry.base_shoulder_angle
        rots.append(math.atan2(math.sin(ang), math.cos(ang)))  # wrap to (-pi, pi]
    mean_rot = float(np.mean(rots))
    eps = geometry.cue_strength / 2.0
    if mean_rot > eps:
        return DirectionLabel.RIGHT
    if mean_rot < -eps:
        return DirectionLabel.LEFT
    return DirectionLabel.MIDDLE


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamsDistribution:
    """Per-sample parameter draws for a corpus.

    Frame counts are restricted to values where the uniform sampling
    stride keeps two of the last three sampled frames inside the cue
    window, which the rotation oracle's decision margin requires.
    """

    n_frames_choices: tuple[int, ...] = (127, 134, 141, 148, 155)
    camera_scale_range: tuple[float, float] = (1.2, 2.0)
    cue_strength: float = 0.8
    cue_onset: float = 0.85
    keypoint_noise_sigma: float = 1.0
    dropout_prob: float = 0.08

    @classmethod
    def strong_cue(cls) -> "ParamsDistribution":
        """High-signal preset for learnability checks: bigger rotation,
        earlier onset, less noise."""
        return cls(
            cue_strength=1.0,
            cue_onset=0.70,
            keypoint_noise_sigma=0.5,
            dropout_prob=0.03,
        )

    def draw(self, label: DirectionLabel, rng: np.random.Generator) -> ScenarioParams:
        n = int(rng.choice(self.n_frames_choices))
        scale = float(rng.uniform(*self.camera_scale_range))
        seed = int(rng.integers(0, 2**62))
        return ScenarioParams(
            label=label,
            n_frames=n,
            camera_scale=scale,
            cue_strength=self.cue_strength,
            cue_onset=self.cue_onset,
            keypoint_noise_sigma=self.keypoint_noise_sigma,
            dropout_prob=self.dropout_prob,
            seed=seed,
        )


_MAX_RETRIES = 10


@dataclass
class DatasetBundle:
    """In-memory corpus: samples, plans, geometries, manifest, splits."""

    manifest: DatasetManifest
    samples: dict[str, KickSample]
    plans: dict[str, SamplePlan]
    geometries: dict[str, ScenarioGeometry]
    scenario_params: dict[str, ScenarioParams]
    frame_size: int

    def arrays_for_split(self, split: Split):
        """(frames float32 (N,8,H,W,3), keypoints float32 (N,8,17,2), labels int64)."""
        ids = self.manifest.ids_for_split(split)
        frames = np.stack([self.samples[i].frames for i in ids]) if ids else np.zeros(
            (0, 8, self.frame_size, self.frame_size, 3), dtype=np.float32
        )
        kps = np.stack([self.samples[i].keypoints for i in ids]) if ids else np.zeros(
            (0, 8, 17, 2), dtype=np.float32
        )
        labels = np.array([self.samples[i].label.index for i in ids], dtype=np.int64)
        return frames, kps, labels


def generate_labels(n: int) -> list[DirectionLabel]:
    """Balanced label sequence; class counts differ by at most one."""
    order = (DirectionLabel.LEFT, DirectionLabel.MIDDLE, DirectionLabel.RIGHT)
    return [order[i % 3] for i in range(n)]


def generate_dataset(
    n: int,
    seed: int,
    dist: Optional[ParamsDistribution] = None,
    threshold: float = 0.15,
    frame_size: int = 224,
    min_pose_conf: float = 0.6,
) -> DatasetBundle:
    """Generate, segment, and split a corpus of n scenarios.

    Each sample derives its own sub-seed from (seed, index), so the
    underlying scenarios are identical across thresholds and generation
    order. A scenario that fails segmentation is regenerated with an
    incremented retry counter in its seed material.
    """
    if n < 3:
        raise InputError(f"need n >= 3 to build a dataset, got {n}")
    dist = dist or ParamsDistribution()
    cfg = ThresholdConfig(ratio=threshold, min_pose_conf=min_pose_conf)
    labels = generate_labels(n)

    samples: dict[str, KickSample] = {}
    plans: dict[str, SamplePlan] = {}
    geometries: dict[str, ScenarioGeometry] = {}
    scenario_params: dict[str, ScenarioParams] = {}
    for i, label in enumerate(labels):
        sample_id = f"kick_{i:05d}"
        last_err: Optional[Exception] = None
        for retry in range(_MAX_RETRIES):
            rng = np.random.default_rng([seed, i, retry])
            params = dist.draw(label, rng)
            scenario = generate_scenario(params, frame_size)
            try:
                plan = plan_sample(scenario.records, cfg)
                sample = materialize_sample(
                    scenario.records, plan, label, sample_id,
                    image_source=scenario.render_frame,
                )
            except KickpredError as e:
                last_err = e
                continue
            samples[sample_id] = sample
            plans[sample_id] = plan
            geometries[sample_id] = scenario.geometry
            scenario_params[sample_id] = params
            break
        else:
            raise GenerationFailed(
                f"sample {i} failed segmentation after {_MAX_RETRIES} retries: {last_err}"
            )

    assignment = split_dataset(n, labels, seed)
    split_of = {}
    for idx in assignment.val:
        split_of[idx] = Split.VAL
    for idx in assignment.test:
        split_of[idx] = Split.TEST
    refs = [
        SampleRef(
            sample_id=f"kick_{i:05d}",
            path=f"samples/kick_{i:05d}",
            label=labels[i],
            split=split_of.get(i, Split.TRAIN),
        )
        for i in range(n)
    ]
    manifest = DatasetManifest(samples=refs, seed=seed, threshold=threshold)
    return DatasetBundle(
        manifest=manifest,
        samples=samples,
        plans=plans,
        geometries=geometries,
        scenario_params=scenario_params,
        frame_size=frame_size,
    )
