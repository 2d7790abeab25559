"""Streaming inference: monitor a live frame stream, trigger at the ratio
threshold, assemble the 8-frame multi-modal input, and predict.

The state machine moves strictly forward through WAITING (no reference
distance yet), MONITORING (ratio watched per frame), TRIGGERED (threshold
crossed, inputs being assembled) and PREDICTED (terminal; further records
are ignored). Assembly reuses the offline segmentation code on the
buffered records, so a streamed prediction is bit-identical to running
the offline builder on the same frames.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterator, Optional, Union

import numpy as np
import torch

from .core import (
    DirectionLabel,
    FrameRecord,
    ObjectClass,
    frame_record_from_json,
)
from .errors import (
    InputError,
    NoValidFoot,
    ProviderParseError,
    StreamOrderError,
)
from .model import Checkpoint, DirectionPredictor, restore_model
from .segmentation import (
    ThresholdConfig,
    assemble_arrays,
    foot_to_ball_distance,
    load_frame_image,
    normalized_ratio,
    plan_sample,
    reference_distance,
)
from .synthgen import Scenario, ScenarioParams, generate_scenario, render_scenario_frames


class Phase(Enum):
    WAITING = "waiting"
    MONITORING = "monitoring"
    TRIGGERED = "triggered"
    PREDICTED = "predicted"


@dataclass
class PipelineState:
    phase: Phase = Phase.WAITING
    reference_distance: Optional[float] = None
    buffer: list[FrameRecord] = field(default_factory=list)
    trace: list[tuple[int, Optional[float]]] = field(default_factory=list)
    last_frame_index: Optional[int] = None


@dataclass
class PredictionResult:
    probabilities: np.ndarray           # (3,) over LEFT/MIDDLE/RIGHT
    label: DirectionLabel
    endpoint: Optional[int]
    indices: list[int]
    repairs: list[tuple[int, int]]
    latency_ms: float

    def to_dict(self) -> dict:
        p = self.probabilities
        return {
            "probs": {"left": float(p[0]), "middle": float(p[1]), "right": float(p[2])},
            "argmax": self.label.value,
            "endpoint": self.endpoint,
            "indices": list(self.indices),
            "repairs": [list(r) for r in self.repairs],
            "latency_ms": self.latency_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def predict_with_latency(model_or_ckpt, inputs) -> PredictionResult:
    """Run a single (frames, keypoints) pair through the model, timing the
    forward pass. `inputs` holds unbatched (8,H,W,3) and (8,17,2) arrays."""
    model = (
        restore_model(model_or_ckpt) if isinstance(model_or_ckpt, Checkpoint) else model_or_ckpt
    )
    frames, kps = inputs
    model.eval()
    t0 = time.perf_counter()
    with torch.no_grad():
        probs = model(frames[None], kps[None])[0].numpy()
    latency_ms = (time.perf_counter() - t0) * 1000.0
    return PredictionResult(
        probabilities=probs,
        label=DirectionLabel.from_index(int(probs.argmax())),
        endpoint=None,
        indices=[],
        repairs=[],
        latency_ms=latency_ms,
    )


def assemble_inputs(
    state: PipelineState,
    cfg: ThresholdConfig,
    image_source: Optional[Callable[[FrameRecord], np.ndarray]] = None,
):
    """Model-ready tensors from a triggered buffer, identical to the
    offline builder on the same frames. Returns (frames, keypoints, plan)."""
    plan = plan_sample(state.buffer, cfg)
    frames, kps = assemble_arrays(state.buffer, plan, image_source)
    return frames, kps, plan


class KickPipeline:
    """Single-kick streaming consumer; feed records in frame order."""

    def __init__(
        self,
        model_or_ckpt,
        cfg: ThresholdConfig,
        image_source: Optional[Callable[[FrameRecord], np.ndarray]] = None,
    ):
        self.model: DirectionPredictor = (
            restore_model(model_or_ckpt)
            if isinstance(model_or_ckpt, Checkpoint)
            else model_or_ckpt
        )
        self.model.eval()
        self.cfg = cfg
        self.image_source = image_source
        self.state = PipelineState()

    def step(self, record: FrameRecord) -> Optional[PredictionResult]:
        """Consume one frame; returns a result exactly once, on the step
        that crosses the threshold."""
        st = self.state
        if st.phase is Phase.PREDICTED:
            return None
        if st.last_frame_index is not None and record.frame_index <= st.last_frame_index:
            raise StreamOrderError(
                f"frame {record.frame_index} arrived after frame {st.last_frame_index}"
            )
        st.last_frame_index = record.frame_index
        st.buffer.append(record)

        if st.phase is Phase.WAITING:
            ball = record.best_detection(ObjectClass.BALL)
            net = record.best_detection(ObjectClass.NET)
            if ball is None or net is None:
                st.trace.append((record.frame_index, None))
                return None
            st.reference_distance = reference_distance(ball.box, net.box)
            st.phase = Phase.MONITORING

        ratio: Optional[float] = None
        if record.pose is not None:
            ball = record.best_detection(ObjectClass.BALL)
            if ball is not None:
                try:
                    ratio = normalized_ratio(
                        foot_to_ball_distance(record.pose, ball.box), st.reference_distance
                    )
                except NoValidFoot:
                    ratio = None
        st.trace.append((record.frame_index, ratio))

        if ratio is None or ratio > self.cfg.ratio:
            return None

        st.phase = Phase.TRIGGERED
        t0 = time.perf_counter()
        frames, kps, plan = assemble_inputs(st, self.cfg, self.image_source)
        with torch.no_grad():
            probs = self.model(frames[None], kps[None])[0].numpy()
        latency_ms = (time.perf_counter() - t0) * 1000.0
        st.phase = Phase.PREDICTED
        return PredictionResult(
            probabilities=probs,
            label=DirectionLabel.from_index(int(probs.argmax())),
            endpoint=plan.endpoint_frame,
            indices=plan.chosen_indices,
            repairs=plan.repairs,
            latency_ms=latency_ms,
        )

    def run(self, records) -> Optional[PredictionResult]:
        """Feed a whole stream; stops at the first prediction."""
        for record in records:
            result = self.step(record)
            if result is not None:
                return result
        return None


# ---------------------------------------------------------------------------
# Detection providers: anything that yields FrameRecords in order
# ---------------------------------------------------------------------------

def replay_provider(path) -> Iterator[FrameRecord]:
    """Replay a JSONL stream file; image refs resolve against its folder."""
    p = Path(path)
    base = p.parent
    with open(p) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = frame_record_from_json(line)
            except Exception as e:
                raise ProviderParseError(f"{p}: line {lineno}: {e}") from None
            if record.image_ref is not None and not Path(record.image_ref).is_absolute():
                record.image_ref = str(base / record.image_ref)
            yield record


def directory_provider(path) -> Iterator[FrameRecord]:
    """One JSON file per frame, consumed in name order."""
    d = Path(path)
    for f in sorted(d.glob("*.json")):
        try:
            record = frame_record_from_json(f.read_text())
        except Exception as e:
            raise ProviderParseError(f"{f}: {e}") from None
        if record.image_ref is not None and not Path(record.image_ref).is_absolute():
            record.image_ref = str(d / record.image_ref)
        yield record


def synthetic_provider(
    source: Union[ScenarioParams, Scenario], frame_size: int = 224
) -> Iterator[FrameRecord]:
    """Live generation: renders and yields a synthetic kick frame by frame."""
    scenario = source if isinstance(source, Scenario) else generate_scenario(source, frame_size)
    render_scenario_frames(scenario)
    yield from scenario.records


def detection_provider(source, frame_size: int = 224) -> Iterator[FrameRecord]:
    """Route a source to the matching provider: a JSONL file, a directory
    of per-frame JSON, or the synthetic generator. A real detector can be
    plugged in as any iterable of FrameRecords with the same contract."""
    if isinstance(source, (ScenarioParams, Scenario)):
        return synthetic_provider(source, frame_size)
    p = Path(source)
    if p.is_dir():
        return directory_provider(p)
    if p.is_file():
        return replay_provider(p)
    raise InputError(f"no provider for source {source!r}")
