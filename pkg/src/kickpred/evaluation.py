"""Metrics, confusion matrices, the four-variant ablation harness, and the
threshold-sweep harness.

The harnesses run on synthetic corpora, so absolute accuracies are not
meaningful targets; what they reproduce is the ordering: the full model
at the tightest threshold should beat the attention-free and
single-branch variants, and accuracy should fall as the segmentation
threshold grows (the direction cue sits at the end of the run-up).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np
import torch

from .core import DirectionLabel, KickSample, Split
from .errors import InputError, InsufficientData, KickpredError, VariantViolation
from .model import (
    Checkpoint,
    ModelConfig,
    ModelVariant,
    count_parameters,
    restore_model,
)
from .synthgen import ParamsDistribution, generate_dataset
from .training import TrainConfig, evaluate_arrays, train

_LABELS = (DirectionLabel.LEFT, DirectionLabel.MIDDLE, DirectionLabel.RIGHT)
ABLATION_ORDER = (
    ModelVariant.VISUAL_ONLY,
    ModelVariant.POSE_ONLY,
    ModelVariant.DUAL_NO_ATTENTION,
    ModelVariant.FULL,
)


def accuracy(correct: int, total: int) -> float:
    """Percentage to two decimals."""
    if total == 0:
        raise InsufficientData("accuracy undefined for zero samples")
    if not (0 <= correct <= total):
        raise InputError(f"correct must be in [0, total], got {correct}/{total}")
    return round(100.0 * correct / total, 2)


@dataclass
class ConfusionMatrix:
    """3x3 counts, rows = true label, columns = predicted, LEFT/MIDDLE/RIGHT."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_correct(self) -> int:
        return int(np.trace(self.counts))

    def accuracy_percent(self) -> float:
        return accuracy(self.n_correct, self.total)

    def to_csv(self, path) -> None:
        names = [lab.value for lab in _LABELS]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([""] + names)
            for name, row in zip(names, self.counts):
                writer.writerow([name] + [int(c) for c in row])


def _label_index(x) -> int:
    if isinstance(x, DirectionLabel):
        return x.index
    i = int(x)
    if not (0 <= i < 3):
        raise InputError(f"label index out of range: {x}")
    return i


def confusion_matrix(labels: Sequence, preds: Sequence) -> ConfusionMatrix:
    if len(labels) != len(preds):
        raise InputError(f"labels ({len(labels)}) and preds ({len(preds)}) differ in length")
    counts = np.zeros((3, 3), dtype=np.int64)
    for t, p in zip(labels, preds):
        counts[_label_index(t), _label_index(p)] += 1
    return ConfusionMatrix(counts)


def predict_label_indices(model, frames: np.ndarray, kps: np.ndarray, batch_size: int = 32) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(frames), batch_size):
            probs = model(frames[lo:lo + batch_size], kps[lo:lo + batch_size])
            out.append(probs.argmax(dim=1).numpy())
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def _test_metrics(ckpt: Checkpoint, data) -> tuple[float, ConfusionMatrix]:
    model = restore_model(ckpt)
    frames, kps, labels = data.arrays_for_split(Split.TEST)
    _, acc = evaluate_arrays(model, frames, kps, labels)
    preds = predict_label_indices(model, frames, kps)
    return accuracy(int((preds == labels).sum()), len(labels)), confusion_matrix(labels, preds)


# ---------------------------------------------------------------------------
# Ablation harness
# ---------------------------------------------------------------------------

@dataclass
class VariantResult:
    variant: ModelVariant
    test_accuracy: Optional[float]      # percent, 2 decimals
    confusion: Optional[ConfusionMatrix]
    n_parameters: int
    wall_clock_s: float
    epochs_trained: int = 0
    error: Optional[str] = None


@dataclass
class AblationReport:
    rows: list[VariantResult]

    def by_variant(self) -> dict[ModelVariant, VariantResult]:
        return {r.variant: r for r in self.rows}


def run_ablation(data, base_cfg: ModelConfig, train_cfg: TrainConfig) -> AblationReport:
    """Train all four variants on identical data/seeds and report test
    accuracy per variant. A variant that fails to train is reported with
    its error instead of aborting the run."""
    rows = []
    for variant in ABLATION_ORDER:
        cfg = replace(base_cfg, variant=variant)
        t0 = time.perf_counter()
        try:
            ckpt = train(data, cfg, train_cfg)
            acc, cm = _test_metrics(ckpt, data)
            rows.append(
                VariantResult(
                    variant=variant,
                    test_accuracy=acc,
                    confusion=cm,
                    n_parameters=count_parameters(cfg),
                    wall_clock_s=time.perf_counter() - t0,
                    epochs_trained=len(ckpt.history),
                )
            )
        except KickpredError as e:
            rows.append(
                VariantResult(
                    variant=variant,
                    test_accuracy=None,
                    confusion=None,
                    n_parameters=count_parameters(cfg),
                    wall_clock_s=time.perf_counter() - t0,
                    error=f"{type(e).__name__}: {e}",
                )
            )
    return AblationReport(rows)


# ---------------------------------------------------------------------------
# Threshold sweep harness
# ---------------------------------------------------------------------------

DEFAULT_SWEEP_THRESHOLDS = (0.15, 0.25, 0.35)


@dataclass
class ThresholdResult:
    threshold: float
    epochs_trained: int
    test_accuracy: Optional[float]
    confusion: Optional[ConfusionMatrix]
    error: Optional[str] = None


@dataclass
class SweepReport:
    rows: list[ThresholdResult]


def threshold_sweep(
    thresholds: Sequence[float],
    n: int,
    seed: int,
    dist: Optional[ParamsDistribution],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    frame_size: int = 224,
) -> SweepReport:
    """Re-segment the same underlying scenarios at each threshold, train
    the full variant per threshold, and report test accuracies sorted by
    ascending threshold."""
    cfg = replace(model_cfg, variant=ModelVariant.FULL)
    rows = []
    for threshold in sorted(thresholds):
        try:
            data = generate_dataset(n, seed, dist, threshold=threshold, frame_size=frame_size)
            ckpt = train(data, cfg, train_cfg)
            acc, cm = _test_metrics(ckpt, data)
            rows.append(ThresholdResult(threshold, len(ckpt.history), acc, cm))
        except KickpredError as e:
            rows.append(ThresholdResult(threshold, 0, None, None, f"{type(e).__name__}: {e}"))
    return SweepReport(rows)


# ---------------------------------------------------------------------------
# Attention-map export
# ---------------------------------------------------------------------------

def export_attention_maps(
    ckpt_or_model, sample: KickSample, out_dir=None
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame attention maps for one sample, upscaled to the input
    resolution with nearest-neighbor. Returns (raw maps (8,H',W'),
    grayscale images (8,H,W) uint8); optionally writes PNGs + the raw
    array to out_dir."""
    model = (
        restore_model(ckpt_or_model) if isinstance(ckpt_or_model, Checkpoint) else ckpt_or_model
    )
    if model.cfg.variant is not ModelVariant.FULL:
        raise VariantViolation("attention export requires a full-variant checkpoint")
    model.eval()
    with torch.no_grad():
        _, attn = model.forward_with_attention(sample.frames[None], sample.keypoints[None])
    maps = attn[0].numpy()  # (8, H', W')
    h, w = model.cfg.input_hw
    fy, fx = h // maps.shape[1], w // maps.shape[2]
    upscaled = np.repeat(np.repeat(maps, fy, axis=1), fx, axis=2)
    images = np.clip(upscaled * 255.0, 0, 255).round().astype(np.uint8)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        np.save(out / "attention.npy", maps)
        for i, img in enumerate(images):
            cv2.imwrite(str(out / f"attention_{i}.png"), img)
    return maps, images
