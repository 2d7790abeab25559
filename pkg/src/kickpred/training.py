"""Training loop: Adam on categorical cross-entropy with per-epoch
deterministic shuffling, early stopping on validation loss, and retention
of the best-validation-loss weights."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .core import Split
from .errors import DivergenceError, InsufficientData
from .model import (
    Checkpoint,
    DirectionPredictor,
    ModelConfig,
    build_model,
    restore_model,
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    min_delta: float = 0.0
    seed: int = 0
    # Recorded for reproducibility; Keras-class Adam defaults.
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-7

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float


class StopDecision(Enum):
    CONTINUE = "continue"
    STOP = "stop"


class EarlyStopping:
    """Stops after `patience` consecutive epochs without strict improvement.

    Improvement means val_loss < best - min_delta; equal values do not
    count. Tracks the epoch with the minimum validation loss.
    """

    def __init__(self, patience: int, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best_loss = math.inf
        self.best_epoch = 0
        self.epochs_without_improvement = 0
        self.epoch = 0

    def update(self, val_loss: float) -> StopDecision:
        self.epoch += 1
        if val_loss < self.best_loss - self.min_delta:
            self.best_loss = val_loss
            self.best_epoch = self.epoch
            self.epochs_without_improvement = 0
        else:
            self.epochs_without_improvement += 1
            if self.epochs_without_improvement >= self.patience:
                return StopDecision.STOP
        return StopDecision.CONTINUE


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    """The (seed, epoch)-keyed shuffle order for an epoch's training data."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def _batch_bounds(n: int, batch_size: int) -> list[tuple[int, int]]:
    """Contiguous batch ranges keeping every sample. An orphan final batch
    of one sample is merged into its predecessor (batch norm in training
    mode needs at least two rows)."""
    bounds = [(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] == 1:
        lo, _ = bounds[-2]
        bounds[-2:] = [(lo, n)]
    return bounds


def _as_tensors(frames: np.ndarray, kps: np.ndarray, labels: np.ndarray):
    return (
        torch.as_tensor(frames, dtype=torch.float32),
        torch.as_tensor(kps, dtype=torch.float32),
        torch.as_tensor(labels, dtype=torch.long),
    )


def evaluate_arrays(
    model: DirectionPredictor,
    frames: np.ndarray,
    kps: np.ndarray,
    labels: np.ndarray,
    batch_size: int = 32,
) -> tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy, batch-size independent.

    Per-sample losses are accumulated in float64 so the result does not
    depend on how the split is batched.
    """
    n = len(labels)
    if n == 0:
        raise InsufficientData("cannot evaluate an empty split")
    f, k, y = _as_tensors(frames, kps, labels)
    was_training = model.training
    model.eval()
    loss_sum = 0.0
    correct = 0
    with torch.no_grad():
        for lo in range(0, n, batch_size):
            hi = min(lo + batch_size, n)
            logits = model.logits(f[lo:hi], k[lo:hi])
            losses = F.cross_entropy(logits, y[lo:hi], reduction="none")
            loss_sum += float(losses.double().sum())
            correct += int((logits.argmax(dim=1) == y[lo:hi]).sum())
    if was_training:
        model.train()
    return loss_sum / n, correct / n


def evaluate_split(model_or_ckpt, data, split: Split, batch_size: int = 32) -> tuple[float, float]:
    """Loss and accuracy of a model or checkpoint on one manifest split."""
    model = (
        restore_model(model_or_ckpt)
        if isinstance(model_or_ckpt, Checkpoint)
        else model_or_ckpt
    )
    frames, kps, labels = data.arrays_for_split(split)
    return evaluate_arrays(model, frames, kps, labels, batch_size)


def train(data, model_cfg: ModelConfig, train_cfg: TrainConfig) -> Checkpoint:
    """Fit the configured variant on the TRAIN split, early-stopping on
    VAL loss; the returned checkpoint holds the best-epoch weights."""
    tf, tk, ty = data.arrays_for_split(Split.TRAIN)
    vf, vk, vy = data.arrays_for_split(Split.VAL)
    n_train = len(ty)
    if n_train < 2:
        raise InsufficientData(f"training needs at least 2 samples, got {n_train}")
    if len(vy) == 0:
        raise InsufficientData("validation split is empty")

    model = build_model(model_cfg)
    torch.manual_seed(train_cfg.seed)
    opt = torch.optim.Adam(
        model.parameters(),
        lr=train_cfg.learning_rate,
        betas=train_cfg.adam_betas,
        eps=train_cfg.adam_eps,
    )
    stopper = EarlyStopping(train_cfg.patience, train_cfg.min_delta)
    f, k, y = _as_tensors(tf, tk, ty)

    history: list[EpochRecord] = []
    best_state: Optional[dict] = None
    for epoch in range(1, train_cfg.max_epochs + 1):
        perm = torch.as_tensor(epoch_permutation(train_cfg.seed, epoch, n_train))
        model.train()
        loss_sum = 0.0
        correct = 0
        for b, (lo, hi) in enumerate(_batch_bounds(n_train, train_cfg.batch_size)):
            idx = perm[lo:hi]
            logits = model.logits(f[idx], k[idx])
            loss = F.cross_entropy(logits, y[idx])
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += float(loss.detach()) * (hi - lo)
            correct += int((logits.argmax(dim=1) == y[idx]).sum())

        val_loss, val_acc = evaluate_arrays(model, vf, vk, vy, train_cfg.batch_size)
        history.append(
            EpochRecord(
                epoch=epoch,
                train_loss=loss_sum / n_train,
                val_loss=val_loss,
                train_acc=correct / n_train,
                val_acc=val_acc,
            )
        )
        decision = stopper.update(val_loss)
        if stopper.best_epoch == epoch:   # this epoch set a new best
            best_state = {name: t.detach().clone() for name, t in model.state_dict().items()}
        if decision is StopDecision.STOP:
            break

    return Checkpoint(
        config=model_cfg,
        state=best_state,
        history=[asdict(r) for r in history],
        best_epoch=stopper.best_epoch,
    )


class ManifestBundle:
    """Lazy array access over a manifest whose samples live on disk."""

    def __init__(self, manifest, root):
        from .core import DatasetManifest  # noqa: F401  (type reference)

        self.manifest = manifest
        self.root = root
        self._cache: dict[Split, tuple] = {}

    def arrays_for_split(self, split: Split):
        if split in self._cache:
            return self._cache[split]
        from pathlib import Path

        from .segmentation import read_sample_dir

        refs = [s for s in self.manifest.samples if s.split is split]
        frames, kps, labels = [], [], []
        for ref in refs:
            sample = read_sample_dir(Path(self.root) / ref.path)
            frames.append(sample.frames)
            kps.append(sample.keypoints)
            labels.append(sample.label.index)
        out = (
            np.stack(frames) if frames else np.zeros((0,), dtype=np.float32),
            np.stack(kps) if kps else np.zeros((0,), dtype=np.float32),
            np.asarray(labels, dtype=np.int64),
        )
        self._cache[split] = out
        return out


HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "train_acc", "val_acc")


def write_history_csv(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in HISTORY_FIELDS})
