"""Dual-branch direction predictor.

Spatial branch: a depthwise-separable conv stack applied to each frame
with shared weights, optionally gated by a pose-guided spatial attention
map, pooled and summarized over time by multi-head self-attention plus an
LSTM. Skeletal branch: flattened keypoint vectors through the same
temporal attention/LSTM treatment. A fusion head concatenates whichever
summaries the variant enables and produces a 3-way softmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CheckpointError, ShapeError, VariantViolation


class ModelVariant(Enum):
    VISUAL_ONLY = "visual_only"
    POSE_ONLY = "pose_only"
    DUAL_NO_ATTENTION = "dual_no_attention"
    FULL = "full"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults target 224-px inputs."""

    input_hw: tuple[int, int] = (224, 224)
    backbone_widths: tuple[int, ...] = (16, 32, 64, 96, 128)
    attn_heads: int = 4
    attn_key_dim: int = 32
    lstm_units_spatial: int = 128
    lstm_units_skeletal: int = 64
    fusion_dense_units: int = 256
    dropout_rate: float = 0.5
    seq_len: int = 8
    n_keypoints: int = 17
    n_classes: int = 3
    variant: ModelVariant = ModelVariant.FULL
    seed: int = 0

    def __post_init__(self):
        h, w = self.input_hw
        d = 2 ** len(self.backbone_widths)
        if h % d or w % d:
            raise ShapeError(
                f"input_hw {self.input_hw} must be divisible by 2^{len(self.backbone_widths)}"
            )
        if self.n_classes != 3 or self.seq_len != 8:
            raise ShapeError("this architecture is fixed at 8 frames and 3 classes")

    @property
    def feature_hw(self) -> tuple[int, int]:
        d = 2 ** len(self.backbone_widths)
        return (self.input_hw[0] // d, self.input_hw[1] // d)

    @property
    def pose_dim(self) -> int:
        return self.n_keypoints * 2

    @classmethod
    def toy(cls, variant: ModelVariant = ModelVariant.FULL, seed: int = 0) -> "ModelConfig":
        """Small profile that keeps every check CPU-friendly."""
        return cls(
            input_hw=(64, 64),
            backbone_widths=(8, 16, 32),
            attn_heads=4,
            attn_key_dim=16,
            lstm_units_spatial=64,
            lstm_units_skeletal=32,
            fusion_dense_units=128,
            variant=variant,
            seed=seed,
        )


def config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "input_hw": list(cfg.input_hw),
        "backbone_widths": list(cfg.backbone_widths),
        "attn_heads": cfg.attn_heads,
        "attn_key_dim": cfg.attn_key_dim,
        "lstm_units_spatial": cfg.lstm_units_spatial,
        "lstm_units_skeletal": cfg.lstm_units_skeletal,
        "fusion_dense_units": cfg.fusion_dense_units,
        "dropout_rate": cfg.dropout_rate,
        "seq_len": cfg.seq_len,
        "n_keypoints": cfg.n_keypoints,
        "n_classes": cfg.n_classes,
        "variant": cfg.variant.value,
        "seed": cfg.seed,
    }


def config_from_dict(doc: dict) -> ModelConfig:
    return ModelConfig(
        input_hw=tuple(doc["input_hw"]),
        backbone_widths=tuple(doc["backbone_widths"]),
        attn_heads=int(doc["attn_heads"]),
        attn_key_dim=int(doc["attn_key_dim"]),
        lstm_units_spatial=int(doc["lstm_units_spatial"]),
        lstm_units_skeletal=int(doc["lstm_units_skeletal"]),
        fusion_dense_units=int(doc["fusion_dense_units"]),
        dropout_rate=float(doc["dropout_rate"]),
        seq_len=int(doc["seq_len"]),
        n_keypoints=int(doc["n_keypoints"]),
        n_classes=int(doc["n_classes"]),
        variant=ModelVariant(doc["variant"]),
        seed=int(doc["seed"]),
    )


class FrameBackbone(nn.Module):
    """Per-frame conv feature extractor; each stage halves the resolution."""

    def __init__(self, widths: tuple[int, ...]):
        super().__init__()
        w0 = widths[0]
        layers = [
            nn.Conv2d(3, w0, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(w0),
            nn.ReLU6(inplace=True),
        ]
        for w_in, w_out in zip(widths, widths[1:]):
            layers += [
                nn.Conv2d(w_in, w_in, 3, stride=2, padding=1, groups=w_in, bias=False),
                nn.BatchNorm2d(w_in),
                nn.ReLU6(inplace=True),
                nn.Conv2d(w_in, w_out, 1, bias=False),
                nn.BatchNorm2d(w_out),
                nn.ReLU6(inplace=True),
            ]
        self.stack = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.stack(x)


class PoseGuidedAttention(nn.Module):
    """Single-channel sigmoid gate computed from pose + visual features.

    The flattened keypoints are projected to the feature channel count,
    broadcast over the spatial grid, concatenated with the feature map,
    and squeezed to one channel by a 1x1 then a 3x3 convolution.
    """

    def __init__(self, channels: int, pose_dim: int):
        super().__init__()
        self.pose_proj = nn.Linear(pose_dim, channels)
        self.mix = nn.Conv2d(2 * channels, channels, 1)
        self.to_map = nn.Conv2d(channels, 1, 3, padding=1)

    def forward(self, pose_vec: torch.Tensor, feat: torch.Tensor):
        if pose_vec.shape[0] != feat.shape[0]:
            raise ShapeError(
                f"pose/feature batch mismatch: {pose_vec.shape[0]} vs {feat.shape[0]}"
            )
        n, c, h, w = feat.shape
        p = self.pose_proj(pose_vec)[:, :, None, None].expand(n, c, h, w)
        attn = torch.sigmoid(self.to_map(self.mix(torch.cat([feat, p], dim=1))))
        return feat * attn, attn


class MultiHeadSelfAttention(nn.Module):
    """Self-attention over the time axis with a configurable head size."""

    def __init__(self, embed_dim: int, heads: int, key_dim: int):
        super().__init__()
        self.heads = heads
        self.key_dim = key_dim
        inner = heads * key_dim
        self.q = nn.Linear(embed_dim, inner)
        self.k = nn.Linear(embed_dim, inner)
        self.v = nn.Linear(embed_dim, inner)
        self.out = nn.Linear(inner, embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        def split(z):
            return z.view(b, t, self.heads, self.key_dim).transpose(1, 2)
        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.key_dim)
        ctx = torch.softmax(scores, dim=-1) @ v
        ctx = ctx.transpose(1, 2).reshape(b, t, self.heads * self.key_dim)
        return self.out(ctx)


class SpatialBranch(nn.Module):
    def __init__(self, cfg: ModelConfig, use_attention: bool):
        super().__init__()
        self.cfg = cfg
        self.backbone = FrameBackbone(cfg.backbone_widths)
        channels = cfg.backbone_widths[-1]
        self.attention = PoseGuidedAttention(channels, cfg.pose_dim) if use_attention else None
        self.temporal_attn = MultiHeadSelfAttention(channels, cfg.attn_heads, cfg.attn_key_dim)
        self.lstm = nn.LSTM(channels, cfg.lstm_units_spatial, batch_first=True)

    def forward(self, frames: torch.Tensor, pose_flat: Optional[torch.Tensor]):
        b, t = frames.shape[:2]
        x = frames.permute(0, 1, 4, 2, 3).reshape(b * t, 3, *frames.shape[2:4])
        feat = self.backbone(x)
        attn_maps = None
        if self.attention is not None:
            feat, attn = self.attention(pose_flat.reshape(b * t, -1), feat)
            attn_maps = attn.reshape(b, t, *attn.shape[2:])
        pooled = feat.mean(dim=(2, 3)).reshape(b, t, -1)
        seq = self.temporal_attn(pooled)
        _, (h_n, _) = self.lstm(seq)
        return h_n[-1], attn_maps


class SkeletalBranch(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.temporal_attn = MultiHeadSelfAttention(cfg.pose_dim, cfg.attn_heads, cfg.attn_key_dim)
        self.lstm = nn.LSTM(cfg.pose_dim, cfg.lstm_units_skeletal, batch_first=True)

    def forward(self, pose_flat: torch.Tensor) -> torch.Tensor:
        seq = self.temporal_attn(pose_flat)
        _, (h_n, _) = self.lstm(seq)
        return h_n[-1]


class FusionHead(nn.Module):
    def __init__(self, in_dim: int, units: int, dropout: float, n_classes: int):
        super().__init__()
        self.bn = nn.BatchNorm1d(in_dim)
        self.fc1 = nn.Linear(in_dim, units)
        self.drop = nn.Dropout(dropout)
        self.fc2 = nn.Linear(units, n_classes)

    def forward(self, vecs: list[torch.Tensor]) -> torch.Tensor:
        if not vecs:
            raise VariantViolation("fusion head needs at least one branch summary")
        x = torch.cat(vecs, dim=1) if len(vecs) > 1 else vecs[0]
        return self.fc2(self.drop(F.relu(self.fc1(self.bn(x)))))


class DirectionPredictor(nn.Module):
    """Variant-routed network over (B,8,H,W,3) frames and (B,8,17,2) keypoints."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        v = cfg.variant
        self.spatial = (
            SpatialBranch(cfg, use_attention=(v is ModelVariant.FULL))
            if v is not ModelVariant.POSE_ONLY
            else None
        )
        self.skeletal = SkeletalBranch(cfg) if v is not ModelVariant.VISUAL_ONLY else None
        in_dim = 0
        if self.spatial is not None:
            in_dim += cfg.lstm_units_spatial
        if self.skeletal is not None:
            in_dim += cfg.lstm_units_skeletal
        self.fusion = FusionHead(in_dim, cfg.fusion_dense_units, cfg.dropout_rate, cfg.n_classes)

    # -- input checking -----------------------------------------------------

    def _check_frames(self, frames) -> torch.Tensor:
        if frames is None:
            raise ShapeError(f"variant {self.cfg.variant.value} requires a frame tensor")
        x = torch.as_tensor(np.asarray(frames) if not torch.is_tensor(frames) else frames)
        x = x.to(torch.float32)
        h, w = self.cfg.input_hw
        expect = ("B", self.cfg.seq_len, h, w, 3)
        if x.ndim != 5 or tuple(x.shape[1:]) != (self.cfg.seq_len, h, w, 3):
            raise ShapeError(f"expected frames {expect}, got {tuple(x.shape)}")
        return x

    def _check_keypoints(self, kps) -> torch.Tensor:
        if kps is None:
            raise ShapeError(f"variant {self.cfg.variant.value} requires a keypoint tensor")
        x = torch.as_tensor(np.asarray(kps) if not torch.is_tensor(kps) else kps)
        x = x.to(torch.float32)
        expect = ("B", self.cfg.seq_len, self.cfg.n_keypoints, 2)
        if x.ndim != 4 or tuple(x.shape[1:]) != expect[1:]:
            raise ShapeError(f"expected keypoints {expect}, got {tuple(x.shape)}")
        return x

    # -- branch access (variant-guarded) --------------------------------------

    def spatial_summary(self, frames, keypoints=None):
        if self.spatial is None:
            raise VariantViolation("spatial branch unavailable under pose_only")
        f = self._check_frames(frames)
        pose_flat = None
        if self.spatial.attention is not None:
            k = self._check_keypoints(keypoints)
            pose_flat = k.reshape(k.shape[0], k.shape[1], -1)
        vec, _ = self.spatial(f, pose_flat)
        return vec

    def skeletal_summary(self, keypoints):
        if self.skeletal is None:
            raise VariantViolation("skeletal branch unavailable under visual_only")
        k = self._check_keypoints(keypoints)
        return self.skeletal(k.reshape(k.shape[0], k.shape[1], -1))

    # -- full passes ----------------------------------------------------------

    def _branch_vectors(self, frames, keypoints):
        vecs = []
        attn_maps = None
        pose_flat = None
        if self.skeletal is not None or (
            self.spatial is not None and self.spatial.attention is not None
        ):
            k = self._check_keypoints(keypoints)
            pose_flat = k.reshape(k.shape[0], k.shape[1], -1)
        if self.spatial is not None:
            f = self._check_frames(frames)
            vec, attn_maps = self.spatial(
                f, pose_flat if self.spatial.attention is not None else None
            )
            vecs.append(vec)
        if self.skeletal is not None:
            vecs.append(self.skeletal(pose_flat))
        return vecs, attn_maps

    def logits(self, frames, keypoints) -> torch.Tensor:
        vecs, _ = self._branch_vectors(frames, keypoints)
        return self.fusion(vecs)

    def forward(self, frames, keypoints) -> torch.Tensor:
        """Class probabilities (B, 3); rows sum to 1."""
        return torch.softmax(self.logits(frames, keypoints), dim=1)

    def forward_with_attention(self, frames, keypoints):
        """(probabilities, attention maps (B, 8, H', W')); FULL variant only."""
        if self.cfg.variant is not ModelVariant.FULL:
            raise VariantViolation(
                f"attention maps require the full variant, model is {self.cfg.variant.value}"
            )
        vecs, attn_maps = self._branch_vectors(frames, keypoints)
        probs = torch.softmax(self.fusion(vecs), dim=1)
        return probs, attn_maps.squeeze(2)


def build_model(cfg: ModelConfig) -> DirectionPredictor:
    """Construct with seed-deterministic initial weights."""
    torch.manual_seed(cfg.seed)
    return DirectionPredictor(cfg)


def count_parameters(cfg_or_model) -> int:
    model = cfg_or_model if isinstance(cfg_or_model, nn.Module) else build_model(cfg_or_model)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


# ---------------------------------------------------------------------------
# Checkpoints: single-file archive of config + weights + training history
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict
    history: list = field(default_factory=list)
    best_epoch: int = 0


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config_to_dict(ckpt.config),
        "state": {k: v.cpu() for k, v in ckpt.state.items()},
        "history": ckpt.history,
        "best_epoch": ckpt.best_epoch,
    }
    torch.save(doc, path)


def load_checkpoint(path) -> Checkpoint:
    if not Path(path).exists():
        raise CheckpointError(f"checkpoint file not found: {path}")
    try:
        doc = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointError(f"could not read checkpoint {path}: {e}") from None
    for key in ("format_version", "config", "state"):
        if key not in doc:
            raise CheckpointError(f"checkpoint missing field {key!r}")
    if doc["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {doc['format_version']}")
    cfg = config_from_dict(doc["config"])
    state = doc["state"]
    expected = build_model(cfg).state_dict()
    for name, tensor in expected.items():
        if name not in state:
            raise CheckpointError(f"config mismatch: missing weights for layer {name!r}")
        if tuple(state[name].shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"config mismatch at layer {name!r}: stored {tuple(state[name].shape)}, "
                f"config implies {tuple(tensor.shape)}"
            )
    for name in state:
        if name not in expected:
            raise CheckpointError(f"config mismatch: unexpected layer {name!r} in checkpoint")
    return Checkpoint(
        config=cfg,
        state=state,
        history=list(doc.get("history", [])),
        best_epoch=int(doc.get("best_epoch", 0)),
    )


def restore_model(ckpt: Checkpoint) -> DirectionPredictor:
    """Model with the checkpoint's exact weights, in inference mode."""
    model = build_model(ckpt.config)
    model.load_state_dict(ckpt.state)
    model.eval()
    return model


def checkpoint_from_model(model: DirectionPredictor, history=None, best_epoch: int = 0) -> Checkpoint:
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return Checkpoint(config=model.cfg, state=state, history=list(history or []), best_epoch=best_epoch)
