"""Penalty-kick direction prediction toolkit.

Geometric approach-sequence segmentation, a deterministic synthetic
scenario generator, a dual-branch spatial/skeletal network with
pose-guided attention, training/evaluation harnesses, and a streaming
inference pipeline.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    BoundingBox,
    DatasetManifest,
    Detection,
    DirectionLabel,
    FrameRecord,
    KickSample,
    ObjectClass,
    PoseFrame,
    Split,
    normalize_keypoints,
    read_manifest,
    split_dataset,
    write_manifest,
)
from .errors import KickpredError  # noqa: F401
from .model import Checkpoint, ModelConfig, ModelVariant, build_model  # noqa: F401
from .pipeline import KickPipeline, PredictionResult  # noqa: F401
from .segmentation import ThresholdConfig, build_sample  # noqa: F401
from .synthgen import ParamsDistribution, ScenarioParams, generate_dataset, generate_scenario  # noqa: F401
from .training import TrainConfig, train  # noqa: F401
