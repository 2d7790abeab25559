"""Exception hierarchy shared by all kickpred modules.

Every domain failure maps to one class here so the CLI can report a
machine-parsable error name and exit nonzero.
"""


class KickpredError(Exception):
    """Base class for all domain errors raised by this package."""


class InsufficientData(KickpredError):
    """Too few samples for the requested operation (split, training, eval)."""


class InvalidFrameGeometry(KickpredError):
    """Frame width/height is zero or negative."""


class ManifestParseError(KickpredError):
    """Dataset manifest file is malformed; message carries line/field info."""


class InputError(KickpredError):
    """Caller passed structurally invalid inputs (length mismatch, bad range)."""


class DegenerateReference(KickpredError):
    """Ball and net centers coincide; reference distance would be zero."""


class MissingReferenceObjects(KickpredError):
    """No frame contains both a ball and a net detection."""


class NoValidFoot(KickpredError):
    """Both ankle keypoints have zero confidence; foot distance undefined."""


class NoEndpoint(KickpredError):
    """The monitored ratio never falls to the configured threshold."""


class SequenceTooShort(KickpredError):
    """Segment holds fewer frames than the required sequence length."""


class NoValidPoseInSegment(KickpredError):
    """No frame in the segment passes the pose-confidence validity test."""


class GenerationFailed(KickpredError):
    """A synthetic scenario kept failing segmentation after max retries."""


class ShapeError(KickpredError):
    """Tensor shape mismatch; message names expected vs actual."""


class VariantViolation(KickpredError):
    """Operation incompatible with the configured model variant."""


class CheckpointError(KickpredError):
    """Checkpoint file missing, corrupt, or inconsistent with its config."""


class DivergenceError(KickpredError):
    """Training loss became non-finite; message reports epoch and batch."""


class StreamOrderError(KickpredError):
    """Frame records arrived with non-increasing frame indices."""


class ProviderParseError(KickpredError):
    """A detection provider met a malformed record; message carries position."""
