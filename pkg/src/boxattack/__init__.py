"""Distortion-aware adversarial attacks on object detector bounding boxes."""

from .core import (
    Annotation,
    AttackConfig,
    AttackResult,
    BoundingBox,
    Detection,
    DetectionSet,
    GradientNormalization,
    ImageBuffer,
    IterationRecord,
    LossBreakdown,
    MaskMode,
    PerturbationMask,
    StopReason,
    image_difference,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "AttackConfig",
    "AttackResult",
    "BoundingBox",
    "Detection",
    "DetectionSet",
    "GradientNormalization",
    "ImageBuffer",
    "IterationRecord",
    "LossBreakdown",
    "MaskMode",
    "PerturbationMask",
    "StopReason",
    "image_difference",
    "__version__",
]
