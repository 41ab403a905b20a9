"""Domain types shared by every module: images, boxes, detections, masks, configs.

All types are immutable after construction and safe to share between threads.
Pixels are stored as floats in [0, 1]; quantization to 8 bits happens only
when an image is written to disk.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError

LOSS_SUM_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """An RGB raster of shape (height, width, 3) with pixel values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float64, copy=True)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeMismatchError(f"expected (height, width, 3) pixels, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatchError(f"image must be at least 1x1, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("pixel values must be finite")
        if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
            raise ValueError(
                "pixel values outside [0, 1]; use ImageBuffer.clamped() to clip explicitly"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def clamped(cls, pixels) -> "ImageBuffer":
        """Build an image from raw data, explicitly clipping it into [0, 1]."""
        arr = np.asarray(pixels, dtype=np.float64)
        return cls(np.clip(arr, 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 3


def image_difference(a: ImageBuffer, b: ImageBuffer) -> np.ndarray:
    """Elementwise signed difference b - a, unclamped (values in [-1, 1])."""
    if a.pixels.shape != b.pixels.shape:
        raise ShapeMismatchError(
            f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}"
        )
    return b.pixels - a.pixels


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel coordinates, corners (x_min, y_min, x_max, y_max)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(np.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box: {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def clamped(self, width: float, height: float) -> "BoundingBox":
        """Clip the box to [0, width] x [0, height]; raises if nothing remains."""
        x0 = min(max(self.x_min, 0.0), width)
        x1 = min(max(self.x_max, 0.0), width)
        y0 = min(max(self.y_min, 0.0), height)
        y1 = min(max(self.y_max, 0.0), height)
        if x0 >= x1 or y0 >= y1:
            raise ValueError(f"box {self} lies entirely outside {width}x{height}")
        return BoundingBox(x0, y0, x1, y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Detection:
    """One detector output: box, class index, and confidence score."""

    box: BoundingBox
    class_id: int
    confidence: float

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class DetectionSet:
    """Ordered detections plus the confidence threshold they were produced under."""

    detections: tuple[Detection, ...]
    source_confidence_threshold: float

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        if not 0.0 <= self.source_confidence_threshold <= 1.0:
            raise ValueError(
                f"threshold must be in [0, 1], got {self.source_confidence_threshold}"
            )
        for det in self.detections:
            if det.confidence < self.source_confidence_threshold:
                raise ValueError(
                    f"detection confidence {det.confidence} below source threshold "
                    f"{self.source_confidence_threshold}"
                )

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    @property
    def boxes(self) -> tuple[BoundingBox, ...]:
        return tuple(det.box for det in self.detections)


@dataclass(frozen=True)
class Annotation:
    """A ground-truth object: box, class index, and the usual difficult flag."""

    box: BoundingBox
    class_id: int
    difficult: bool = False

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")


class MaskMode(str, enum.Enum):
    BINARY = "binary"
    ADDITIVE = "additive"


@dataclass(frozen=True, eq=False)
class PerturbationMask:
    """Per-pixel weight map restricting where perturbation may be added."""

    weights: np.ndarray
    mode: MaskMode = MaskMode.BINARY

    def __post_init__(self):
        arr = np.array(self.weights, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ShapeMismatchError(f"mask weights must be 2-D, got shape {arr.shape}")
        if float(arr.min(initial=0.0)) < 0.0:
            raise ValueError("mask weights must be non-negative")
        mode = MaskMode(self.mode)
        if mode is MaskMode.BINARY and not np.isin(arr, (0.0, 1.0)).all():
            raise ValueError("binary mask weights must be 0 or 1")
        arr.setflags(write=False)
        object.__setattr__(self, "weights", arr)
        object.__setattr__(self, "mode", mode)

    @property
    def height(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class LossBreakdown:
    """Detector loss split into localization, objectness, and classification terms."""

    loc: float
    obj: float
    cls: float
    total: float

    def __post_init__(self):
        for name in ("loc", "obj", "cls"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ValueError(f"loss component {name} must be finite and >= 0, got {value}")
        if abs(self.total - (self.loc + self.obj + self.cls)) > LOSS_SUM_TOLERANCE:
            raise ValueError(
                f"total {self.total} does not equal loc+obj+cls "
                f"{self.loc + self.obj + self.cls} within {LOSS_SUM_TOLERANCE}"
            )

    @staticmethod
    def from_parts(loc: float, obj: float, cls: float) -> "LossBreakdown":
        return LossBreakdown(loc=loc, obj=obj, cls=cls, total=loc + obj + cls)


class GradientNormalization(str, enum.Enum):
    MAX_ABS = "max-abs"
    SIGN = "sign"
    RAW = "raw"


@dataclass(frozen=True)
class AttackConfig:
    """Control parameters for the iterative attack loop.

    ``target_distortion`` and ``target_success_rate`` are optional early-stop
    controls; whichever fires first ends the loop. ``max_iterations`` is always
    active. Sign normalization is the default: scaling by the global gradient
    peak leaves most pixels with vanishing steps once any outlier appears,
    which stalls the loop on convolutional backends.
    """

    step_size: float = 0.01
    max_iterations: int = 500
    target_distortion: float | None = None
    target_success_rate: float | None = None
    confidence_threshold: float = 0.50
    mask_mode: MaskMode = MaskMode.BINARY
    gradient_normalization: GradientNormalization = GradientNormalization.SIGN

    def __post_init__(self):
        if self.step_size <= 0.0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValueError(f"max_iterations must be a positive integer, got {self.max_iterations}")
        if self.target_distortion is not None and not 0.0 <= self.target_distortion <= 1.0:
            raise ValueError(f"target_distortion must be in [0, 1], got {self.target_distortion}")
        if self.target_success_rate is not None and not 0.0 <= self.target_success_rate <= 1.0:
            raise ValueError(
                f"target_success_rate must be in [0, 1], got {self.target_success_rate}"
            )
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError(
                f"confidence_threshold must be in [0, 1], got {self.confidence_threshold}"
            )
        object.__setattr__(self, "mask_mode", MaskMode(self.mask_mode))
        object.__setattr__(
            self, "gradient_normalization", GradientNormalization(self.gradient_normalization)
        )


class StopReason(str, enum.Enum):
    NO_DETECTIONS = "no_detections"
    DISTORTION_REACHED = "distortion_reached"
    SUCCESS_RATE_REACHED = "success_rate_reached"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class IterationRecord:
    """Loop telemetry captured at the start of one applied update step."""

    loss_total: float
    distortion: float
    detection_count: int
    success_rate: float


@dataclass(frozen=True)
class AttackResult:
    """Final adversarial image plus the per-iteration trace of the run.

    ``trace[i]`` records the state of the working image just before update
    ``i`` was applied, so ``len(trace) == iterations_run`` and ``trace[0]``
    describes the clean image.
    """

    adversarial_image: ImageBuffer
    iterations_run: int
    stop_reason: StopReason
    trace: tuple[IterationRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "trace", tuple(self.trace))
        object.__setattr__(self, "stop_reason", StopReason(self.stop_reason))
        if self.iterations_run < 0:
            raise ValueError("iterations_run must be >= 0")
        if len(self.trace) != self.iterations_run:
            raise ValueError(
                f"trace length {len(self.trace)} != iterations_run {self.iterations_run}"
            )
