"""Mask-restricted iterative gradient ascent against a detector adapter.

The loop perturbs only pixels inside currently detected boxes, ascending the
detector's own training loss measured against its initial detections. Two
optional controls end the run early: a distortion budget on the whole image
and a per-image success-rate target; both are checked before an update is
applied, so the returned image is the first iterate that satisfies a control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import (
    AttackConfig,
    AttackResult,
    BoundingBox,
    DetectionSet,
    GradientNormalization,
    ImageBuffer,
    IterationRecord,
    MaskMode,
    PerturbationMask,
    StopReason,
)
from .detector.base import DetectorAdapter, PseudoLabelSet, make_pseudo_labels
from .errors import NumericError, ShapeMismatchError
from .metrics import distortion, per_image_success

StepObserver = Callable[[int, DetectionSet, PerturbationMask, ImageBuffer], None]


@dataclass(frozen=True)
class StoppingControls:
    """Early-stop targets for a run; max_iterations is always in force."""

    target_distortion: float | None = None
    target_success_rate: float | None = None
    max_iterations: int = 500

    def __post_init__(self):
        if self.target_distortion is not None and not 0.0 < self.target_distortion <= 1.0:
            raise ValueError(
                f"target_distortion must be in (0, 1], got {self.target_distortion}"
            )
        if self.target_success_rate is not None and not 0.0 < self.target_success_rate <= 1.0:
            raise ValueError(
                f"target_success_rate must be in (0, 1], got {self.target_success_rate}"
            )
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be positive, got {self.max_iterations}")


def _edge(value: float, limit: int) -> int:
    """Round a continuous box edge to the nearest pixel boundary, clipped."""
    return min(max(int(math.floor(value + 0.5)), 0), limit)


def build_mask(
    boxes: Sequence[BoundingBox],
    height: int,
    width: int,
    mode: MaskMode | str = MaskMode.BINARY,
) -> PerturbationMask:
    """Rasterize boxes onto a zero array with half-open pixel coverage.

    Additive mode counts how many boxes cover each pixel; binary mode (the
    default) flattens that count to 0/1. An empty box list gives an all-zero
    mask.
    """
    mode = MaskMode(mode)
    counts = np.zeros((height, width), dtype=np.float64)
    for box in boxes:
        x0 = _edge(box.x_min, width)
        x1 = _edge(box.x_max, width)
        y0 = _edge(box.y_min, height)
        y1 = _edge(box.y_max, height)
        if x0 < x1 and y0 < y1:
            counts[y0:y1, x0:x1] += 1.0
    if mode is MaskMode.BINARY:
        counts = (counts > 0.0).astype(np.float64)
    return PerturbationMask(counts, mode=mode)


def _normalize_gradient(gradient: np.ndarray, mode: GradientNormalization) -> np.ndarray:
    if mode is GradientNormalization.MAX_ABS:
        peak = float(np.abs(gradient).max())
        return gradient / peak if peak > 0.0 else gradient
    if mode is GradientNormalization.SIGN:
        return np.sign(gradient)
    return gradient


def masked_ascent_step(
    image: ImageBuffer,
    gradient: np.ndarray,
    mask: PerturbationMask,
    step_size: float,
    normalization: GradientNormalization | str = GradientNormalization.SIGN,
) -> ImageBuffer:
    """One ascent update clamped to [0, 1]; pixels with zero mask weight are
    bit-identical to the input."""
    if step_size <= 0.0:
        raise ValueError(f"step_size must be positive, got {step_size}")
    if gradient.shape != image.pixels.shape:
        raise ShapeMismatchError(
            f"gradient shape {gradient.shape} != image shape {image.pixels.shape}"
        )
    if (mask.height, mask.width) != (image.height, image.width):
        raise ShapeMismatchError(
            f"mask {mask.height}x{mask.width} != image {image.height}x{image.width}"
        )
    if not np.isfinite(gradient).all():
        raise NumericError("gradient contains non-finite entries")
    normalization = GradientNormalization(normalization)
    weights = mask.weights[:, :, None]
    updated = np.clip(
        image.pixels + step_size * _normalize_gradient(gradient, normalization) * weights,
        0.0,
        1.0,
    )
    return ImageBuffer(np.where(weights > 0.0, updated, image.pixels))


def generate_adversarial(
    adapter: DetectorAdapter,
    image: ImageBuffer,
    config: AttackConfig,
    *,
    targets: PseudoLabelSet | None = None,
    observer: StepObserver | None = None,
) -> AttackResult:
    """Run the full iterative attack on one image.

    Loss targets are frozen from the clean image's detections before the loop
    (or taken from ``targets`` when supplied, e.g. dataset annotations), while
    the perturbation mask is rebuilt from the current iterate's detections
    every iteration. ``observer`` is called once per applied update with the
    state the update was computed from.
    """
    threshold = config.confidence_threshold
    initial = adapter.detect(image, threshold)
    if len(initial) == 0:
        return AttackResult(
            adversarial_image=image,
            iterations_run=0,
            stop_reason=StopReason.NO_DETECTIONS,
            trace=(),
        )
    if targets is None:
        targets = make_pseudo_labels(initial)
    elif len(targets) == 0:
        raise ValueError("explicit targets must be non-empty")

    current = image
    trace: list[IterationRecord] = []
    iteration = 0
    while True:
        detections = adapter.detect(current, threshold)
        dist = distortion(image, current)
        if math.isnan(dist):
            raise NumericError(f"distortion became NaN at iteration {iteration}")
        success = per_image_success(initial, detections)

        if len(detections) == 0:
            stop = StopReason.NO_DETECTIONS
            break
        if config.target_distortion is not None and dist >= config.target_distortion:
            stop = StopReason.DISTORTION_REACHED
            break
        if config.target_success_rate is not None and success >= config.target_success_rate:
            stop = StopReason.SUCCESS_RATE_REACHED
            break
        if iteration >= config.max_iterations:
            stop = StopReason.MAX_ITERATIONS
            break

        breakdown, gradient = adapter.loss_and_input_gradient(current, targets)
        trace.append(
            IterationRecord(
                loss_total=breakdown.total,
                distortion=dist,
                detection_count=len(detections),
                success_rate=success,
            )
        )
        mask = build_mask(detections.boxes, image.height, image.width, config.mask_mode)
        if observer is not None:
            observer(iteration, detections, mask, current)
        current = masked_ascent_step(
            current, gradient, mask, config.step_size, config.gradient_normalization
        )
        iteration += 1

    return AttackResult(
        adversarial_image=current,
        iterations_run=iteration,
        stop_reason=stop,
        trace=tuple(trace),
    )


@dataclass(frozen=True)
class SweepPoint:
    """Outcome of one budgeted run within a distortion sweep."""

    target_distortion: float
    achieved_distortion: float | None
    success_rate: float | None
    stop_reason: StopReason | None
    iterations_run: int
    skipped: bool = False


def attack_sweep(
    adapter: DetectorAdapter,
    image: ImageBuffer,
    target_distortions: Sequence[float],
    config: AttackConfig,
) -> list[SweepPoint]:
    """One attack run per ascending distortion budget on the same image.

    Images with no clean detections cannot be scored and come back as skipped
    points. The success-rate control is disabled inside the sweep so each run
    is governed by its budget alone.
    """
    values = list(target_distortions)
    if not values:
        raise ValueError("sweep needs at least one target distortion")
    for v in values:
        if not 0.0 < v <= 1.0:
            raise ValueError(f"target distortions must be in (0, 1], got {v}")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"target distortions must be strictly ascending, got {values}")

    threshold = config.confidence_threshold
    initial = adapter.detect(image, threshold)
    if len(initial) == 0:
        return [
            SweepPoint(s, None, None, None, 0, skipped=True)
            for s in values
        ]

    points = []
    for s in values:
        run_config = AttackConfig(
            step_size=config.step_size,
            max_iterations=config.max_iterations,
            target_distortion=s,
            target_success_rate=None,
            confidence_threshold=threshold,
            mask_mode=config.mask_mode,
            gradient_normalization=config.gradient_normalization,
        )
        result = generate_adversarial(adapter, image, run_config)
        final_dets = adapter.detect(result.adversarial_image, threshold)
        points.append(
            SweepPoint(
                target_distortion=s,
                achieved_distortion=distortion(image, result.adversarial_image),
                success_rate=per_image_success(initial, final_dets),
                stop_reason=result.stop_reason,
                iterations_run=result.iterations_run,
            )
        )
    return points
