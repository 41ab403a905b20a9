"""Similarity and detection-quality metrics: NCC distortion, IoU, mAP, success rates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Annotation, BoundingBox, DetectionSet, ImageBuffer
from .errors import (
    DegenerateImageError,
    NotAttackableError,
    ShapeMismatchError,
    UndefinedMetricError,
)

COCO_IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
VOC_IOU_THRESHOLDS = (0.50,)


def compute_ncc(a: ImageBuffer, b: ImageBuffer) -> float:
    """Normalized cross-correlation over all pixels of all channels jointly.

    The raw correlation lies in [-1, 1]; the result is clamped to [0, 1] so
    that the distortion complement stays a valid fraction. Constant images
    have an undefined correlation and are rejected.
    """
    if a.pixels.shape != b.pixels.shape:
        raise ShapeMismatchError(
            f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}"
        )
    av = a.pixels.ravel()
    bv = b.pixels.ravel()
    ac = av - av.mean()
    bc = bv - bv.mean()
    var_a = float(np.dot(ac, ac))
    var_b = float(np.dot(bc, bc))
    if var_a == 0.0 or var_b == 0.0:
        raise DegenerateImageError("constant image: correlation denominator is zero")
    # Identical inputs short-circuit so self-similarity is exactly 1.0
    # regardless of sqrt rounding.
    if np.array_equal(av, bv):
        return 1.0
    raw = float(np.dot(ac, bc)) / (math.sqrt(var_a) * math.sqrt(var_b))
    return min(max(raw, 0.0), 1.0)


def distortion(a: ImageBuffer, b: ImageBuffer) -> float:
    """Dissimilarity between two images: the complement of their NCC in 1."""
    return 1.0 - compute_ncc(a, b)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; disjoint boxes give 0."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def success_rate_from_map(baseline_map: float, adversarial_map: float) -> float:
    """Relative mAP degradation as a percentage: 100 * (1 - adv / baseline)."""
    if baseline_map <= 0.0:
        raise UndefinedMetricError(
            f"success rate undefined for baseline mAP {baseline_map}"
        )
    return 100.0 * (1.0 - adversarial_map / baseline_map)


def per_image_success(
    original: DetectionSet,
    adversarial: DetectionSet,
    iou_match: float = 0.5,
) -> float:
    """Fraction of the original detections that no longer survive.

    An original detection survives when some adversarial detection has the
    same class and IoU >= ``iou_match``; everything else counts as suppressed
    or displaced. An empty original set has no defined success value.
    """
    if len(original) == 0:
        raise NotAttackableError("original detection set is empty")
    if len(adversarial) == 0:
        return 1.0
    suppressed = 0
    for det in original:
        survived = any(
            adv.class_id == det.class_id and iou(det.box, adv.box) >= iou_match
            for adv in adversarial
        )
        if not survived:
            suppressed += 1
    return suppressed / len(original)


@dataclass(frozen=True)
class EvaluationScore:
    """mAP plus per-class APs; classes without ground truth are absent."""

    map_value: float
    per_class_ap: dict[int, float]

    def __post_init__(self):
        object.__setattr__(self, "per_class_ap", dict(self.per_class_ap))
        if self.per_class_ap:
            mean_ap = sum(self.per_class_ap.values()) / len(self.per_class_ap)
            if abs(mean_ap - self.map_value) > 1e-9:
                raise ValueError(
                    f"map_value {self.map_value} is not the mean of per-class APs {mean_ap}"
                )


def _average_precision(
    records: list[tuple[float, bool]],
    n_positive: int,
) -> float:
    """Area under the precision envelope for (is_tp) records sorted by rank."""
    if n_positive == 0:
        return 0.0
    tp = 0
    fp = 0
    precisions = []
    recalls = []
    for _, is_tp in records:
        if is_tp:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / n_positive)
    mpre = np.concatenate(([0.0], precisions, [0.0]))
    mrec = np.concatenate(([0.0], recalls, [1.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


def compute_map(
    predictions: Sequence[DetectionSet],
    ground_truth: Sequence[Sequence[Annotation]],
    iou_thresholds: Sequence[float] | None = None,
    *,
    exclude_difficult: bool = True,
) -> EvaluationScore:
    """Mean average precision with greedy confidence-descending matching.

    ``predictions[i]`` and ``ground_truth[i]`` describe the same image. AP is
    the exact area under the interpolated precision-recall curve, computed per
    class and averaged over ``iou_thresholds`` (defaults to 0.50:0.05:0.95).
    Difficult ground-truth objects are ignored: they are not counted as
    positives and matches against them are neither hits nor false alarms.
    """
    if len(predictions) != len(ground_truth):
        raise ShapeMismatchError(
            f"{len(predictions)} prediction sets vs {len(ground_truth)} ground-truth lists"
        )
    thresholds = tuple(iou_thresholds) if iou_thresholds is not None else COCO_IOU_THRESHOLDS
    if not thresholds:
        raise ValueError("at least one IoU threshold is required")

    counted = [
        [ann for ann in anns if not (exclude_difficult and ann.difficult)]
        for anns in ground_truth
    ]
    classes = sorted({ann.class_id for anns in counted for ann in anns})
    if not classes:
        raise UndefinedMetricError("no countable ground-truth objects")

    per_class_ap: dict[int, float] = {}
    for class_id in classes:
        # Canonical prediction order so the result is independent of input order.
        preds = sorted(
            (
                (det.confidence, img_idx, det.box)
                for img_idx, dets in enumerate(predictions)
                for det in dets
                if det.class_id == class_id
            ),
            key=lambda p: (-p[0], p[1], p[2].as_tuple()),
        )
        gt_by_image = [
            [(ann.box, ann.difficult) for ann in anns if ann.class_id == class_id]
            for anns in ground_truth
        ]
        n_positive = sum(
            0 if (exclude_difficult and difficult) else 1
            for gts in gt_by_image
            for _, difficult in gts
        )
        ap_sum = 0.0
        for thr in thresholds:
            matched = [[False] * len(gts) for gts in gt_by_image]
            records: list[tuple[float, bool]] = []
            for conf, img_idx, box in preds:
                gts = gt_by_image[img_idx]
                best_iou = 0.0
                best_j = -1
                for j, (gt_box, _) in enumerate(gts):
                    if matched[img_idx][j]:
                        continue
                    overlap = iou(box, gt_box)
                    if overlap > best_iou:
                        best_iou = overlap
                        best_j = j
                if best_j >= 0 and best_iou >= thr:
                    if exclude_difficult and gts[best_j][1]:
                        continue  # matched a difficult object: ignore the prediction
                    matched[img_idx][best_j] = True
                    records.append((conf, True))
                else:
                    records.append((conf, False))
            ap_sum += _average_precision(records, n_positive)
        per_class_ap[class_id] = ap_sum / len(thresholds)

    map_value = sum(per_class_ap.values()) / len(per_class_ap)
    return EvaluationScore(map_value=map_value, per_class_ap=per_class_ap)
