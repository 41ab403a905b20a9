"""Cross-model transferability: evaluate adversarial images generated against
one detector on a row of victim detectors, as an mAP matrix with a clean
baseline row."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..core import DetectionSet
from ..detector.base import DetectorAdapter
from ..errors import UndefinedMetricError
from ..image_io import load_image
from ..metrics import compute_map, success_rate_from_map
from .batch import BatchManifest
from .datasets import DatasetIndex, align_class_ids

log = logging.getLogger(__name__)

# Attacks should never help a detector; flag cells that beat the baseline by
# more than this as suspicious rather than failing the run.
BASELINE_SLACK = 0.02


@dataclass
class TransferabilityMatrix:
    source_models: tuple[str, ...]
    target_models: tuple[str, ...]
    cells: dict[tuple[str, str], float]
    baseline: dict[str, float]
    excluded: dict[tuple[str, str], int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def success_rate(self, source: str, target: str) -> float:
        return success_rate_from_map(self.baseline[target], self.cells[(source, target)])

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / "matrix.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["perturbation_source", *self.target_models])
            writer.writerow(["baseline", *(self.baseline[t] for t in self.target_models)])
            for source in self.source_models:
                writer.writerow(
                    [source, *(self.cells[(source, t)] for t in self.target_models)]
                )
        payload = {
            "source_models": list(self.source_models),
            "target_models": list(self.target_models),
            "baseline": self.baseline,
            "cells": {f"{s}->{t}": v for (s, t), v in self.cells.items()},
            "excluded": {f"{s}->{t}": v for (s, t), v in self.excluded.items()},
            "warnings": self.warnings,
        }
        with open(directory / "matrix.json", "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
        return csv_path


def _map_for_images(
    adapter: DetectorAdapter,
    image_paths: Sequence[Path],
    ground_truth,
    threshold: float,
    iou_thresholds,
) -> float:
    predictions: list[DetectionSet] = []
    for path in image_paths:
        predictions.append(adapter.detect(load_image(path), threshold))
    return compute_map(predictions, ground_truth, iou_thresholds).map_value


def evaluate_cross_model(
    manifests: Sequence[BatchManifest],
    targets: Sequence[DetectorAdapter],
    dataset: DatasetIndex,
    threshold: float = 0.50,
    *,
    iou_thresholds=None,
    name_mapping: dict[str, str] | None = None,
) -> TransferabilityMatrix:
    """Fill the (source, target) mAP matrix from stored adversarial images.

    The baseline row is each target's mAP on the clean dataset images. Rows
    with missing adversarial files are excluded per cell, with counts
    reported. Ground-truth classes are aligned to each target's vocabulary
    by name before scoring.
    """
    if not manifests:
        raise ValueError("at least one source manifest is required")
    if not targets:
        raise ValueError("at least one target adapter is required")

    matrix_cells: dict[tuple[str, str], float] = {}
    excluded: dict[tuple[str, str], int] = {}
    baseline: dict[str, float] = {}
    warnings: list[str] = []

    clean_paths = [entry.image_path for entry in dataset.entries]
    for target in targets:
        aligned, dropped = align_class_ids(dataset, target.class_vocabulary, name_mapping)
        gt = [entry.annotations for entry in aligned.entries]
        try:
            baseline[target.name] = _map_for_images(
                target, clean_paths, gt, threshold, iou_thresholds
            )
        except UndefinedMetricError:
            raise UndefinedMetricError(
                f"no countable ground truth for target {target.name} "
                f"({dropped} annotations dropped in vocabulary alignment)"
            )

        for manifest in manifests:
            rows = manifest.row_map()
            paths, cell_gt, missing = [], [], 0
            for entry in aligned.entries:
                row = rows.get(entry.image_id)
                if (
                    row is None
                    or row.status != "ok"
                    or not row.adversarial_path
                    or not Path(row.adversarial_path).is_file()
                ):
                    missing += 1
                    continue
                paths.append(Path(row.adversarial_path))
                cell_gt.append(entry.annotations)
            key = (manifest.adapter_name, target.name)
            if missing:
                excluded[key] = missing
                log.warning("cell %s->%s: %d images excluded", *key, missing)
            if not paths:
                raise ValueError(f"cell {key[0]}->{key[1]}: no adversarial images available")
            matrix_cells[key] = _map_for_images(
                target, paths, cell_gt, threshold, iou_thresholds
            )
            if matrix_cells[key] > baseline[target.name] + BASELINE_SLACK:
                message = (
                    f"cell {key[0]}->{key[1]} ({matrix_cells[key]:.4f}) exceeds the "
                    f"clean baseline ({baseline[target.name]:.4f})"
                )
                warnings.append(message)
                log.warning("%s", message)

    return TransferabilityMatrix(
        source_models=tuple(m.adapter_name for m in manifests),
        target_models=tuple(t.name for t in targets),
        cells=matrix_cells,
        baseline=baseline,
        excluded=excluded,
        warnings=warnings,
    )
