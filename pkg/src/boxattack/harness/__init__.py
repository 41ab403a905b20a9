"""Batch execution, dataset ingestion, cross-model evaluation, and figure emission."""

from .batch import AdapterSpec, BatchManifest, ManifestRow, run_attack_batch
from .datasets import (
    VOC_TO_COCO_LABELS,
    DatasetEntry,
    DatasetIndex,
    align_class_ids,
    build_synthetic_dataset,
    load_coco_annotations,
    load_voc_annotations,
)
from .figures import FIGURE_IDS, emit_figure_series
from .transfer import TransferabilityMatrix, evaluate_cross_model

__all__ = [
    "AdapterSpec",
    "BatchManifest",
    "DatasetEntry",
    "DatasetIndex",
    "FIGURE_IDS",
    "ManifestRow",
    "TransferabilityMatrix",
    "VOC_TO_COCO_LABELS",
    "align_class_ids",
    "build_synthetic_dataset",
    "emit_figure_series",
    "evaluate_cross_model",
    "load_coco_annotations",
    "load_voc_annotations",
    "run_attack_batch",
]
