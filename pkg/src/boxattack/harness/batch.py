"""Batch attack execution with a resumable, diff-able manifest.

Each image gets one attack run; adversarial images are written as lossless
PNGs mirroring the input layout, per-iteration traces go to CSV, and the
manifest records what happened per image. The distortion and success figures
in the manifest are recomputed from the file actually written to disk, so the
manifest is exactly reproducible from the stored artifacts.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..attack import generate_adversarial
from ..core import AttackConfig, StopReason
from ..detector.base import DetectorAdapter, PseudoLabelSet, make_pseudo_labels
from ..errors import BoxAttackError
from ..image_io import load_image, save_image
from ..metrics import distortion, per_image_success
from .datasets import DatasetEntry, DatasetIndex

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = "boxattack.manifest/1"
MANIFEST_NAME = "manifest.jsonl"
SUMMARY_NAME = "summary.csv"

_ROW_FIELDS = (
    "image_id",
    "status",
    "stop_reason",
    "iterations",
    "distortion",
    "success_rate",
    "adversarial_path",
    "trace_path",
    "error",
)


@dataclass(frozen=True)
class AdapterSpec:
    """Picklable recipe for building an adapter inside a worker process."""

    name: str
    seed: int = 0
    model_dir: str | None = None

    def build(self) -> DetectorAdapter:
        from ..detector.registry import get_adapter

        return get_adapter(self.name, seed=self.seed, model_dir=self.model_dir)


@dataclass(frozen=True)
class ManifestRow:
    image_id: str
    status: str  # ok | failed
    stop_reason: str | None = None
    iterations: int | None = None
    distortion: float | None = None
    success_rate: float | None = None
    adversarial_path: str | None = None
    trace_path: str | None = None
    error: str | None = None


@dataclass
class BatchManifest:
    """Header metadata plus one row per attacked image."""

    adapter_name: str
    seed: int
    config: dict
    dataset_id: str
    rows: list[ManifestRow] = field(default_factory=list)
    schema: str = MANIFEST_SCHEMA

    def row_map(self) -> dict[str, ManifestRow]:
        return {row.image_id: row for row in self.rows}

    def mean_success(self) -> float | None:
        values = [r.success_rate for r in self.rows if r.success_rate is not None]
        return sum(values) / len(values) if values else None

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / MANIFEST_NAME
        header = {
            "schema": self.schema,
            "adapter": self.adapter_name,
            "seed": self.seed,
            "config": self.config,
            "dataset_id": self.dataset_id,
        }
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for row in self.rows:
                record = {k: getattr(row, k) for k in _ROW_FIELDS}
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        with open(directory / SUMMARY_NAME, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_id", "status", "stop_reason", "iterations",
                             "distortion", "success_rate"])
            for row in self.rows:
                writer.writerow([row.image_id, row.status, row.stop_reason,
                                 row.iterations, row.distortion, row.success_rate])
        return path

    @classmethod
    def load(cls, path: str | Path) -> "BatchManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        with open(path) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        if not lines or "schema" not in lines[0]:
            raise BoxAttackError(f"{path}: not a manifest file (missing schema header)")
        header = lines[0]
        if header["schema"] != MANIFEST_SCHEMA:
            raise BoxAttackError(
                f"{path}: unsupported manifest schema {header['schema']!r}"
            )
        rows = [ManifestRow(**{k: rec.get(k) for k in _ROW_FIELDS}) for rec in lines[1:]]
        return cls(
            adapter_name=header["adapter"],
            seed=header["seed"],
            config=header["config"],
            dataset_id=header["dataset_id"],
            rows=rows,
        )

    @classmethod
    def identity(cls, dataset: DatasetIndex, adapter_name: str = "identity") -> "BatchManifest":
        """A manifest whose 'adversarial' images are the clean originals."""
        rows = [
            ManifestRow(
                image_id=e.image_id,
                status="ok",
                stop_reason=None,
                iterations=0,
                distortion=0.0,
                success_rate=None,
                adversarial_path=str(e.image_path),
            )
            for e in dataset.entries
        ]
        return cls(
            adapter_name=adapter_name,
            seed=0,
            config={},
            dataset_id=dataset.dataset_id,
            rows=rows,
        )


def _config_dict(config: AttackConfig) -> dict:
    return {
        "step_size": config.step_size,
        "max_iterations": config.max_iterations,
        "target_distortion": config.target_distortion,
        "target_success_rate": config.target_success_rate,
        "confidence_threshold": config.confidence_threshold,
        "mask_mode": config.mask_mode.value,
        "gradient_normalization": config.gradient_normalization.value,
    }


def _write_trace(result, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "distortion", "detections", "success_rate"])
        for i, rec in enumerate(result.trace):
            writer.writerow([i, rec.loss_total, rec.distortion,
                             rec.detection_count, rec.success_rate])


def _annotation_targets(entry: DatasetEntry) -> PseudoLabelSet | None:
    if not entry.annotations:
        return None
    return PseudoLabelSet(
        boxes=tuple(a.box for a in entry.annotations),
        class_ids=tuple(a.class_id for a in entry.annotations),
    )


def _attack_one(
    adapter: DetectorAdapter,
    entry: DatasetEntry,
    config: AttackConfig,
    output_root: Path,
    image_root: Path,
    use_annotation_targets: bool,
) -> ManifestRow:
    try:
        rel = entry.image_path.relative_to(image_root)
    except ValueError:
        rel = Path(entry.image_path.name)
    rel = rel.with_suffix(".png")
    adv_path = output_root / "images" / rel
    trace_path = output_root / "traces" / f"{entry.image_id}.csv"
    try:
        image = load_image(entry.image_path)
        targets = _annotation_targets(entry) if use_annotation_targets else None
        result = generate_adversarial(adapter, image, config, targets=targets)
        save_image(result.adversarial_image, adv_path)
        _write_trace(result, trace_path)

        written = load_image(adv_path)
        initial = adapter.detect(image, config.confidence_threshold)
        if len(initial) == 0:
            dist, success = 0.0, None
        else:
            dist = distortion(image, written)
            success = per_image_success(
                initial, adapter.detect(written, config.confidence_threshold)
            )
        return ManifestRow(
            image_id=entry.image_id,
            status="ok",
            stop_reason=result.stop_reason.value,
            iterations=result.iterations_run,
            distortion=dist,
            success_rate=success,
            adversarial_path=str(adv_path),
            trace_path=str(trace_path),
        )
    except BoxAttackError as exc:
        log.warning("attack failed for %s: %s", entry.image_id, exc)
        return ManifestRow(image_id=entry.image_id, status="failed", error=str(exc))


_WORKER_ADAPTER: DetectorAdapter | None = None


def _init_worker(spec: AdapterSpec) -> None:
    global _WORKER_ADAPTER
    import torch

    torch.set_num_threads(1)
    _WORKER_ADAPTER = spec.build()


def _worker_attack(args) -> ManifestRow:
    entry, config, output_root, image_root, use_annotation_targets = args
    return _attack_one(
        _WORKER_ADAPTER, entry, config, output_root, image_root, use_annotation_targets
    )


def run_attack_batch(
    adapter: DetectorAdapter | AdapterSpec,
    dataset: DatasetIndex,
    config: AttackConfig,
    output_root: str | Path,
    *,
    workers: int = 1,
    resume: bool = False,
    use_annotation_targets: bool = False,
) -> BatchManifest:
    """Attack every dataset image, writing images, traces, and the manifest.

    Per-image failures are recorded and never abort the batch. With
    ``resume``, rows present in an existing manifest (with their adversarial
    file still on disk) are kept as-is. ``workers > 1`` requires an
    AdapterSpec so each worker process can build its own adapter.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    output_root = Path(output_root)
    spec = adapter if isinstance(adapter, AdapterSpec) else None
    if workers > 1 and spec is None:
        raise ValueError("parallel batches need an AdapterSpec, not an adapter instance")

    done: dict[str, ManifestRow] = {}
    manifest_path = output_root / MANIFEST_NAME
    if resume and manifest_path.is_file():
        previous = BatchManifest.load(manifest_path)
        for row in previous.rows:
            if row.status == "ok" and row.adversarial_path and Path(row.adversarial_path).is_file():
                done[row.image_id] = row
        log.info("resuming: %d of %d rows already complete", len(done), len(dataset))

    pending = [e for e in dataset.entries if e.image_id not in done]
    rows = dict(done)
    if pending:
        if workers > 1:
            jobs = [
                (entry, config, output_root, dataset.image_root, use_annotation_targets)
                for entry in pending
            ]
            with ProcessPoolExecutor(
                max_workers=workers, initializer=_init_worker, initargs=(spec,)
            ) as pool:
                for row in pool.map(_worker_attack, jobs):
                    rows[row.image_id] = row
        else:
            instance = spec.build() if spec is not None else adapter
            for entry in pending:
                rows[entry.image_id] = _attack_one(
                    instance, entry, config, output_root,
                    dataset.image_root, use_annotation_targets,
                )

    adapter_name = spec.name if spec is not None else adapter.name
    seed = spec.seed if spec is not None else getattr(adapter, "seed", 0)
    manifest = BatchManifest(
        adapter_name=adapter_name,
        seed=seed,
        config=_config_dict(config),
        dataset_id=dataset.dataset_id,
        rows=[rows[e.image_id] for e in dataset.entries],
    )
    manifest.save(output_root)
    return manifest
