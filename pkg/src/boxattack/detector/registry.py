"""Adapter registry keyed by string names, with a per-process build cache."""

from __future__ import annotations

import os
from pathlib import Path

from ..errors import BackendError, ConfigurationError
from .base import DetectorAdapter
from .toy import build_toy_detector

MODEL_DIR_ENV = "BOXATTACK_MODEL_DIR"

_EXTERNAL_BACKENDS = {
    "yolov8n": "ultralytics",
    "yolov8s": "ultralytics",
    "yolov8m": "ultralytics",
    "yolov8l": "ultralytics",
    "yolov8x": "ultralytics",
    "swin-t": "mmdetection",
}

ADAPTER_NAMES = (
    "toy",
    "toy-large",
    "faster-rcnn",
    "retinanet",
    *sorted(_EXTERNAL_BACKENDS),
)

_cache: dict[tuple[str, int, str], DetectorAdapter] = {}


def resolve_model_dir(model_dir: str | Path | None = None) -> Path:
    """Explicit argument, then the environment override, then ./models."""
    if model_dir is not None:
        return Path(model_dir)
    env = os.environ.get(MODEL_DIR_ENV)
    if env:
        return Path(env)
    return Path("models")


def available_adapters() -> tuple[str, ...]:
    return ADAPTER_NAMES


def get_adapter(
    name: str, *, seed: int = 0, model_dir: str | Path | None = None
) -> DetectorAdapter:
    """Build (or fetch from cache) the adapter registered under ``name``.

    ``seed`` controls the toy family's training; weight-backed adapters read
    their checkpoint from the resolved model directory.
    """
    if name not in ADAPTER_NAMES:
        raise ConfigurationError(
            f"unknown adapter '{name}'; available: {', '.join(ADAPTER_NAMES)}"
        )
    resolved = resolve_model_dir(model_dir)
    key = (name, seed, str(resolved))
    if key in _cache:
        return _cache[key]

    if name == "toy":
        adapter = build_toy_detector(seed)
    elif name == "toy-large":
        adapter = build_toy_detector(seed, width=40, variant="toy-large")
    elif name in ("faster-rcnn", "retinanet"):
        from .torch_backend import load_torchvision_adapter

        adapter = load_torchvision_adapter(name, resolved)
    else:
        backend = _EXTERNAL_BACKENDS[name]
        raise BackendError(
            f"adapter '{name}' needs the '{backend}' backend plus local weights; "
            f"neither is bundled with this package"
        )
    _cache[key] = adapter
    return adapter
