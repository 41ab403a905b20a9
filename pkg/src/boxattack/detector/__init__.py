"""Detector adapters: the uniform contract, the built-in toy detector, and the registry."""

from .base import DetectorAdapter, PseudoLabelSet, make_pseudo_labels
from .registry import available_adapters, get_adapter, resolve_model_dir
from .toy import (
    CLASS_NAMES,
    Scene,
    ToyDetector,
    build_toy_detector,
    generate_scenes,
    make_scene,
    scene_recall,
)

__all__ = [
    "CLASS_NAMES",
    "DetectorAdapter",
    "PseudoLabelSet",
    "Scene",
    "ToyDetector",
    "available_adapters",
    "build_toy_detector",
    "generate_scenes",
    "get_adapter",
    "make_pseudo_labels",
    "make_scene",
    "resolve_model_dir",
    "scene_recall",
]
