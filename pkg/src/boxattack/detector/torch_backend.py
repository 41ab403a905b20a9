"""Adapters around torchvision detection models, loading local weight files only.

These run the same contract as the toy detector: original-frame boxes and
input gradients, with the backend's native loss dict regrouped into the
localization / objectness / classification decomposition. Two-stage models
map their RPN objectness term to the objectness slot; single-stage models
without a separate objectness head report it as zero.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch

from ..core import BoundingBox, Detection, DetectionSet, ImageBuffer, LossBreakdown
from ..errors import BackendError, ConfigurationError
from .base import DetectorAdapter, PseudoLabelSet

log = logging.getLogger(__name__)

LOSS_GROUPS = {
    "faster-rcnn": {
        "loc": ("loss_box_reg", "loss_rpn_box_reg"),
        "obj": ("loss_objectness",),
        "cls": ("loss_classifier",),
    },
    "retinanet": {
        "loc": ("bbox_regression",),
        "obj": (),
        "cls": ("classification",),
    },
}

# torchvision COCO checkpoints emit the original 91-slot category ids.
COCO91_NAMES = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck",
    "boat", "traffic light", "fire hydrant", "N/A", "stop sign", "parking meter",
    "bench", "bird", "cat", "dog", "horse", "sheep", "cow", "elephant", "bear",
    "zebra", "giraffe", "N/A", "backpack", "umbrella", "N/A", "N/A", "handbag",
    "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket",
    "bottle", "N/A", "wine glass", "cup", "fork", "knife", "spoon", "bowl",
    "banana", "apple", "sandwich", "orange", "broccoli", "carrot", "hot dog",
    "pizza", "donut", "cake", "chair", "couch", "potted plant", "bed", "N/A",
    "dining table", "N/A", "N/A", "toilet", "N/A", "tv", "laptop", "mouse",
    "remote", "keyboard", "cell phone", "microwave", "oven", "toaster", "sink",
    "refrigerator", "N/A", "book", "clock", "vase", "scissors", "teddy bear",
    "hair drier", "toothbrush",
)


class TorchvisionAdapter(DetectorAdapter):
    """Wraps any torchvision detection model (GeneralizedRCNN-style API)."""

    def __init__(
        self,
        name: str,
        model: torch.nn.Module,
        class_vocabulary,
        loss_groups: dict[str, tuple[str, ...]],
        label_offset: int = 1,
    ):
        self.name = name
        self.model = model.eval()
        self.class_vocabulary = tuple(class_vocabulary)
        self.loss_groups = loss_groups
        self.label_offset = label_offset
        self.native_input_size = "any"

    def _to_tensor(self, image: ImageBuffer) -> torch.Tensor:
        return torch.from_numpy(
            np.ascontiguousarray(image.pixels.transpose(2, 0, 1)).astype(np.float32)
        )

    def detect(self, image: ImageBuffer, threshold: float) -> DetectionSet:
        if not 0.0 <= threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {threshold}")
        try:
            with torch.no_grad():
                output = self.model([self._to_tensor(image)])[0]
        except Exception as exc:  # backend failures carry the adapter name
            raise BackendError(f"adapter {self.name}: inference failed: {exc}") from exc

        detections = []
        for box, label, score in zip(
            output["boxes"].tolist(), output["labels"].tolist(), output["scores"].tolist()
        ):
            if score < threshold:
                continue
            class_id = int(label) - self.label_offset
            if class_id < 0:
                continue
            x0 = min(max(box[0], 0.0), image.width)
            x1 = min(max(box[2], 0.0), image.width)
            y0 = min(max(box[1], 0.0), image.height)
            y1 = min(max(box[3], 0.0), image.height)
            if x0 >= x1 or y0 >= y1:
                continue
            detections.append(
                Detection(BoundingBox(x0, y0, x1, y1), class_id, float(min(score, 1.0)))
            )
        return DetectionSet(tuple(detections), source_confidence_threshold=threshold)

    def loss_and_input_gradient(
        self, image: ImageBuffer, targets: PseudoLabelSet
    ) -> tuple[LossBreakdown, np.ndarray]:
        if len(targets) == 0:
            raise ValueError("targets must be non-empty")
        x = self._to_tensor(image)
        x.requires_grad_(True)
        target = {
            "boxes": torch.tensor([b.as_tuple() for b in targets.boxes], dtype=torch.float32),
            "labels": torch.tensor(
                [c + self.label_offset for c in targets.class_ids], dtype=torch.int64
            ),
        }
        was_training = self.model.training
        try:
            self.model.train()
            # Proposal subsampling inside two-stage heads draws from the global
            # RNG; fork and pin it so the loss is a deterministic function of
            # the image and targets.
            with torch.random.fork_rng():
                torch.manual_seed(0)
                losses = self.model([x], [target])
                total = sum(losses.values())
                total.backward()
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(f"adapter {self.name}: loss evaluation failed: {exc}") from exc
        finally:
            self.model.train(was_training)

        grouped = {"loc": 0.0, "obj": 0.0, "cls": 0.0}
        known = {key for keys in self.loss_groups.values() for key in keys}
        for key, value in losses.items():
            slot = next((s for s, keys in self.loss_groups.items() if key in keys), None)
            if slot is None:
                log.warning("adapter %s: unmapped loss term %r folded into cls", self.name, key)
                slot = "cls"
            grouped[slot] += float(value)
        missing = known - set(losses)
        if missing:
            log.warning("adapter %s: expected loss terms absent: %s", self.name, sorted(missing))

        if x.grad is None:
            raise BackendError(f"adapter {self.name}: backend returned no input gradient")
        grad = x.grad.numpy().transpose(1, 2, 0).astype(np.float64)
        if not np.isfinite(grad).all():
            raise BackendError(f"adapter {self.name}: non-finite input gradient")
        return LossBreakdown.from_parts(grouped["loc"], grouped["obj"], grouped["cls"]), grad


def _find_weights(arch: str, model_dir: Path) -> Path:
    for suffix in (".pt", ".pth"):
        candidate = model_dir / f"{arch}{suffix}"
        if candidate.is_file():
            return candidate
    raise ConfigurationError(
        f"no weights found for '{arch}': place a torchvision state dict at "
        f"{model_dir / (arch + '.pt')} (or point BOXATTACK_MODEL_DIR elsewhere)"
    )


def load_torchvision_adapter(arch: str, model_dir: Path) -> TorchvisionAdapter:
    """Build a COCO-vocabulary torchvision detector from a local checkpoint."""
    from torchvision.models import detection as tvd

    weights_path = _find_weights(arch, model_dir)
    if arch == "faster-rcnn":
        model = tvd.fasterrcnn_resnet50_fpn(weights=None, weights_backbone=None, num_classes=91)
    elif arch == "retinanet":
        model = tvd.retinanet_resnet50_fpn(weights=None, weights_backbone=None, num_classes=91)
    else:
        raise ConfigurationError(f"no torchvision architecture registered for '{arch}'")
    state = torch.load(weights_path, map_location="cpu")
    model.load_state_dict(state)
    return TorchvisionAdapter(
        name=arch,
        model=model,
        class_vocabulary=COCO91_NAMES,
        loss_groups=LOSS_GROUPS[arch],
        label_offset=1,
    )
