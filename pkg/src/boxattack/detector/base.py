"""Detector adapter contract and pseudo-label plumbing.

Adapters own any internal resizing or letterboxing: detections and input
gradients always come back in the original image frame. Instances are
stateful and expect one in-flight call at a time; run one adapter per worker
for parallelism.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from ..core import BoundingBox, DetectionSet, ImageBuffer, LossBreakdown


@dataclass(frozen=True)
class PseudoLabelSet:
    """Frozen loss targets: boxes and class ids with confidences discarded."""

    boxes: tuple[BoundingBox, ...]
    class_ids: tuple[int, ...]
    frozen: bool = True

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "class_ids", tuple(self.class_ids))
        if len(self.boxes) != len(self.class_ids):
            raise ValueError(
                f"{len(self.boxes)} boxes but {len(self.class_ids)} class ids"
            )
        if not self.frozen:
            raise ValueError("pseudo-label sets are always frozen")

    def __len__(self) -> int:
        return len(self.boxes)


def make_pseudo_labels(detections: DetectionSet) -> PseudoLabelSet:
    """Project a detection set onto loss targets, discarding confidences."""
    if len(detections) == 0:
        raise ValueError("cannot build pseudo-labels from an empty detection set")
    return PseudoLabelSet(
        boxes=tuple(det.box for det in detections),
        class_ids=tuple(det.class_id for det in detections),
    )


class DetectorAdapter(abc.ABC):
    """Uniform interface the attack engine drives.

    ``detect`` must be deterministic for a fixed image and threshold, and
    ``loss_and_input_gradient`` must return the gradient of the total
    training loss with respect to the original image's pixels.
    """

    name: str
    class_vocabulary: tuple[str, ...]
    native_input_size: tuple[int, int] | str = "any"

    @abc.abstractmethod
    def detect(self, image: ImageBuffer, threshold: float) -> DetectionSet:
        """Post-NMS detections with confidence >= ``threshold``, original frame."""

    @abc.abstractmethod
    def loss_and_input_gradient(
        self, image: ImageBuffer, targets: PseudoLabelSet
    ) -> tuple[LossBreakdown, np.ndarray]:
        """Training loss against ``targets`` plus d(total)/d(image), same shape as image."""

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"
