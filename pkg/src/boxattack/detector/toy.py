"""Self-contained differentiable reference detector over synthetic shape scenes.

The scene generator doubles as its own ground truth, so the detector can be
trained at build time and verified without any downloaded weights. The
network uses only smooth operations (SiLU, sigmoid, softmax), which keeps the
input gradient well-defined everywhere and friendly to finite-difference
checks. Inference and gradients run in float64; training runs in float32 for
speed and the weights are promoted afterwards.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..core import (
    Annotation,
    BoundingBox,
    Detection,
    DetectionSet,
    ImageBuffer,
    LossBreakdown,
)
from ..errors import BackendError, BuildError
from ..metrics import iou
from .base import DetectorAdapter, PseudoLabelSet

log = logging.getLogger(__name__)

CLASS_NAMES = ("square", "disk", "triangle")
CELL = 8  # detection grid stride in pixels

# Loss weighting shared by training and the attack-facing loss. Positive
# cells dominate so the input gradient mostly pushes real detections down
# instead of conjuring background objects up.
_POS_CELL_WEIGHT = 6.0
_NEG_CELL_WEIGHT = 0.50
_LOC_WEIGHT = 4.0
_CLS_WEIGHT = 0.50

_CLASS_BASE_COLORS = (
    (0.84, 0.22, 0.20),  # square
    (0.18, 0.74, 0.26),  # disk
    (0.22, 0.30, 0.86),  # triangle
)


@dataclass(frozen=True)
class Scene:
    """A generated image together with the exact boxes of its planted shapes.

    ``strengths`` carries each shape's contrast level, which training uses as
    a soft objectness target so detection confidence grades with pattern
    quality instead of saturating.
    """

    image: ImageBuffer
    annotations: tuple[Annotation, ...]
    strengths: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.strengths:
            object.__setattr__(self, "strengths", tuple(1.0 for _ in self.annotations))


def make_scene(
    rng: np.random.Generator,
    image_size: int = 64,
    max_objects: int = 3,
) -> Scene:
    """Draw 1..max_objects non-overlapping colored shapes on a textured background."""
    size = image_size
    base = rng.uniform(0.35, 0.65)
    img = np.full((size, size, 3), base, dtype=np.float64)
    ramp = np.linspace(-0.5, 0.5, size)
    img += rng.uniform(-0.12, 0.12) * ramp[None, :, None]
    img += rng.uniform(-0.12, 0.12) * ramp[:, None, None]
    img += rng.normal(0.0, 0.02, img.shape)

    ys, xs = np.mgrid[0:size, 0:size]
    cy_grid = ys + 0.5
    cx_grid = xs + 0.5

    annotations: list[Annotation] = []
    strengths: list[float] = []
    boxes: list[tuple[float, float, float, float]] = []
    n_objects = int(rng.integers(1, max_objects + 1))
    for _ in range(n_objects):
        placed = False
        for _attempt in range(50):
            side = rng.uniform(14.0, 26.0)
            cx = rng.uniform(side / 2 + 2.0, size - side / 2 - 2.0)
            cy = rng.uniform(side / 2 + 2.0, size - side / 2 - 2.0)
            box = (cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2)
            clear = all(
                box[2] + 2 <= b[0] or b[2] + 2 <= box[0] or box[3] + 2 <= b[1] or b[3] + 2 <= box[1]
                for b in boxes
            )
            if clear:
                placed = True
                break
        if not placed:
            continue
        class_id = int(rng.integers(0, len(CLASS_NAMES)))
        # Contrast varies per shape, from vivid down to washed-out, so the
        # detector's confidences spread over a range instead of saturating.
        vividness = rng.uniform(0.55, 1.0)
        color = np.clip(
            np.asarray(_CLASS_BASE_COLORS[class_id]) + rng.uniform(-0.10, 0.10, 3), 0.0, 1.0
        )
        color = vividness * color + (1.0 - vividness) * base
        x0, y0, x1, y1 = box
        if class_id == 0:
            fill = (cx_grid >= x0) & (cx_grid < x1) & (cy_grid >= y0) & (cy_grid < y1)
        elif class_id == 1:
            r = side / 2
            fill = (cx_grid - cx) ** 2 + (cy_grid - cy) ** 2 <= r * r
        else:
            # Upright triangle: apex at the top edge midpoint, base on the bottom edge.
            inside_y = (cy_grid >= y0) & (cy_grid < y1)
            frac = np.clip((cy_grid - y0) / (y1 - y0), 0.0, 1.0)
            half_width = frac * (side / 2)
            fill = inside_y & (np.abs(cx_grid - cx) <= half_width)
        img[fill] = color[None, :]
        boxes.append(box)
        annotations.append(Annotation(BoundingBox(*box), class_id))
        strengths.append(0.65 + 0.35 * (vividness - 0.55) / 0.45)

    np.clip(img, 0.0, 1.0, out=img)
    return Scene(ImageBuffer(img), tuple(annotations), tuple(strengths))


def generate_scenes(count: int, seed: int, image_size: int = 64) -> list[Scene]:
    """Deterministic batch of scenes from one seed."""
    rng = np.random.default_rng([seed, 0x5CE4E5])
    return [make_scene(rng, image_size=image_size) for _ in range(count)]


def scene_recall(
    detections: DetectionSet, annotations, iou_threshold: float = 0.5
) -> float:
    """Fraction of annotated objects matched by a same-class detection."""
    annotations = list(annotations)
    if not annotations:
        return 1.0
    hit = 0
    for ann in annotations:
        if any(
            det.class_id == ann.class_id and iou(det.box, ann.box) >= iou_threshold
            for det in detections
        ):
            hit += 1
    return hit / len(annotations)


class _ToyNet(nn.Module):
    """Tiny fully-convolutional single-stage head, stride 8, smooth throughout.

    Head logits are softly bounded with a*tanh(z/a) so confidences cannot
    saturate; that keeps input gradients informative everywhere, which both
    the finite-difference checks and the attack loop rely on.
    """

    LOGIT_BOUND = 3.5

    def __init__(self, width: int, n_classes: int):
        super().__init__()
        w = width
        self.body = nn.Sequential(
            nn.Conv2d(3, w, 3, stride=1, padding=1),
            nn.SiLU(),
            nn.Conv2d(w, w, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 3, stride=1, padding=1),
            nn.SiLU(),
        )
        self.head = nn.Conv2d(2 * w, 5 + n_classes, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        raw = self.head(self.body(x))
        bound = self.LOGIT_BOUND
        return bound * torch.tanh(raw / bound)


def _pad_to_grid(pixels: np.ndarray) -> np.ndarray:
    """Pad right/bottom with neutral gray so both dims are multiples of CELL."""
    h, w = pixels.shape[:2]
    ph = (CELL - h % CELL) % CELL
    pw = (CELL - w % CELL) % CELL
    if ph == 0 and pw == 0:
        return pixels
    return np.pad(pixels, ((0, ph), (0, pw), (0, 0)), constant_values=0.5)


def _encode_targets(
    boxes, class_ids, grid_h: int, grid_w: int, pad_h: int, pad_w: int, dtype,
    strengths=None,
):
    """Dense assignment: every cell whose center lies inside a box is positive.

    Positive cells regress the owning box as edge distances from the cell
    center, normalized by the (padded) image size. The objectness target is
    the box's strength (1.0 unless given, e.g. for pseudo-labels). Later
    boxes win a contested cell.
    """
    if strengths is None:
        strengths = [1.0] * len(class_ids)
    obj_t = torch.zeros((grid_h, grid_w), dtype=dtype)
    box_t = torch.zeros((grid_h, grid_w, 4), dtype=dtype)
    cls_t = torch.zeros((grid_h, grid_w), dtype=torch.long)
    for box, class_id, strength in zip(boxes, class_ids, strengths):
        for i in range(grid_h):
            cy = (i + 0.5) * CELL
            if not box.y_min <= cy < box.y_max:
                continue
            for j in range(grid_w):
                cx = (j + 0.5) * CELL
                if not box.x_min <= cx < box.x_max:
                    continue
                obj_t[i, j] = strength
                box_t[i, j, 0] = (cx - box.x_min) / pad_w
                box_t[i, j, 1] = (cy - box.y_min) / pad_h
                box_t[i, j, 2] = (box.x_max - cx) / pad_w
                box_t[i, j, 3] = (box.y_max - cy) / pad_h
                cls_t[i, j] = class_id
    return obj_t, box_t, cls_t


def _loss_terms(raw: torch.Tensor, obj_t, box_t, cls_t):
    """Localization / objectness / classification components, each >= 0.

    The objectness and class terms live in probability space (squared or
    linear distance to the target) rather than log space: they are bounded,
    and their input gradients fade on cells that are already decided instead
    of growing without limit on cells that are already lost.
    """
    box_logits = raw[:, 0:4]
    obj_logits = raw[:, 4]
    cls_logits = raw[:, 5:]
    pos = obj_t > 0.5
    weights = torch.where(
        pos,
        torch.as_tensor(_POS_CELL_WEIGHT, dtype=raw.dtype),
        torch.as_tensor(_NEG_CELL_WEIGHT, dtype=raw.dtype),
    )
    l_obj = (weights * (torch.sigmoid(obj_logits) - obj_t) ** 2).mean()
    if bool(pos.any()):
        pred_box = torch.sigmoid(box_logits.permute(0, 2, 3, 1)[pos])
        l_loc = _LOC_WEIGHT * F.mse_loss(pred_box, box_t[pos])
        p_true = torch.softmax(cls_logits.permute(0, 2, 3, 1)[pos], dim=-1)
        p_true = p_true.gather(1, cls_t[pos].unsqueeze(1)).squeeze(1)
        l_cls = _CLS_WEIGHT * (1.0 - p_true).mean()
    else:
        l_loc = raw.sum() * 0.0
        l_cls = raw.sum() * 0.0
    return l_loc, l_obj, l_cls


class ToyDetector(DetectorAdapter):
    """Adapter around a trained _ToyNet; float64 inference and input gradients."""

    def __init__(self, net: _ToyNet, name: str, seed: int, nms_iou: float = 0.45):
        self.net = net.double().eval()
        for param in self.net.parameters():
            param.requires_grad_(False)
        self.name = name
        self.seed = seed
        self.class_vocabulary = CLASS_NAMES
        self.native_input_size = "any"
        self.nms_iou = nms_iou

    def _forward(self, pixels: np.ndarray, requires_grad: bool):
        padded = _pad_to_grid(pixels)
        x = torch.from_numpy(np.ascontiguousarray(padded.transpose(2, 0, 1))[None])
        x.requires_grad_(requires_grad)
        raw = self.net(x)
        return x, raw, padded.shape[0], padded.shape[1]

    def detect(self, image: ImageBuffer, threshold: float) -> DetectionSet:
        if not 0.0 <= threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {threshold}")
        with torch.no_grad():
            _, raw, pad_h, pad_w = self._forward(image.pixels, requires_grad=False)
        raw = raw[0]
        box_act = torch.sigmoid(raw[0:4]).numpy()
        obj = torch.sigmoid(raw[4]).numpy()
        cls_prob = torch.softmax(raw[5:], dim=0).numpy()
        grid_h, grid_w = obj.shape

        candidates = []
        for i in range(grid_h):
            for j in range(grid_w):
                class_id = int(np.argmax(cls_prob[:, i, j]))
                score = float(obj[i, j] * cls_prob[class_id, i, j])
                if score < threshold:
                    continue
                cx = (j + 0.5) * CELL
                cy = (i + 0.5) * CELL
                x0 = min(max(cx - box_act[0, i, j] * pad_w, 0.0), image.width)
                y0 = min(max(cy - box_act[1, i, j] * pad_h, 0.0), image.height)
                x1 = min(max(cx + box_act[2, i, j] * pad_w, 0.0), image.width)
                y1 = min(max(cy + box_act[3, i, j] * pad_h, 0.0), image.height)
                if x0 >= x1 or y0 >= y1:
                    continue
                candidates.append(
                    (score, i * grid_w + j, Detection(BoundingBox(x0, y0, x1, y1), class_id, score))
                )

        candidates.sort(key=lambda c: (-c[0], c[1]))
        kept: list[Detection] = []
        for _, _, det in candidates:
            suppressed = any(
                other.class_id == det.class_id and iou(det.box, other.box) > self.nms_iou
                for other in kept
            )
            if not suppressed:
                kept.append(det)
        return DetectionSet(tuple(kept), source_confidence_threshold=threshold)

    def loss_and_input_gradient(
        self, image: ImageBuffer, targets: PseudoLabelSet
    ) -> tuple[LossBreakdown, np.ndarray]:
        if len(targets) == 0:
            raise ValueError("targets must be non-empty")
        x, raw, pad_h, pad_w = self._forward(image.pixels, requires_grad=True)
        obj_t, box_t, cls_t = _encode_targets(
            targets.boxes, targets.class_ids, pad_h // CELL, pad_w // CELL, pad_h, pad_w, raw.dtype
        )
        l_loc, l_obj, l_cls = _loss_terms(raw, obj_t[None], box_t[None], cls_t[None])
        total = l_loc + l_obj + l_cls
        total.backward()
        grad = x.grad[0].numpy().transpose(1, 2, 0)[: image.height, : image.width]
        if not np.isfinite(grad).all():
            raise BackendError(f"adapter {self.name}: non-finite input gradient")
        breakdown = LossBreakdown.from_parts(
            float(l_loc.detach()), float(l_obj.detach()), float(l_cls.detach())
        )
        return breakdown, np.ascontiguousarray(grad)


def _holdout_recall(net: _ToyNet, adapter_name: str, scenes, threshold: float) -> float:
    # Probe a copy: wrapping freezes parameters and promotes them to float64,
    # which must not touch the net still being trained.
    probe = ToyDetector(copy.deepcopy(net), name=adapter_name, seed=-1)
    total = 0.0
    for scene in scenes:
        total += scene_recall(probe.detect(scene.image, threshold), scene.annotations)
    return total / len(scenes)


def build_toy_detector(
    seed: int,
    *,
    width: int = 16,
    variant: str = "toy",
    image_size: int = 64,
    train_scenes: int = 256,
    holdout_scenes: int = 24,
    batch_size: int = 16,
    max_epochs: int = 140,
    min_epochs: int = 60,
    target_recall: float = 0.9,
    noise: float = 0.08,
    learning_rate: float = 2e-3,
) -> ToyDetector:
    """Train a fresh toy detector until held-out recall reaches the target.

    Everything is derived from ``seed``: scene generation, weight init, batch
    order, and noise augmentation, so two builds with the same arguments give
    bit-identical weights. Raises BuildError if the recall target is not met
    within ``max_epochs``.
    """
    torch.manual_seed(seed * 7919 + 13)
    scenes = generate_scenes(train_scenes + holdout_scenes, seed=seed * 65537 + 1, image_size=image_size)
    train, holdout = scenes[:train_scenes], scenes[train_scenes:]

    images = torch.from_numpy(
        np.stack([s.image.pixels.transpose(2, 0, 1) for s in train]).astype(np.float32)
    )
    grid = image_size // CELL
    obj_ts, box_ts, cls_ts = [], [], []
    for scene in train:
        boxes = [ann.box for ann in scene.annotations]
        ids = [ann.class_id for ann in scene.annotations]
        o, b, c = _encode_targets(
            boxes, ids, grid, grid, image_size, image_size, torch.float32,
            strengths=scene.strengths,
        )
        obj_ts.append(o)
        box_ts.append(b)
        cls_ts.append(c)
    obj_all = torch.stack(obj_ts)
    box_all = torch.stack(box_ts)
    cls_all = torch.stack(cls_ts)

    net = _ToyNet(width, len(CLASS_NAMES))
    optimizer = torch.optim.Adam(net.parameters(), lr=learning_rate)
    gen = torch.Generator().manual_seed(seed * 104729 + 7)

    name = f"{variant}:{seed}"
    reached = None
    for epoch in range(max_epochs):
        perm = torch.randperm(len(train), generator=gen)
        for start in range(0, len(train), batch_size):
            idx = perm[start : start + batch_size]
            x = images[idx]
            if noise > 0.0:
                jitter = torch.empty_like(x).uniform_(-noise, noise, generator=gen)
                x = torch.clamp(x + jitter, 0.0, 1.0)
            l_loc, l_obj, l_cls = _loss_terms(net(x), obj_all[idx], box_all[idx], cls_all[idx])
            loss = l_loc + l_obj + l_cls
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        if epoch + 1 >= min_epochs:
            recall = _holdout_recall(net, name, holdout, threshold=0.5)
            if recall >= target_recall:
                reached = (epoch + 1, recall)
                break
    if reached is None:
        final = _holdout_recall(net, name, holdout, threshold=0.5)
        raise BuildError(
            f"toy detector {name} reached recall {final:.3f} < {target_recall} "
            f"after {max_epochs} epochs"
        )
    log.info(
        "built %s: held-out recall %.3f after %d epochs", name, reached[1], reached[0]
    )
    return ToyDetector(net, name=name, seed=seed)
