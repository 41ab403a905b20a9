"""Dataset ingestion: COCO JSON annotations, VOC XML directories, and the
materialized synthetic shapes set. All loaders convert boxes to corner form in
0-based pixel coordinates and remap category ids to contiguous indices."""

from __future__ import annotations

import json
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

from ..core import Annotation, BoundingBox
from ..errors import AnnotationParseError
from ..image_io import save_image

log = logging.getLogger(__name__)

# VOC class names to their COCO equivalents; every VOC-2012 class has one.
VOC_TO_COCO_LABELS = {
    "aeroplane": "airplane",
    "bicycle": "bicycle",
    "bird": "bird",
    "boat": "boat",
    "bottle": "bottle",
    "bus": "bus",
    "car": "car",
    "cat": "cat",
    "chair": "chair",
    "cow": "cow",
    "diningtable": "dining table",
    "dog": "dog",
    "horse": "horse",
    "motorbike": "motorcycle",
    "person": "person",
    "pottedplant": "potted plant",
    "sheep": "sheep",
    "sofa": "couch",
    "train": "train",
    "tvmonitor": "tv",
}


@dataclass(frozen=True)
class DatasetEntry:
    image_id: str
    image_path: Path
    width: int
    height: int
    annotations: tuple[Annotation, ...]


@dataclass(frozen=True)
class DatasetIndex:
    """Images plus ground truth, with a contiguous class vocabulary."""

    dataset_id: str
    entries: tuple[DatasetEntry, ...]
    class_names: tuple[str, ...]
    image_root: Path

    def __post_init__(self):
        ids = [e.image_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise AnnotationParseError("duplicate image ids in dataset index")

    def __len__(self) -> int:
        return len(self.entries)


def _clamped_annotation(
    box: BoundingBox, class_id: int, width: int, height: int, difficult: bool
) -> Annotation:
    return Annotation(box.clamped(width, height), class_id, difficult=difficult)


def load_coco_annotations(
    annotation_path: str | Path,
    image_root: str | Path,
    *,
    dataset_id: str = "custom",
    require_images: bool = True,
) -> DatasetIndex:
    """Load a COCO-format annotation document ([x, y, w, h] boxes).

    Category ids are remapped to contiguous 0-based indices ordered by the
    original id; crowd annotations come through flagged difficult. Entries
    whose image file is missing are excluded with a warning.
    """
    annotation_path = Path(annotation_path)
    image_root = Path(image_root)
    try:
        with open(annotation_path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise AnnotationParseError(
            f"{annotation_path}: invalid JSON at line {exc.lineno} column {exc.colno}"
        ) from exc

    for key in ("images", "annotations", "categories"):
        if key not in doc:
            raise AnnotationParseError(f"{annotation_path}: missing top-level '{key}' array")

    categories = sorted(doc["categories"], key=lambda c: c["id"])
    try:
        class_names = tuple(c["name"] for c in categories)
        id_to_index = {c["id"]: i for i, c in enumerate(categories)}
    except (KeyError, TypeError) as exc:
        raise AnnotationParseError(f"{annotation_path}: malformed categories: {exc}") from exc

    images: dict = {}
    for i, img in enumerate(doc["images"]):
        try:
            images[img["id"]] = (str(img["file_name"]), int(img["width"]), int(img["height"]))
        except (KeyError, TypeError) as exc:
            raise AnnotationParseError(f"{annotation_path}: images[{i}]: {exc}") from exc

    by_image: dict = {image_id: [] for image_id in images}
    for i, ann in enumerate(doc["annotations"]):
        try:
            image_id = ann["image_id"]
            x, y, w, h = (float(v) for v in ann["bbox"])
            category = ann["category_id"]
            crowd = bool(ann.get("iscrowd", 0))
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationParseError(f"{annotation_path}: annotations[{i}]: {exc}") from exc
        if image_id not in by_image:
            raise AnnotationParseError(
                f"{annotation_path}: annotations[{i}]: unknown image_id {image_id!r}"
            )
        if category not in id_to_index:
            raise AnnotationParseError(
                f"{annotation_path}: annotations[{i}]: unknown category_id {category!r}"
            )
        if w <= 0 or h <= 0:
            log.warning("%s: annotations[%d]: empty box skipped", annotation_path, i)
            continue
        _, img_w, img_h = images[image_id]
        by_image[image_id].append(
            _clamped_annotation(
                BoundingBox(x, y, x + w, y + h), id_to_index[category], img_w, img_h, crowd
            )
        )

    entries = []
    for image_id in sorted(images, key=str):
        file_name, img_w, img_h = images[image_id]
        path = image_root / file_name
        if require_images and not path.is_file():
            log.warning("missing image file %s; entry %r excluded", path, image_id)
            continue
        entries.append(
            DatasetEntry(str(image_id), path, img_w, img_h, tuple(by_image[image_id]))
        )
    return DatasetIndex(dataset_id, tuple(entries), class_names, image_root)


def load_voc_annotations(
    xml_dir: str | Path,
    image_root: str | Path,
    *,
    dataset_id: str = "custom",
    require_images: bool = True,
) -> DatasetIndex:
    """Load a directory of VOC-format per-image XML descriptors.

    VOC's 1-based inclusive pixel coordinates become 0-based corner form.
    Objects marked difficult are retained with their flag set (the mAP
    computation excludes them by default).
    """
    xml_dir = Path(xml_dir)
    image_root = Path(image_root)
    xml_files = sorted(xml_dir.glob("*.xml"))
    if not xml_files:
        log.warning("no XML descriptors found under %s", xml_dir)

    names: list[str] = []
    parsed = []
    for path in xml_files:
        try:
            root = ET.parse(path).getroot()
        except ET.ParseError as exc:
            raise AnnotationParseError(f"{path}: {exc}") from exc
        try:
            file_name = root.findtext("filename") or f"{path.stem}.jpg"
            size = root.find("size")
            width = int(size.findtext("width"))
            height = int(size.findtext("height"))
            objects = []
            for obj in root.findall("object"):
                name = obj.findtext("name")
                if name is None:
                    raise AnnotationParseError(f"{path}: object without a name")
                difficult = (obj.findtext("difficult") or "0").strip() == "1"
                bnd = obj.find("bndbox")
                x0 = float(bnd.findtext("xmin")) - 1.0
                y0 = float(bnd.findtext("ymin")) - 1.0
                x1 = float(bnd.findtext("xmax"))
                y1 = float(bnd.findtext("ymax"))
                objects.append((name, difficult, (x0, y0, x1, y1)))
                if name not in names:
                    names.append(name)
        except (AttributeError, TypeError, ValueError) as exc:
            raise AnnotationParseError(f"{path}: {exc}") from exc
        parsed.append((path.stem, file_name, width, height, objects))

    class_names = tuple(sorted(names))
    index_of = {name: i for i, name in enumerate(class_names)}
    entries = []
    for image_id, file_name, width, height, objects in parsed:
        path = image_root / file_name
        if require_images and not path.is_file():
            log.warning("missing image file %s; entry %r excluded", path, image_id)
            continue
        annotations = tuple(
            _clamped_annotation(BoundingBox(*coords), index_of[name], width, height, difficult)
            for name, difficult, coords in objects
        )
        entries.append(DatasetEntry(image_id, path, width, height, annotations))
    return DatasetIndex(dataset_id, tuple(entries), class_names, image_root)


def build_synthetic_dataset(
    root: str | Path, count: int = 20, seed: int = 0, image_size: int = 64
) -> DatasetIndex:
    """Materialize generated shape scenes as PNGs plus a COCO-format index."""
    from ..detector.toy import CLASS_NAMES, generate_scenes

    root = Path(root)
    images_dir = root / "images"
    scenes = generate_scenes(count, seed=seed, image_size=image_size)
    doc = {
        "images": [],
        "annotations": [],
        "categories": [{"id": i + 1, "name": name} for i, name in enumerate(CLASS_NAMES)],
    }
    ann_id = 1
    for i, scene in enumerate(scenes):
        image_id = f"scene-{seed}-{i:04d}"
        save_image(scene.image, images_dir / f"{image_id}.png")
        doc["images"].append(
            {
                "id": image_id,
                "file_name": f"{image_id}.png",
                "width": scene.image.width,
                "height": scene.image.height,
            }
        )
        for ann in scene.annotations:
            doc["annotations"].append(
                {
                    "id": ann_id,
                    "image_id": image_id,
                    "category_id": ann.class_id + 1,
                    "bbox": [ann.box.x_min, ann.box.y_min, ann.box.width, ann.box.height],
                    "iscrowd": 0,
                }
            )
            ann_id += 1
    ann_path = root / "annotations.json"
    ann_path.parent.mkdir(parents=True, exist_ok=True)
    with open(ann_path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    return load_coco_annotations(ann_path, images_dir, dataset_id="synthetic")


def align_class_ids(
    index: DatasetIndex,
    target_vocabulary,
    name_mapping: dict[str, str] | None = None,
) -> tuple[DatasetIndex, int]:
    """Remap annotation class ids into an adapter's vocabulary by name.

    ``name_mapping`` translates dataset class names first (e.g. the shipped
    VOC-to-COCO table). Annotations whose class has no slot in the target
    vocabulary are dropped; the count of dropped annotations is returned.
    """
    target_index = {name: i for i, name in enumerate(target_vocabulary)}
    translate = name_mapping or {}
    excluded = 0
    new_entries = []
    for entry in index.entries:
        kept = []
        for ann in entry.annotations:
            name = index.class_names[ann.class_id]
            name = translate.get(name, name)
            if name in target_index:
                kept.append(
                    Annotation(ann.box, target_index[name], difficult=ann.difficult)
                )
            else:
                excluded += 1
        new_entries.append(
            DatasetEntry(entry.image_id, entry.image_path, entry.width, entry.height, tuple(kept))
        )
    if excluded:
        log.warning(
            "%d annotations excluded: classes missing from the target vocabulary", excluded
        )
    aligned = DatasetIndex(
        index.dataset_id, tuple(new_entries), tuple(target_vocabulary), index.image_root
    )
    return aligned, excluded
