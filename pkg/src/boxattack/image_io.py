"""Image file I/O. Inputs may be any Pillow-readable format; adversarial
outputs are restricted to lossless 8-bit PNG so small perturbations survive
the trip to disk."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .core import ImageBuffer
from .errors import UnsupportedFormatError

LOSSLESS_SUFFIX = ".png"


def load_image(path: str | Path) -> ImageBuffer:
    """Read any raster file as an RGB image with pixels in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return ImageBuffer(arr)


def save_image(image: ImageBuffer, path: str | Path) -> Path:
    """Write an image as lossless 8-bit PNG; any other suffix is refused."""
    path = Path(path)
    if path.suffix.lower() != LOSSLESS_SUFFIX:
        raise UnsupportedFormatError(
            f"refusing to write '{path.suffix}': lossy or unknown formats destroy "
            f"small perturbations; use {LOSSLESS_SUFFIX}"
        )
    arr = np.round(image.pixels * 255.0).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    return path


def quantized(image: ImageBuffer) -> ImageBuffer:
    """The image as it would read back after an 8-bit PNG round trip."""
    return ImageBuffer(np.round(image.pixels * 255.0) / 255.0)
