"""PNG / binary PPM read and write for float images in ``[0, 1]``."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def save_image(path, image) -> None:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[..., 0]
    data = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    fmt = "PPM" if Path(path).suffix.lower() in (".ppm", ".pgm", ".pnm") else "PNG"
    Image.fromarray(data).save(path, format=fmt)


def load_image(path, channels: int = 3) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB" if channels == 3 else "L")
        data = np.asarray(im, dtype=np.float64) / 255.0
    return data if data.ndim == 3 else data[..., None]
