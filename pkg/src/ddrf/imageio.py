"""8-bit grayscale PNG and plain-text matrix I/O."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage


def read_image(path) -> np.ndarray:
    """Load a PNG (or any Pillow format) as a float64 luminance image in [0, 1]."""
    with PILImage.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            return np.clip(arr / 65535.0, 0.0, 1.0)
        if im.mode != "L":
            im = im.convert("L")
        return np.asarray(im, dtype=np.float64) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Quantise with round-half-to-even."""
    return np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, image: np.ndarray) -> Path:
    path = Path(path)
    PILImage.fromarray(to_uint8(image), mode="L").save(path, format="PNG", optimize=False)
    return path


def write_matrix(path, matrix: np.ndarray) -> Path:
    path = Path(path)
    np.savetxt(path, np.asarray(matrix, dtype=np.float64), fmt="%.17g")
    return path


def read_matrix(path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.float64, ndmin=2)
