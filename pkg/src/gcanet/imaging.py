"""Image file IO: PNG / binary PPM input, PNG / PGM output.

Images are (3,H,W) float arrays in [0,1]; masks are (1,H,W) in {0,1};
heatmaps are probability maps written as 8-bit grayscale.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG or binary PPM into a (3,H,W) float32 array."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def load_mask(path) -> np.ndarray:
    """Read a grayscale mask; any value > 127 counts as forged."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.float32)[None]


def _to_uint8(arr: np.ndarray) -> np.ndarray:
    # round half up so probability 0.5 maps to 128
    return np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(path, image: np.ndarray):
    """Write a (3,H,W) [0,1] image as 8-bit PNG (or PPM by extension)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(_to_uint8(image).transpose(1, 2, 0)).save(path)


def save_mask(path, mask: np.ndarray):
    """Write a (1,H,W) binary mask as PGM/PNG (0 or 255)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = ((np.asarray(mask)[0] > 0.5) * 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def save_heatmap(path, prob_map: np.ndarray):
    """Write a (1,H,W) probability map as 8-bit grayscale (prob * 255)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(_to_uint8(np.asarray(prob_map)[0])).save(path)
