"""Lossy JPEG transform simulator used for error level analysis.

Implements the quantization path only: 8x8 blockwise DCT of YCbCr planes
(4:4:4, no subsampling), quantization with quality-scaled Annex-K tables,
dequantization and inverse DCT. No entropy coding, since the ELA residual
is fully determined by the lossy transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# ITU-T T.81 Annex K reference quantization tables.
LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)

CHROMA_TABLE = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.float64,
)


def scale_table(base: np.ndarray, quality: int) -> np.ndarray:
    """libjpeg-style quality scaling; quality 50 reproduces ``base``."""
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must be in [1, 100], got {quality}")
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    return np.clip(np.floor((base * scale + 50) / 100), 1, 255)


@dataclass
class JpegPlan:
    """Quantization tables and mode for one quality factor."""

    quality: int
    luma: np.ndarray = field(init=False)
    chroma: np.ndarray = field(init=False)
    subsampling: str = "4:4:4"

    def __post_init__(self):
        self.luma = scale_table(LUMA_TABLE, self.quality)
        self.chroma = scale_table(CHROMA_TABLE, self.quality)


def _dct_matrix() -> np.ndarray:
    k = np.arange(8)
    mat = np.cos((2 * k[None, :] + 1) * k[:, None] * np.pi / 16)
    mat *= np.sqrt(2.0 / 8.0)
    mat[0] *= 1.0 / np.sqrt(2.0)
    return mat


_DCT = _dct_matrix()


def _blockwise(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _unblock(blocks: np.ndarray, h: int, w: int) -> np.ndarray:
    return blocks.transpose(0, 2, 1, 3).reshape(h, w)


def _quantize_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    blocks = _blockwise(plane - 128.0)
    coefs = _DCT @ blocks @ _DCT.T
    deq = np.round(coefs / table) * table
    rec = _DCT.T @ deq @ _DCT
    return _unblock(rec, *plane.shape) + 128.0


def _rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr])


def _ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc
    cb = cb - 128.0
    cr = cr - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b])


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    """Encode-then-decode a (3,H,W) image with values in [0,1].

    Deterministic and pure: identical input and quality give bit-identical
    output. Input is snapped to the 8-bit grid first (ELA operates on
    stored 8-bit images) and the output is clamped back to [0,1].
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3,H,W) image, got shape {image.shape}")
    _, h, w = image.shape
    if h < 8 or w < 8:
        raise ValueError(f"image must be at least 8x8, got {h}x{w}")
    plan = JpegPlan(quality)

    x = np.round(np.clip(image, 0.0, 1.0) * 255.0)
    ph = (-h) % 8
    pw = (-w) % 8
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="edge")

    ycc = _rgb_to_ycbcr(x)
    out = np.stack(
        [
            _quantize_plane(ycc[0], plan.luma),
            _quantize_plane(ycc[1], plan.chroma),
            _quantize_plane(ycc[2], plan.chroma),
        ]
    )
    rgb = _ycbcr_to_rgb(out)[:, :h, :w]
    rgb = np.clip(np.round(rgb), 0.0, 255.0)
    return (rgb / 255.0).astype(image.dtype, copy=False)


def ela_residual(image: np.ndarray, quality: int = 90) -> np.ndarray:
    """Absolute difference between an image and its JPEG round-trip.

    Zero exactly where (and only where) the image is a fixed point of
    ``jpeg_roundtrip`` at this quality.
    """
    return np.abs(image - jpeg_roundtrip(image, quality)).astype(
        image.dtype, copy=False
    )
