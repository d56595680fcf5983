"""Content-suppression frontend: learnable RGB convolutions, fixed SRM
residual filters, constrained (Bayar) convolution, and an ELA branch fed
by an internal JPEG round-trip. Outputs are concatenated into a 54-channel
feature map at full resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import jpegsim
from .autodiff import DEFAULT_DTYPE, Tensor, concat_channels, conv2d
from .nn import Conv2d, ConvStack, Module


@dataclass
class FrontendConfig:
    ela_quality: int = 90
    rgb_filters: int = 16
    srm_filters: int = 3
    bayar_filters: int = 3
    ela_filters: int = 32

    @property
    def out_channels(self) -> int:
        return self.rgb_filters + self.srm_filters + self.bayar_filters + self.ela_filters


# The three canonical residual kernels from the steganalysis rich-model
# filter bank (first-order, second-order, SQUARE5x5), with their usual
# normalizers 2, 4 and 12.
def srm_kernels() -> np.ndarray:
    k1 = np.zeros((5, 5))
    k1[2, 1:4] = [1, -2, 1]
    k1 /= 2.0
    k2 = np.zeros((5, 5))
    k2[1:4, 1:4] = [[-1, 2, -1], [2, -4, 2], [-1, 2, -1]]
    k2 /= 4.0
    k3 = np.array(
        [
            [-1, 2, -2, 2, -1],
            [2, -6, 8, -6, 2],
            [-2, 8, -12, 8, -2],
            [2, -6, 8, -6, 2],
            [-1, 2, -2, 2, -1],
        ],
        dtype=np.float64,
    )
    k3 /= 12.0
    return np.stack([k1, k2, k3])


def srm_weight(dtype=None) -> np.ndarray:
    """(3,3,5,5) frozen weight: kernel o applied to every input channel."""
    kernels = srm_kernels()
    w = np.repeat(kernels[:, None, :, :], 3, axis=1)
    return w.astype(dtype or DEFAULT_DTYPE)


def bayar_project(weight: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """In-place constraint projection for a (O,I,k,k) Bayar weight.

    Per 5x5 plane: center coefficient forced to -1, remaining coefficients
    rescaled to sum to +1. Degenerate (near-zero sum) off-center weights
    are re-initialized uniformly before rescaling.
    """
    o, i, k, _ = weight.shape
    if k % 2 == 0:
        raise ValueError("Bayar kernel must have odd size")
    c = k // 2
    center_mask = np.zeros((k, k), dtype=bool)
    center_mask[c, c] = True
    for oi in range(o):
        for ii in range(i):
            plane = weight[oi, ii]
            off = plane[~center_mask]
            s = off.sum()
            if abs(s) < 1e-8:
                rng = rng or np.random.default_rng(0)
                off = rng.random(off.shape).astype(weight.dtype) + 0.1
                s = off.sum()
            plane[~center_mask] = off / s
            plane[c, c] = -1.0
    return weight


class Frontend(Module):
    """54-channel forensic feature extractor for the first encoder layer."""

    def __init__(self, config: FrontendConfig, rng: np.random.Generator, dtype=None):
        self.config = config
        self.rgb = ConvStack(3, config.rgb_filters, config.rgb_filters, rng, dtype=dtype)
        self.srm = Tensor(srm_weight(dtype), requires_grad=False)
        self.bayar = Conv2d(3, config.bayar_filters, 5, rng, pad=2, bias=False, dtype=dtype)
        bayar_project(self.bayar.weight.data, rng)
        self.ela = ConvStack(3, config.ela_filters, config.ela_filters, rng, dtype=dtype)

    def ela_input(self, images: np.ndarray) -> np.ndarray:
        """Per-image ELA residual stack, computed outside the graph."""
        return np.stack(
            [jpegsim.ela_residual(img, self.config.ela_quality) for img in images]
        )

    def __call__(self, x: Tensor) -> Tensor:
        rgb_out = self.rgb(x)
        srm_out = conv2d(x, self.srm, pad=2)
        bayar_out = self.bayar(x)
        res = Tensor(self.ela_input(x.data).astype(x.dtype, copy=False))
        ela_out = self.ela(res)
        return concat_channels([rgb_out, srm_out, bayar_out, ela_out])

    def project_constraints(self, rng: np.random.Generator | None = None):
        """Re-apply the Bayar constraint (call after every optimizer step)."""
        bayar_project(self.bayar.weight.data, rng)
