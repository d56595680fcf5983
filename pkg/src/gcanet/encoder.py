"""Five-stage convolutional encoder with an image-level classification head.

Each stage halves the spatial extent, producing features X^{0,0}..X^{4,0}
at scales H/2 .. H/32. The classification head global-average-pools the
deepest stage and applies a single fully connected layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, global_avg_pool, relu, reshape, sigmoid
from .nn import Conv2d, Module


@dataclass
class EncoderConfig:
    stage_channels: tuple = (16, 32, 64, 128, 256)
    blocks_per_stage: int = 2
    in_channels: int = 54

    def __post_init__(self):
        if len(self.stage_channels) != 5:
            raise ValueError("encoder needs exactly 5 stage widths")


class EncoderStage(Module):
    """Stride-2 3x3 convolution followed by 3x3 refinement convolutions."""

    def __init__(self, in_ch, out_ch, blocks, rng, dtype=None):
        self.down = Conv2d(in_ch, out_ch, 3, rng, stride=2, pad=1, dtype=dtype)
        self.refine = [
            Conv2d(out_ch, out_ch, 3, rng, pad=1, dtype=dtype) for _ in range(blocks - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        y = relu(self.down(x))
        for conv in self.refine:
            y = relu(conv(y))
        return y


class Encoder(Module):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator, dtype=None):
        self.config = config
        chans = [config.in_channels, *config.stage_channels]
        self.stages = [
            EncoderStage(chans[i], chans[i + 1], config.blocks_per_stage, rng, dtype)
            for i in range(5)
        ]
        self.head = Conv2d(config.stage_channels[-1], 1, 1, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> list[Tensor]:
        """Return the five stage features X^{0,0}..X^{4,0}."""
        _, _, h, w = x.shape
        if h % 32 or w % 32:
            raise ShapeError(
                f"encoder input spatial size {h}x{w} must be divisible by 32; "
                "pad the image to a multiple of 32 first"
            )
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def class_logit(self, deepest: Tensor) -> Tensor:
        pooled = global_avg_pool(deepest)
        return reshape(self.head(pooled), (deepest.shape[0],))

    def classify(self, deepest: Tensor) -> Tensor:
        """Image-level forgery probability in (0,1)."""
        return sigmoid(self.class_logit(deepest))
