"""Gated Context Attention block and the dense decoder grid.

Each decoder node X^{i,j} concatenates its j same-level predecessors,
optionally applies a GCA block (global context pooling + attention gating)
driven by the upsampled feature from the level below, and decodes with two
3x3 convolutions. Deep supervision attaches sigmoid heads to the top-row
nodes X^{0,1..4}; the localization map is their mean, upsampled 2x back to
input resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .autodiff import (
    Tensor,
    broadcast_add,
    concat_channels,
    layer_norm,
    mul,
    relu,
    sigmoid,
    softmax_positions,
    tsum,
    upsample_bilinear2x,
)
from .nn import Conv2d, Module

PLACEMENTS = ("all_decoder", "end_nodes", "intermediates", "top_nodes", "none")
TRANSFORM_VARIANTS = ("plain_1x1", "bottleneck_ln_relu")


@dataclass
class GcaConfig:
    ratio: int = 4
    transform_variant: str = "bottleneck_ln_relu"
    placement: str = "all_decoder"
    gate_width: int | None = None  # default max(C_l/2, 8)
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        if self.ratio < 1:
            raise ValueError("bottleneck ratio must be >= 1")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.transform_variant not in TRANSFORM_VARIANTS:
            raise ValueError(f"unknown transform variant {self.transform_variant!r}")


def grid_nodes() -> list[tuple[int, int]]:
    """All (level, index) decoder nodes: X^{i,j} with j >= 1 and i+j <= 4."""
    return [(i, j) for j in range(1, 5) for i in range(0, 5 - j)]


def placement_nodes(placement: str) -> set[tuple[int, int]]:
    """Which grid nodes carry a GCA block under the given policy."""
    all_nodes = set(grid_nodes())
    end = {(i, 4 - i) for i in range(4)}
    top = {(0, j) for j in range(1, 5)}
    if placement == "all_decoder":
        return all_nodes
    if placement == "end_nodes":
        return end
    if placement == "top_nodes":
        return top
    if placement == "intermediates":
        return all_nodes - end - top
    return set()


class GcaBlock(Module):
    """Global context pooling followed by additive attention gating."""

    def __init__(self, c_l: int, c_g: int, config: GcaConfig, rng, dtype=None):
        self.config = config
        self.c_l = c_l
        c_int = config.gate_width or max(c_l // 2, 8)
        # softmax over positions is shift-invariant, so a bias would be inert
        self.attn = Conv2d(c_l, 1, 1, rng, bias=False, dtype=dtype)
        if config.transform_variant == "plain_1x1":
            self.transform_convs = [Conv2d(c_l, c_l, 1, rng, dtype=dtype)]
        else:
            c_b = math.ceil(c_l / config.ratio)
            self.transform_convs = [
                Conv2d(c_l, c_b, 1, rng, dtype=dtype),
                Conv2d(c_b, c_l, 1, rng, dtype=dtype),
            ]
        self.gate_local = Conv2d(c_l, c_int, 1, rng, dtype=dtype)
        self.gate_signal = Conv2d(c_g, c_int, 1, rng, dtype=dtype)
        self.gate_out = Conv2d(c_int, 1, 1, rng, dtype=dtype)

    def context_pool(self, f_l: Tensor) -> Tensor:
        """Softmax-weighted spatial aggregation -> per-channel context (C,1,1)."""
        weights = softmax_positions(self.attn(f_l))
        return tsum(mul(weights, f_l), axis=(2, 3), keepdims=True)

    def context_transform(self, context: Tensor) -> Tensor:
        if self.config.transform_variant == "plain_1x1":
            return self.transform_convs[0](context)
        down, up = self.transform_convs
        z = down(context)
        z = relu(layer_norm(z, axis=1, eps=self.config.layer_norm_eps))
        return up(z)

    def context_fuse(self, f_l: Tensor, transformed: Tensor) -> Tensor:
        return broadcast_add(f_l, transformed)

    def attention_gate(self, fused: Tensor, f_g: Tensor) -> Tensor:
        """Per-position gate map in (0,1), shape (N,1,H,W)."""
        z = relu(self.gate_local(fused) + self.gate_signal(f_g))
        return sigmoid(self.gate_out(z))

    def __call__(self, f_l: Tensor, f_g: Tensor) -> Tensor:
        fused = self.context_fuse(f_l, self.context_transform(self.context_pool(f_l)))
        gate = self.attention_gate(fused, f_g)
        return mul(gate, f_l)


class DecoderNode(Module):
    def __init__(self, level, index, width, below_width, use_gca, config, rng, dtype=None):
        self.level = level
        self.index = index
        c_l = index * width
        self.gca = GcaBlock(c_l, below_width, config, rng, dtype) if use_gca else None
        self.decode1 = Conv2d(c_l, width, 3, rng, pad=1, dtype=dtype)
        self.decode2 = Conv2d(width, width, 3, rng, pad=1, dtype=dtype)

    def __call__(self, same_level: list[Tensor], below: Tensor) -> Tensor:
        if len(same_level) != self.index:
            raise ValueError(
                f"node X^{{{self.level},{self.index}}} expects {self.index} "
                f"same-level inputs, got {len(same_level)}"
            )
        f_l = concat_channels(same_level)
        f_g = upsample_bilinear2x(below)
        theta = self.gca(f_l, f_g) if self.gca is not None else f_l
        return relu(self.decode2(relu(self.decode1(theta))))


class DecoderGrid(Module):
    """UNet++-style grid of 10 decoder nodes with deep supervision heads."""

    def __init__(self, stage_channels, gca_config: GcaConfig, rng,
                 deep_supervision=True, dtype=None):
        self.gca_config = gca_config
        self.deep_supervision = deep_supervision
        active = placement_nodes(gca_config.placement)
        self.nodes = {
            f"{i}_{j}": DecoderNode(
                i, j, stage_channels[i], stage_channels[i + 1],
                (i, j) in active, gca_config, rng, dtype,
            )
            for (i, j) in grid_nodes()
        }
        self.heads = {
            str(j): Conv2d(stage_channels[0], 1, 1, rng, dtype=dtype)
            for j in range(1, 5)
        }

    def node_outputs(self, encoder_feats: list[Tensor]) -> dict:
        """Evaluate the grid in order of increasing j; keys are (i,j)."""
        y = {(i, 0): f for i, f in enumerate(encoder_feats)}
        for (i, j) in grid_nodes():
            same = [y[(i, k)] for k in range(j)]
            y[(i, j)] = self.nodes[f"{i}_{j}"](same, y[(i + 1, j - 1)])
        return y

    def __call__(self, encoder_feats: list[Tensor]) -> Tensor:
        """Localization probability map (N,1,H,W) at input resolution."""
        y = self.node_outputs(encoder_feats)
        if self.deep_supervision:
            heads = [sigmoid(self.heads[str(j)](y[(0, j)])) for j in range(1, 5)]
            prob = heads[0]
            for h in heads[1:]:
                prob = prob + h
            prob = prob * (1.0 / len(heads))
        else:
            prob = sigmoid(self.heads["4"](y[(0, 4)]))
        return upsample_bilinear2x(prob)
