"""Tiny layer abstraction on top of the autodiff tensors.

A Module owns parameters (Tensors with requires_grad) and sub-modules;
``named_parameters`` walks the attribute tree in insertion order so the
parameter ordering is deterministic for a given construction sequence,
which checkpointing relies on.
"""

from __future__ import annotations

import numpy as np

from .autodiff import DEFAULT_DTYPE, Tensor, conv2d, relu


class Module:
    def named_parameters(self, prefix: str = ""):
        """Yield (name, tensor) for every trainable parameter, depth-first."""
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{key}.")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_arrays(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(
                f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, p in params.items():
            arr = state[name]
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"parameter {name}: checkpoint shape {arr.shape} != model {p.data.shape}"
                )
            p.data[...] = arr.astype(p.dtype, copy=False)


def he_init(rng: np.random.Generator, shape, fan_in: int, dtype=None) -> np.ndarray:
    scale = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * scale).astype(dtype or DEFAULT_DTYPE)


class Conv2d(Module):
    """Learnable 2-D convolution (cross-correlation), NCHW."""

    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, pad=0, bias=True, dtype=None):
        self.stride = stride
        self.pad = pad
        fan_in = in_ch * kernel * kernel
        self.weight = Tensor(
            he_init(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype),
            requires_grad=True,
        )
        self.bias = (
            Tensor(np.zeros(out_ch, dtype=dtype or DEFAULT_DTYPE), requires_grad=True)
            if bias
            else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class ConvStack(Module):
    """Two same-size 3x3 convolutions with a ReLU in between."""

    def __init__(self, in_ch, mid_ch, out_ch, rng, dtype=None):
        self.conv1 = Conv2d(in_ch, mid_ch, 3, rng, pad=1, dtype=dtype)
        self.conv2 = Conv2d(mid_ch, out_ch, 3, rng, pad=1, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(relu(self.conv1(x)))
