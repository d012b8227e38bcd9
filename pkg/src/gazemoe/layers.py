"""Parameterized layers: linear, conv, residual basic block, small MLP.

Weights use Kaiming-uniform initialization (bound sqrt(6/fan_in)) drawn
from a caller-supplied generator; biases start at zero. Blocks follow the
pre-activation-free ResNet basic-block shape without batch norm.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor


class Module:
    """Base class providing recursive, insertion-ordered parameter discovery."""

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for attr, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out.append((attr, value))
            elif isinstance(value, Module):
                out.extend((f"{attr}.{n}", p) for n, p in value.named_parameters())
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(
                            (f"{attr}.{i}.{n}", p) for n, p in item.named_parameters()
                        )
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                    dtype=np.float64) -> Tensor:
    bound = math.sqrt(6.0 / fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


class Linear(Module):
    """y = x Wᵀ + b with W: [out, in], b: [out]."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.in_features = in_features
        self.out_features = out_features
        self.w = kaiming_uniform(rng, (out_features, in_features), in_features, dtype)
        self.b = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(
                f"linear expects [B, {self.in_features}], got {x.shape}"
            )
        return x @ self.w.T + self.b


class Conv2d(Module):
    """3x3/1x1-style conv with bias, thin wrapper over the conv2d op."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, pad: int = 0,
                 dtype=np.float64):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.pad = pad
        fan_in = in_channels * kernel_size * kernel_size
        self.w = kaiming_uniform(
            rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in, dtype
        )
        self.b = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        out = T.conv2d(x, self.w, stride=self.stride, pad=self.pad)
        return out + self.b.reshape(1, self.out_channels, 1, 1)


class ResidualBasicBlock(Module):
    """y = relu(conv2(relu(conv1(x))) + skip(x)).

    Both convs are 3x3; conv1 carries the stride. The skip path is the
    identity when shapes line up, otherwise a strided 1x1 projection.
    """

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 stride: int = 1, dtype=np.float64):
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, stride=stride, pad=1,
                            dtype=dtype)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, stride=1, pad=1,
                            dtype=dtype)
        self.proj = None
        if stride != 1 or in_channels != out_channels:
            self.proj = Conv2d(in_channels, out_channels, 1, rng, stride=stride, pad=0,
                               dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        branch = self.conv2(T.relu(self.conv1(x)))
        skip = x if self.proj is None else self.proj(x)
        if branch.shape != skip.shape:
            raise ContractError(
                f"residual branch {branch.shape} does not match skip {skip.shape}"
            )
        return T.relu(branch + skip)


class Mlp(Module):
    """Linear layers with relu between, no activation after the last."""

    def __init__(self, widths: list[int], rng: np.random.Generator, dtype=np.float64):
        if len(widths) < 2:
            raise ContractError(f"mlp needs at least [in, out] widths, got {widths}")
        self.layers = [
            Linear(widths[i], widths[i + 1], rng, dtype) for i in range(len(widths) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = T.relu(x)
        return x


def router_mlp(feature_width: int, num_experts: int, rng: np.random.Generator,
               dtype=np.float64) -> Mlp:
    """Two-layer scoring MLP: d -> max(8, d//2) -> N."""
    hidden = max(8, feature_width // 2)
    return Mlp([feature_width, hidden, num_experts], rng, dtype)
