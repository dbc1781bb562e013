"""Bottom-up pathway: depthwise-separable convolutions and the
three-branch inception block, stacked into a five-stage hierarchy.

Stage 1 is a stride-2 stem (each branch downsamples once); stages 2-5 are
preceded by a 2x2 max pool, so stage i emits features at 1/2^i of the input
resolution and the default channel progression is 3 -> 48 -> 96 -> 192 ->
384 -> 576.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .module import Module, param
from .tensor import Tensor


def branch_split(out_channels: int) -> tuple[int, int, int]:
    """Split block output channels across the three branches (3:3:2 of 8)."""
    b1 = round(3 * out_channels / 8)
    b3 = out_channels - 2 * b1
    if min(b1, b3) < 1:
        raise ValueError(f"out_channels {out_channels} too small to split")
    return b1, b1, b3


@dataclass(frozen=True)
class StageSpec:
    in_channels: int
    out_channels: int
    pool_before: bool
    stride: int

    @property
    def branch_widths(self) -> tuple[int, int, int]:
        return branch_split(self.out_channels)


def stage_specs(stage_channels: tuple[int, ...], in_channels: int = 3) -> list[StageSpec]:
    specs = []
    prev = in_channels
    for i, out in enumerate(stage_channels):
        first = i == 0
        specs.append(StageSpec(prev, out, pool_before=not first, stride=2 if first else 1))
        prev = out
    return specs


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.gamma = param(np.ones(channels))
        self.beta = param(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        return T.batchnorm(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.training
        )


class DwSepConv(Module):
    """Depthwise k x k then pointwise 1x1; bias only on the pointwise stage."""

    def __init__(self, in_c: int, out_c: int, k: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.in_c, self.out_c, self.k, self.stride = in_c, out_c, k, stride
        self.dw = param(rng.normal(0.0, math.sqrt(2.0 / (k * k)), size=(in_c, k, k)))
        self.pw = param(rng.normal(0.0, math.sqrt(2.0 / in_c), size=(out_c, in_c)))
        self.bias = param(np.zeros(out_c))

    def forward(self, x: Tensor) -> Tensor:
        y = T.conv2d(x, self.dw, mode="depthwise", stride=self.stride, padding="same")
        y = T.conv2d(y, self.pw, mode="pointwise")
        return y + T.reshape(self.bias, (1, self.out_c, 1, 1))


class DwSepBnSilu(Module):
    def __init__(self, in_c: int, out_c: int, k: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.conv = DwSepConv(in_c, out_c, k, stride, rng)
        self.bn = BatchNorm2d(out_c)

    def forward(self, x: Tensor) -> Tensor:
        return T.silu(self.bn(self.conv(x)))


class PoolProj(Module):
    """3x3 max pool followed by a 1x1 projection (context branch)."""

    def __init__(self, in_c: int, out_c: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.out_c, self.stride = out_c, stride
        self.pw = param(rng.normal(0.0, math.sqrt(2.0 / in_c), size=(out_c, in_c)))
        self.bias = param(np.zeros(out_c))
        self.bn = BatchNorm2d(out_c)

    def forward(self, x: Tensor) -> Tensor:
        y = T.maxpool2d(x, window=3, stride=self.stride, padding="same")
        y = T.conv2d(y, self.pw, mode="pointwise")
        y = y + T.reshape(self.bias, (1, self.out_c, 1, 1))
        return T.silu(self.bn(y))


class InceptionSepConv(Module):
    """Three parallel branches concatenated along channels.

    Branch 1: two 3x3 depthwise-separable convolutions (5x5 receptive field);
    branch 2: two 5x5 (9x9 receptive field); branch 3: max pool + 1x1. With
    stride 2 each branch's first op downsamples (used by the stem).
    """

    def __init__(self, in_c: int, out_c: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.in_c, self.out_c = in_c, out_c
        b1, b2, b3 = branch_split(out_c)
        self.b1a = DwSepBnSilu(in_c, b1, 3, stride, rng)
        self.b1b = DwSepBnSilu(b1, b1, 3, 1, rng)
        self.b2a = DwSepBnSilu(in_c, b2, 5, stride, rng)
        self.b2b = DwSepBnSilu(b2, b2, 5, 1, rng)
        self.b3 = PoolProj(in_c, b3, stride, rng)

    def forward(self, x: Tensor) -> Tensor:
        y1 = self.b1b(self.b1a(x))
        y2 = self.b2b(self.b2a(x))
        y3 = self.b3(x)
        return T.concat([y1, y2, y3], axis=1)


class BottomUp(Module):
    """Five-stage encoder producing (c1..c5) at 1/2 .. 1/32 resolution."""

    def __init__(self, stage_channels: tuple[int, ...], rng: np.random.Generator):
        super().__init__()
        if len(stage_channels) != 5:
            raise ValueError("expected 5 stage channel counts")
        self.specs = stage_specs(tuple(stage_channels))
        for i, spec in enumerate(self.specs):
            setattr(
                self,
                f"stage{i + 1}",
                InceptionSepConv(spec.in_channels, spec.out_channels, spec.stride, rng),
            )

    def forward(self, x: Tensor) -> tuple[Tensor, ...]:
        if x.ndim != 4 or x.shape[1] != self.specs[0].in_channels:
            raise T.ShapeError(f"expected [B,{self.specs[0].in_channels},H,W], got {x.shape}")
        h, w = x.shape[2], x.shape[3]
        if h % 32 or w % 32:
            raise ValueError(f"input resolution {h}x{w} must be divisible by 32")
        feats = []
        cur = x
        for i, spec in enumerate(self.specs):
            if spec.pool_before:
                cur = T.maxpool2d(cur, window=2, stride=2)
            cur = getattr(self, f"stage{i + 1}")(cur)
            feats.append(cur)
        return tuple(feats)
