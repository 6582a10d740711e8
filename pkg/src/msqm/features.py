"""Clip to flattened multiscale features: conv pyramid, reduction, encoder, FPN."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .attention import AttentionBlock, FeedForward
from .autodiff import Tensor, ops
from .autodiff.nn import Conv3d, GroupNorm, LayerNorm, Linear, Module
from .embeddings import Embeddings

BACKBONE_WIDTHS = (32, 64, 128, 256)
SPATIAL_STRIDES = (4, 2, 2, 2)


@dataclass
class ClipSample:
    frames: np.ndarray  # T x 3 x H x W in [0, 1]
    masks: np.ndarray  # T x H x W in {0, 1}
    clip_id: str

    def __post_init__(self):
        t, c, h, w = self.frames.shape
        if c != 3:
            raise ValueError(f"clip {self.clip_id}: frames must be T x 3 x H x W, got {self.frames.shape}")
        if t < 2:
            raise ValueError(f"clip {self.clip_id}: need at least 2 frames, got {t}")
        if self.masks.shape != (t, h, w):
            raise ValueError(f"clip {self.clip_id}: masks {self.masks.shape} do not match frames {self.frames.shape}")
        if not np.isin(self.masks, (0, 1)).all():
            raise ValueError(f"clip {self.clip_id}: mask values must be 0 or 1")

    @property
    def dims(self) -> tuple[int, int, int]:
        t, _, h, w = self.frames.shape
        return t, h, w


class Level(NamedTuple):
    features: Tensor  # (T*H*W) x D
    dims: tuple[int, int, int]  # (T, H, W)


class FeaturePyramid(list):
    """Levels ordered coarsest (index 0) to finest."""

    def shapes(self) -> list[tuple[int, int]]:
        return [lvl.features.shape for lvl in self]


def unflatten(x: Tensor, dims) -> Tensor:
    """(T*H*W) x D tokens to a T x H x W x D field."""
    return ops.reshape(x, tuple(dims) + (x.shape[-1],))


def flatten(x: Tensor) -> Tensor:
    t, h, w, d = x.shape
    return ops.reshape(x, (t * h * w, d))


def resample_tokens(x: Tensor, dims, new_hw) -> Tensor:
    """Bilinearly resize flattened tokens of one scale to another spatial size."""
    return flatten(ops.bilinear_interp(unflatten(x, dims), *new_hw))


class ConvBlock(Module):
    def __init__(self, c_in, c_out, kernel, stride, padding, rng):
        self.conv = Conv3d(c_in, c_out, kernel, rng, stride=stride, padding=padding)
        self.norm = GroupNorm(c_out, min(8, c_out))

    def forward(self, x: Tensor) -> Tensor:
        return ops.gelu(self.norm(self.conv(x)))


class Backbone(Module):
    """Strided 3-D conv pyramid standing in for a video transformer backbone.

    Stage strides are 4, 2, 2, 2 in space and 1 in time. Each stage output is
    projected to ``d`` channels (1x1x1) and flattened in (t, h, w) order.
    """

    def __init__(self, d: int, rng: np.random.Generator, widths=BACKBONE_WIDTHS):
        self.widths = tuple(widths)
        self.stages = [ConvBlock(3, widths[0], (3, 4, 4), (1, 4, 4), (1, 0, 0), rng)]
        for c_in, c_out in zip(widths[:-1], widths[1:]):
            self.stages.append(ConvBlock(c_in, c_out, 3, (1, 2, 2), 1, rng))
        self.reduce = [Linear(c, d, rng) for c in reversed(widths)]

    @staticmethod
    def check_input(h: int, w: int) -> None:
        if h % 32 or w % 32:
            raise ValueError(f"frame size {h}x{w} must be divisible by 32 in both dimensions")

    def extract_pyramid(self, frames: Tensor) -> list[Tensor]:
        """``T x 3 x H x W`` frames to per-stage ``C x T x H_l x W_l`` maps, coarsest first."""
        _, _, h, w = frames.shape
        self.check_input(h, w)
        x = ops.transpose(ops.scale(ops.add(frames, Tensor(np.full(frames.shape, -0.5))), 2.0), (1, 0, 2, 3))
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps[::-1]

    def reduce_and_flatten(self, maps: list[Tensor]) -> FeaturePyramid:
        pyramid = FeaturePyramid()
        for proj, x in zip(self.reduce, maps):
            c, t, h, w = x.shape
            tokens = ops.reshape(ops.transpose(x, (1, 2, 3, 0)), (t * h * w, c))
            pyramid.append(Level(proj(tokens), (t, h, w)))
        return pyramid

    def forward(self, frames: Tensor) -> FeaturePyramid:
        return self.reduce_and_flatten(self.extract_pyramid(frames))


class EncoderLayer(Module):
    def __init__(self, d, heads, rng):
        self.attn = AttentionBlock(d, heads, rng)
        self.ffn = FeedForward(d, rng)

    def forward(self, x: Tensor, pos: Tensor) -> Tensor:
        qk = ops.add(x, pos)
        return self.ffn(self.attn(qk, qk, x, residual=x))


class Encoder(Module):
    """Self-attention stack over the coarsest scale."""

    def __init__(self, d, heads, depth, rng):
        self.layers = [EncoderLayer(d, heads, rng) for _ in range(depth)]

    def forward(self, x: Tensor, pos: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x, pos)
        return x


class FPN(Module):
    """Top-down fusion: lateral projection plus upsampled coarser sum, 3x3 conv, residual norm."""

    def __init__(self, d, n_levels, rng):
        self.lateral = [Linear(d, d, rng) for _ in range(n_levels)]
        self.smooth = [Conv3d(d, d, (1, 3, 3), rng, padding=(0, 1, 1)) for _ in range(n_levels)]
        self.norm = [LayerNorm(d) for _ in range(n_levels)]

    def forward(self, pyramid: FeaturePyramid) -> FeaturePyramid:
        out = FeaturePyramid()
        coarser = None
        for i, (x, dims) in enumerate(pyramid):
            fused = self.lateral[i](x)
            if coarser is not None:
                fused = ops.add(fused, resample_tokens(coarser, pyramid[i - 1].dims, dims[1:]))
            coarser = fused
            field = ops.transpose(unflatten(fused, dims), (3, 0, 1, 2))
            smoothed = flatten(ops.transpose(self.smooth[i](field), (1, 2, 3, 0)))
            out.append(Level(self.norm[i](ops.add(x, smoothed)), dims))
        return out


def encode(encoder: Encoder, fpn: FPN, embed: Embeddings, pyramid: FeaturePyramid) -> FeaturePyramid:
    """Encoder on the coarsest level, then FPN across all levels; shapes are preserved."""
    coarse, dims = pyramid[0]
    encoded = encoder(coarse, embed.token_pos(0, dims))
    return fpn(FeaturePyramid([Level(encoded, dims)] + list(pyramid[1:])))
