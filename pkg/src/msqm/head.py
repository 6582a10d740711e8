"""3-D convolutional mask head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.nn import Conv3d, Module
from .features import unflatten


@dataclass
class MaskClip:
    logits: np.ndarray  # T x H x W
    probs: np.ndarray
    binary: np.ndarray  # uint8, 1 where probs >= 0.5


def binarize(logits: np.ndarray) -> MaskClip:
    probs = 0.5 * (1.0 + np.tanh(0.5 * logits.astype(np.float64)))
    # ties go to foreground
    return MaskClip(logits, probs, (probs >= 0.5).astype(np.uint8))


class SegHead(Module):
    """Three 3x3x3 convs (D -> D/2 -> D/4 -> 1) with GELU, then per-frame bilinear upsampling."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.conv1 = Conv3d(d, d // 2, 3, rng, padding=1)
        self.conv2 = Conv3d(d // 2, d // 4, 3, rng, padding=1)
        self.conv3 = Conv3d(d // 4, 1, 3, rng, padding=1)

    def forward(self, tokens: Tensor, dims: Optional[tuple], out_hw: tuple[int, int]) -> Tensor:
        """Flattened finest-scale tokens to ``T x H x W`` logits at the clip resolution."""
        if dims is None:
            raise ValueError("segmentation head needs the (T, H, W) layout of its input tokens")
        t, h, w = dims
        x = ops.transpose(unflatten(tokens, dims), (3, 0, 1, 2))
        x = ops.gelu(self.conv1(x))
        x = ops.gelu(self.conv2(x))
        x = self.conv3(x)
        up = ops.bilinear_interp(ops.reshape(x, (t, h, w, 1)), *out_hw)
        return ops.reshape(up, (t,) + tuple(out_hw))

    def segment(self, tokens: Tensor, dims, out_hw) -> MaskClip:
        return binarize(self.forward(tokens, dims, out_hw).data)
