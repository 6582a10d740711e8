"""Positional signals: learnable query/scale tables and a fixed (t, h, w) sinusoid."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .autodiff import Tensor, ops, parameter
from .autodiff.nn import Module


@lru_cache(maxsize=64)
def _sinusoid_table(t: int, h: int, w: int, d: int) -> np.ndarray:
    if d < 6:
        raise ValueError(f"spatiotemporal embedding needs D >= 6, got {d}")
    per_axis = d // 3
    pairs = per_axis // 2
    freqs = 10000.0 ** (-2.0 * np.arange(pairs) / per_axis)
    grids = np.meshgrid(np.arange(t), np.arange(h), np.arange(w), indexing="ij")
    table = np.zeros((t * h * w, d), dtype=np.float64)
    for axis, pos in enumerate(grids):
        angles = pos.reshape(-1, 1).astype(np.float64) * freqs
        base = axis * per_axis
        table[:, base : base + 2 * pairs : 2] = np.sin(angles)
        table[:, base + 1 : base + 2 * pairs : 2] = np.cos(angles)
    table.setflags(write=False)
    return table


def sinusoidal_st_embedding(t: int, h: int, w: int, d: int) -> np.ndarray:
    """Fixed ``(T*H*W, D)`` table; rows follow the (t, h, w) row-major token order.

    Each axis gets ``D // 3`` channels laid out as interleaved (sin, cos) pairs at
    geometric frequencies with base 10000; leftover channels stay zero.
    """
    return _sinusoid_table(t, h, w, d).astype(np.float32)


class Embeddings(Module):
    def __init__(self, n_queries: int, n_scales: int, d: int, rng: np.random.Generator):
        self.d = d
        self.n_scales = n_scales
        self.query_pos = parameter(rng.normal(0.0, 0.02, (n_queries, d)).astype(np.float32))
        self.scale = [parameter(rng.normal(0.0, 0.02, d).astype(np.float32)) for _ in range(n_scales)]

    def token_pos(self, level: int, dims: tuple[int, int, int]) -> Tensor:
        """Scale embedding of ``level`` broadcast over its tokens plus the fixed sinusoid."""
        if not 0 <= level < self.n_scales:
            raise IndexError(f"scale index {level} outside 0..{self.n_scales - 1}")
        fixed = Tensor(_sinusoid_table(*dims, self.d))
        return ops.add_bias(fixed, self.scale[level])
