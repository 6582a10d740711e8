"""Multi-head attention blocks and scale-specific random token drop."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import DimensionError, Tensor, ops
from .autodiff.nn import LayerNorm, Linear, Module


class MultiHeadAttention(Module):
    """Projections of scaled dot-product attention split over ``heads``."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if heads < 1 or d % heads:
            raise ValueError(f"model width {d} is not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.q_proj = Linear(d, d, rng)
        self.k_proj = Linear(d, d, rng)
        self.v_proj = Linear(d, d, rng)
        self.out_proj = Linear(d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        return ops.transpose(ops.reshape(x, (n, self.heads, self.d // self.heads)), (1, 0, 2))

    def forward(self, q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
        for name, x in (("Q", q), ("K", k), ("V", v)):
            if x.ndim != 2 or x.shape[1] != self.d:
                raise DimensionError(f"attention {name} has shape {x.shape}, expected (n, {self.d})")
        if k.shape[0] != v.shape[0]:
            raise DimensionError(f"attention K rows {k.shape[0]} != V rows {v.shape[0]}")
        n_q = q.shape[0]
        head_dim = self.d // self.heads
        qh = self._split(self.q_proj(q))
        kh = ops.transpose(self._split(self.k_proj(k)), (0, 2, 1))
        vh = self._split(self.v_proj(v))
        scores = ops.scale(ops.matmul(qh, kh), 1.0 / math.sqrt(head_dim))
        weights = ops.softmax(scores)
        mixed = ops.matmul(weights, vh)
        merged = ops.reshape(ops.transpose(mixed, (1, 0, 2)), (n_q, self.d))
        out = self.out_proj(merged)
        return (out, weights) if return_weights else out


class AttentionBlock(Module):
    """``LayerNorm(residual + MHA(Q, K, V))``, post-norm.

    ``residual`` defaults to ``Q``. Callers that add positional terms to the
    query pass the un-embedded features here so positions are not accumulated
    into the residual stream.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        self.mha = MultiHeadAttention(d, heads, rng)
        self.norm = LayerNorm(d)

    def forward(self, q: Tensor, k: Tensor, v: Tensor, residual: Optional[Tensor] = None) -> Tensor:
        out = self.mha(q, k, v)
        return self.norm(ops.add(q if residual is None else residual, out))


class FeedForward(Module):
    def __init__(self, d: int, rng: np.random.Generator, expansion: int = 4):
        self.fc1 = Linear(d, expansion * d, rng)
        self.fc2 = Linear(expansion * d, d, rng)
        self.norm = LayerNorm(d)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(ops.add(x, self.fc2(ops.gelu(self.fc1(x)))))


@dataclass(frozen=True)
class DropMask:
    kept_indices: np.ndarray
    keep_ratio: float
    seed: int
    n_tokens: int


def kept_count(n_tokens: int, keep_ratio: float) -> int:
    """``max(1, round(r * n))`` with halves rounded up."""
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError(f"token keep ratio must lie in (0, 1], got {keep_ratio}")
    return max(1, min(n_tokens, int(math.floor(keep_ratio * n_tokens + 0.5))))


def drop_seed(seed: int, layer: int, scale: int, step: int) -> np.random.SeedSequence:
    """Sub-seed for one drop mask; hashes (seed, layer, scale, step) via SeedSequence."""
    return np.random.SeedSequence([seed, layer, scale, step])


def drop_rng(seed: int, layer: int, scale: int, step: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(drop_seed(seed, layer, scale, step)))


def sample_drop_mask(n_tokens: int, keep_ratio: float, rng: np.random.Generator, seed: int = -1) -> DropMask:
    k = kept_count(n_tokens, keep_ratio)
    if k == n_tokens:
        kept = np.arange(n_tokens)
    else:
        kept = np.sort(rng.choice(n_tokens, size=k, replace=False))
    return DropMask(kept, keep_ratio, seed, n_tokens)


def self_attend_with_drop(
    block: AttentionBlock,
    x: Tensor,
    keep_ratio: float,
    rng: Optional[np.random.Generator],
    return_mask: bool = False,
):
    """Self-attention over a random subset of rows; the other rows pass through untouched.

    With every row kept this is exactly ``block(x, x, x)``. Otherwise only the
    kept rows attend to each other and are written back in place, so the token
    count and order are preserved for the following cross-attention.
    """
    n = x.shape[0]
    if kept_count(n, keep_ratio) == n:
        mask = DropMask(np.arange(n), keep_ratio, -1, n)
        out = block(x, x, x)
    else:
        if rng is None:
            raise ValueError("token drop below ratio 1.0 needs an explicit rng")
        mask = sample_drop_mask(n, keep_ratio, rng)
        kept = ops.take_rows(x, mask.kept_indices)
        out = ops.replace_rows(x, mask.kept_indices, block(kept, kept, kept))
    return (out, mask) if return_mask else out
