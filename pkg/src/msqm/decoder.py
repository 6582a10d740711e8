"""Multi-stage multiscale query-memory decoder and the multiscale-query baseline.

Stage 1 compresses each scale, coarse to fine, into ``N`` learned queries.
Stage 2 flips the attention direction: every dense token of a scale queries a
shared ``N x D`` memory initialised from the Stage-1 output, so no scale loses
resolution. Each Stage-2 output is upsampled and added into the next finer
scale, and the whole coarse-to-fine sweep is repeated ``rounds`` times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attention import AttentionBlock, FeedForward, drop_rng, self_attend_with_drop
from .autodiff import Tensor, ops, parameter
from .autodiff.nn import Linear, Module
from .embeddings import Embeddings
from .features import FeaturePyramid, Level, resample_tokens


@dataclass
class DecoderConfig:
    """Decoder hyper-parameters.

    ``rounds`` counts full coarse-to-fine Stage-2 sweeps (each sweep is ``L``
    decoder layers). The reference setting of nine decoder layers over four
    scales corresponds to roughly two sweeps; desk runs default to 2.
    """

    n_queries: int = 5
    n_scales: int = 4
    rounds: int = 2
    stage1_rounds: int = 1
    heads: int = 4
    keep_ratio: float = 0.5
    drop_scales: Optional[tuple[int, ...]] = None  # 0-based, 0 = coarsest; None = finest two
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ValueError(f"keep_ratio must lie in (0, 1], got {self.keep_ratio}")
        if min(self.n_queries, self.n_scales, self.rounds, self.stage1_rounds, self.heads) < 1:
            raise ValueError("decoder sizes must be positive")
        if self.drop_scales is None:
            self.drop_scales = tuple(range(max(0, self.n_scales - 2), self.n_scales))
        self.drop_scales = tuple(sorted(set(self.drop_scales)))
        if any(not 0 <= s < self.n_scales for s in self.drop_scales):
            raise ValueError(f"drop_scales {self.drop_scales} outside 0..{self.n_scales - 1}")


class DecoderLayer(Module):
    """Self-attention, then cross-attention, then FFN."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        self.self_attn = AttentionBlock(d, heads, rng)
        self.cross_attn = AttentionBlock(d, heads, rng)
        self.ffn = FeedForward(d, rng)


def mix(next_level: Tensor, out: Tensor, out_dims, next_dims) -> Tensor:
    """Add a decoded scale, bilinearly resized, into the next finer scale."""
    return ops.add(next_level, resample_tokens(out, out_dims, next_dims[1:]))


class QueryMemoryDecoder(Module):
    """Holds ``query_table`` and the layer stacks; ``baseline=True`` builds the query-only variant."""

    def __init__(self, d: int, cfg: DecoderConfig, rng: np.random.Generator, baseline: bool = False):
        self.cfg = cfg
        self.d = d
        self.baseline = baseline
        self.query_table = parameter(rng.normal(0.0, 1.0, (cfg.n_queries, d)).astype(np.float32))
        s1 = cfg.rounds if baseline else cfg.stage1_rounds
        self.stage1 = [DecoderLayer(d, cfg.heads, rng) for _ in range(s1 * cfg.n_scales)]
        if baseline:
            self.baseline_proj = Linear(d + 1, d, rng)
        else:
            self.stage2 = [DecoderLayer(d, cfg.heads, rng) for _ in range(cfg.rounds * cfg.n_scales)]

    # ------------------------------------------------------------------ stage 1

    def stage1_query_decode(self, pyramid: FeaturePyramid, embed: Embeddings, sweeps: int) -> Tensor:
        q = self.query_table
        n_scales = len(pyramid)
        for s in range(sweeps):
            for lvl, (feats, dims) in enumerate(pyramid):
                layer = self.stage1[s * n_scales + lvl]
                q = layer.self_attn(q, q, q)
                keys = ops.add(feats, embed.token_pos(lvl, dims))
                q = layer.cross_attn(ops.add(q, embed.query_pos), keys, feats, residual=q)
                q = layer.ffn(q)
        return q

    # ------------------------------------------------------------------ stage 2

    def stage2_memory_decode(
        self,
        pyramid: FeaturePyramid,
        memory: Tensor,
        embed: Embeddings,
        round_index: int = 0,
        step: int = 0,
        keep_ratio: Optional[float] = None,
        trace: Optional[list] = None,
    ) -> tuple[Tensor, FeaturePyramid]:
        """One coarse-to-fine sweep; returns the finest output and the per-scale outputs."""
        cfg = self.cfg
        r = cfg.keep_ratio if keep_ratio is None else keep_ratio
        feats = [lvl.features for lvl in pyramid]
        dims = [lvl.dims for lvl in pyramid]
        mem_keys = ops.add(memory, embed.query_pos)
        outputs = FeaturePyramid()
        n_scales = len(pyramid)
        for lvl in range(n_scales):
            layer = self.stage2[round_index * n_scales + lvl]
            x = feats[lvl]
            if lvl in cfg.drop_scales:
                rng = drop_rng(cfg.seed, round_index, lvl, step)
                x, mask = self_attend_with_drop(layer.self_attn, x, r, rng, return_mask=True)
                if trace is not None:
                    trace.append((round_index, lvl, mask))
            else:
                x = layer.self_attn(x, x, x)
            queries = ops.add(x, embed.token_pos(lvl, dims[lvl]))
            out = layer.cross_attn(queries, mem_keys, memory, residual=x)
            out = layer.ffn(out)
            outputs.append(Level(out, dims[lvl]))
            if lvl + 1 < n_scales:
                feats[lvl + 1] = mix(feats[lvl + 1], out, dims[lvl], dims[lvl + 1])
        return outputs[-1].features, outputs

    # ------------------------------------------------------------------ full passes

    def decode(
        self,
        pyramid: FeaturePyramid,
        embed: Embeddings,
        step: int = 0,
        keep_ratio: Optional[float] = None,
        trace: Optional[list] = None,
    ) -> Tensor:
        if self.baseline:
            return self.decode_baseline(pyramid, embed)
        memory = self.stage1_query_decode(pyramid, embed, self.cfg.stage1_rounds)
        out = None
        for rd in range(self.cfg.rounds):
            out, pyramid = self.stage2_memory_decode(
                pyramid, memory, embed, rd, step, keep_ratio=keep_ratio, trace=trace
            )
        return out

    def decode_baseline(self, pyramid: FeaturePyramid, embed: Embeddings) -> Tensor:
        queries = self.stage1_query_decode(pyramid, embed, self.cfg.rounds)
        finest = pyramid[-1].features
        return self.baseline_proj(ops.concat_last_axis(finest, query_affinity(finest, queries)))


def query_affinity(tokens: Tensor, queries: Tensor) -> Tensor:
    """Per token, the best scaled dot product with any query: ``max_i <x, q_i> / sqrt(D)``."""
    d = tokens.shape[-1]
    scores = ops.scale(ops.matmul(tokens, ops.transpose(queries)), 1.0 / math.sqrt(d))
    return ops.max_last_axis(scores)
