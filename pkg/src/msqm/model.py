"""End-to-end video mask model: features, decoder (ours or baseline), head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .autodiff import Tensor
from .autodiff.nn import Module
from .decoder import DecoderConfig, QueryMemoryDecoder
from .embeddings import Embeddings
from .features import BACKBONE_WIDTHS, FPN, Backbone, Encoder, FeaturePyramid, encode
from .head import MaskClip, SegHead, binarize

MODES = ("ours", "baseline")

# component ids for independent init streams, so both modes share everything but the decoder
_STREAMS = {"backbone": 0, "encoder": 1, "fpn": 2, "embed": 3, "dec": 4, "head": 5}


@dataclass
class ModelConfig:
    d: int = 48
    n_queries: int = 5
    heads: int = 4
    rounds: int = 2
    stage1_rounds: int = 1
    keep_ratio: float = 0.5
    drop_scales: Optional[tuple[int, ...]] = None
    encoder_depth: int = 2
    widths: tuple[int, ...] = BACKBONE_WIDTHS
    mode: str = "ours"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.d % self.heads:
            raise ValueError(f"D={self.d} not divisible by heads={self.heads}")
        if self.d % 4:
            raise ValueError(f"D={self.d} must be divisible by 4 for the mask head")

    @property
    def n_scales(self) -> int:
        return len(self.widths)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            n_queries=self.n_queries,
            n_scales=self.n_scales,
            rounds=self.rounds,
            stage1_rounds=self.stage1_rounds,
            heads=self.heads,
            keep_ratio=self.keep_ratio,
            drop_scales=self.drop_scales,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _rng(seed: int, component: str) -> np.random.Generator:
    return np.random.default_rng([seed, _STREAMS[component]])


class VideoMaskModel(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        d = cfg.d
        self.backbone = Backbone(d, _rng(cfg.seed, "backbone"), cfg.widths)
        self.encoder = Encoder(d, cfg.heads, cfg.encoder_depth, _rng(cfg.seed, "encoder"))
        self.fpn = FPN(d, cfg.n_scales, _rng(cfg.seed, "fpn"))
        self.embed = Embeddings(cfg.n_queries, cfg.n_scales, d, _rng(cfg.seed, "embed"))
        self.dec = QueryMemoryDecoder(d, cfg.decoder_config(), _rng(cfg.seed, "dec"), baseline=cfg.mode == "baseline")
        self.head = SegHead(d, _rng(cfg.seed, "head"))

    @property
    def mode(self) -> str:
        return self.cfg.mode

    def features(self, frames) -> FeaturePyramid:
        frames = frames if isinstance(frames, Tensor) else Tensor(frames)
        return encode(self.encoder, self.fpn, self.embed, self.backbone(frames))

    def forward(
        self,
        frames,
        step: int = 0,
        keep_ratio: Optional[float] = None,
        trace: Optional[list] = None,
    ) -> Tensor:
        """``T x 3 x H x W`` frames to ``T x H x W`` mask logits.

        ``step`` feeds the token-drop sub-seeds; pass a fresh value per
        training step so masks are resampled, and a fixed one for
        reproducible inference.
        """
        frames = frames if isinstance(frames, Tensor) else Tensor(frames)
        out_hw = frames.shape[2:]
        pyramid = self.features(frames)
        finest = self.dec.decode(pyramid, self.embed, step=step, keep_ratio=keep_ratio, trace=trace)
        return self.head(finest, pyramid[-1].dims, out_hw)

    def predict(self, frames, step: int = 0, keep_ratio: Optional[float] = None) -> MaskClip:
        return binarize(self.forward(frames, step=step, keep_ratio=keep_ratio).data)


def infer_mode(state: dict) -> str:
    """Decoder variant a checkpoint was saved from."""
    if any(k.startswith("dec.stage2.") for k in state):
        return "ours"
    if any(k.startswith("dec.baseline_proj.") for k in state):
        return "baseline"
    raise ValueError("checkpoint holds neither a query-memory nor a baseline decoder")
