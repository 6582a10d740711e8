"""Loss, optimiser, training loop and checkpoint evaluation."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor, load_checkpoint, no_grad, ops, save_checkpoint
from .config import TrainConfig
from .data import load_dataset, synthetic_split, write_mask_frames
from .features import ClipSample
from .metrics import j_measure, miou
from .model import VideoMaskModel, infer_mode

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.msqm"
METRICS_HEADER = ("epoch", "loss", "val_miou")


class TrainingError(RuntimeError):
    pass


def mask_loss(logits: Tensor, gt) -> Tensor:
    """Mean per-pixel BCE on logits plus soft Dice (weight 1)."""
    target = Tensor(np.asarray(gt, dtype=logits.dtype))
    return ops.add(ops.bce_with_logits(logits, target), ops.dice_loss(ops.sigmoid(logits), target))


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def load_splits(cfg: TrainConfig) -> tuple[list[ClipSample], list[ClipSample]]:
    """Train / validation clips from ``data_root`` (``train/`` and ``val/``) or synthesised."""
    if cfg.data_root:
        root = Path(cfg.data_root)
        return list(load_dataset(root / "train")), list(load_dataset(root / "val"))
    synth = cfg.synth_config()
    val_seed = int(np.random.SeedSequence([cfg.data_seed, 1]).generate_state(1)[0])
    train = synthetic_split(cfg.train_clips, cfg.data_seed, synth, cfg.max_objects, prefix="train")
    val = synthetic_split(cfg.val_clips, val_seed, synth, cfg.max_objects, prefix="val")
    return train, val


def predict_clips(
    model: VideoMaskModel, clips: Sequence[ClipSample], keep_ratio: Optional[float] = None
) -> list[np.ndarray]:
    """Binary masks per clip; clip ``i`` always uses drop step ``i`` so results are reproducible."""
    with no_grad():
        return [model.predict(c.frames, step=i, keep_ratio=keep_ratio).binary for i, c in enumerate(clips)]


def validate(model: VideoMaskModel, clips: Sequence[ClipSample], keep_ratio: Optional[float] = None) -> float:
    preds = predict_clips(model, clips, keep_ratio)
    return miou(preds, [c.masks for c in clips])


@dataclass
class TrainResult:
    history: list[tuple[int, float, float]] = field(default_factory=list)
    best_miou: float = -1.0
    best_epoch: int = 0
    checkpoint: Optional[Path] = None
    model: Optional[VideoMaskModel] = None


def train(
    cfg: TrainConfig,
    out_dir,
    splits: Optional[tuple[list[ClipSample], list[ClipSample]]] = None,
) -> TrainResult:
    """Train with Adam, validating every epoch and keeping the best-mIoU checkpoint.

    Writes ``metrics.csv`` (``epoch,loss,val_miou``), ``config.txt`` and
    ``checkpoint.msqm`` into ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_set, val_set = splits if splits is not None else load_splits(cfg)
    model = VideoMaskModel(cfg.model_config())
    opt = Adam(model.parameters(), lr=cfg.lr)
    (out / "config.txt").write_text(cfg.dumps())
    result = TrainResult(checkpoint=out / CHECKPOINT_NAME, model=model)

    metrics_path = out / "metrics.csv"
    with metrics_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        forward_count = 0
        n_steps = 0
        for epoch in range(1, cfg.epochs + 1):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                opt.zero_grad()
                for idx in batch:
                    clip = train_set[idx]
                    loss = mask_loss(model(clip.frames, step=forward_count), clip.masks)
                    forward_count += 1
                    value = loss.item()
                    if not math.isfinite(value):
                        raise TrainingError(
                            f"non-finite loss {value} at epoch {epoch}, step {n_steps} (clip {clip.clip_id})"
                        )
                    ops.scale(loss, 1.0 / len(batch)).backward()
                    losses.append(value)
                opt.step()
                n_steps += 1
            train_loss = float(np.mean(losses))
            val_miou = validate(model, val_set)
            writer.writerow((epoch, f"{train_loss:.6f}", f"{val_miou:.6f}"))
            fh.flush()
            result.history.append((epoch, train_loss, val_miou))
            log.info("epoch %d loss %.4f val mIoU %.4f", epoch, train_loss, val_miou)
            if val_miou > result.best_miou:
                result.best_miou, result.best_epoch = val_miou, epoch
                save_checkpoint(result.checkpoint, model.state_dict())
    return result


def load_model(checkpoint, cfg: TrainConfig, mode: Optional[str] = None) -> VideoMaskModel:
    state = load_checkpoint(checkpoint)
    saved_mode = infer_mode(state)
    mode = mode or saved_mode
    if mode != saved_mode:
        raise ValueError(f"checkpoint {checkpoint} holds a {saved_mode!r} model, not {mode!r}")
    model = VideoMaskModel(cfg.model_config(mode))
    model.load_state_dict(state)
    return model


@dataclass
class EvalReport:
    mode: str
    per_clip: list[tuple[str, float, float]]
    miou: float
    j: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("clip_id", "miou", "j"))
        for clip_id, m, j in self.per_clip:
            writer.writerow((clip_id, f"{m:.6f}", f"{j:.6f}"))
        writer.writerow(("mean", f"{self.miou:.6f}", f"{self.j:.6f}"))
        return buf.getvalue()


def evaluate(
    checkpoint,
    clips: Sequence[ClipSample],
    cfg: TrainConfig,
    mode: Optional[str] = None,
    out_dir=None,
    keep_ratio: Optional[float] = None,
) -> EvalReport:
    """Score a checkpoint; optionally write ``eval.csv`` and per-frame prediction PGMs."""
    model = load_model(checkpoint, cfg, mode)
    preds = predict_clips(model, clips, keep_ratio)
    per_clip = [(c.clip_id, miou(p, c.masks), j_measure(p, c.masks)) for p, c in zip(preds, clips)]
    report = EvalReport(
        model.mode,
        per_clip,
        miou(preds, [c.masks for c in clips]),
        j_measure(preds, [c.masks for c in clips]),
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.csv").write_text(report.to_csv())
        for p, c in zip(preds, clips):
            write_mask_frames(out / "pred" / c.clip_id, p)
    return report


METHOD_LABELS = {
    "baseline": "Multiscale Query (baseline)",
    "ours": "Multi-stage Multiscale Query-Memory",
}


def comparison_table(scores: dict[str, dict[str, float]]) -> str:
    """CSV with one row per decoder variant and one mIoU column (in points) per dataset."""
    datasets = sorted({name for per_mode in scores.values() for name in per_mode})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method"] + datasets)
    for mode in ("baseline", "ours"):
        if mode in scores:
            row = [f"{100 * scores[mode][d]:.1f}" if d in scores[mode] else "" for d in datasets]
            writer.writerow([METHOD_LABELS[mode]] + row)
    return buf.getvalue()
