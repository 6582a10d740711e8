"""Binary-mask region metrics.

Both metrics take one clip (``T x H x W``, or a single ``H x W`` frame) or a
list of clips. Scores are computed per frame, averaged over the frames of a
clip, then over clips. A class absent from both prediction and ground truth
scores IoU 1; absent from exactly one, 0.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

MaskInput = Union[np.ndarray, Sequence[np.ndarray]]


def _frames(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred) > 0
    g = np.asarray(gt) > 0
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} does not match ground truth {g.shape}")
    if p.ndim < 2:
        raise ValueError(f"masks need at least 2 dimensions, got {p.shape}")
    h, w = p.shape[-2:]
    return p.reshape(-1, h * w), g.reshape(-1, h * w)


def _iou(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    inter = (p & g).sum(axis=1)
    union = (p | g).sum(axis=1)
    return np.where(union == 0, 1.0, inter / np.maximum(union, 1))


def _per_clip(fn, pred: MaskInput, gt: MaskInput) -> float:
    if isinstance(pred, (list, tuple)) or isinstance(gt, (list, tuple)):
        if len(pred) != len(gt):
            raise ValueError(f"{len(pred)} predicted clips vs {len(gt)} ground-truth clips")
        if not pred:
            raise ValueError("no clips to score")
        return float(np.mean([fn(*_frames(p, g)) for p, g in zip(pred, gt)]))
    return float(fn(*_frames(pred, gt)))


def _miou_frames(p, g) -> float:
    per_frame = 0.5 * (_iou(p, g) + _iou(~p, ~g))
    return per_frame.mean()


def _j_frames(p, g) -> float:
    return _iou(p, g).mean()


def miou(pred: MaskInput, gt: MaskInput) -> float:
    """Mean of foreground and background IoU."""
    return _per_clip(_miou_frames, pred, gt)


def j_measure(pred: MaskInput, gt: MaskInput) -> float:
    """Region similarity: foreground IoU."""
    return _per_clip(_j_frames, pred, gt)
