"""Token-keep-ratio sweep: peak allocation, latency and mIoU per ratio."""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import measure_memory, no_grad
from .features import ClipSample
from .metrics import miou
from .model import VideoMaskModel

DEFAULT_R_VALUES = tuple(round(0.1 * i, 1) for i in range(1, 11))
SWEEP_HEADER = ("r", "peak_bytes", "ms_per_frame", "miou")


@dataclass(frozen=True)
class BenchRecord:
    r: float
    peak_bytes: int
    ms_per_frame: float
    miou: float


def _run(model: VideoMaskModel, clips: Sequence[ClipSample], r: float) -> list[np.ndarray]:
    with no_grad():
        return [model.predict(c.frames, step=i, keep_ratio=r).binary for i, c in enumerate(clips)]


def peak_bytes(model: VideoMaskModel, clips: Sequence[ClipSample], r: float) -> tuple[int, list[np.ndarray]]:
    """High-water mark of live tensor storage while predicting ``clips``.

    Interpreter bookkeeping is excluded: it varies by a few kilobytes between
    identical calls, which would make ties between ratios flip at random.
    """
    with measure_memory() as meter:
        preds = _run(model, clips, r)
    return meter.peak, preds


def sweep_token_keep(
    model: VideoMaskModel,
    clips: Sequence[ClipSample],
    r_values: Sequence[float] = DEFAULT_R_VALUES,
    repeats: int = 5,
    warmup: int = 2,
) -> list[BenchRecord]:
    """Measure every keep ratio on ``clips``.

    Timing passes are interleaved across ratios (round-robin) so slow drift in
    machine load spreads evenly over the sweep; the first ``warmup`` rounds are
    discarded and the median of the remaining ``repeats`` is reported.
    """
    if repeats < 5:
        raise ValueError("need at least 5 timed repeats")
    n_frames = sum(c.frames.shape[0] for c in clips)
    mem: dict[float, int] = {}
    scores: dict[float, float] = {}
    for r in r_values:
        mem[r], preds = peak_bytes(model, clips, r)
        scores[r] = miou(preds, [c.masks for c in clips])
    times: dict[float, list[float]] = {r: [] for r in r_values}
    for rep in range(warmup + repeats):
        for r in r_values:
            start = time.perf_counter()
            _run(model, clips, r)
            elapsed = time.perf_counter() - start
            if rep >= warmup:
                times[r].append(1e3 * elapsed / n_frames)
    return [BenchRecord(r, mem[r], statistics.median(times[r]), scores[r]) for r in r_values]


def records_to_csv(records: Sequence[BenchRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for rec in records:
        writer.writerow((f"{rec.r:g}", rec.peak_bytes, f"{rec.ms_per_frame:.3f}", f"{rec.miou:.6f}"))
    return buf.getvalue()


def plot_sweep(records: Sequence[BenchRecord], path, title: Optional[str] = None) -> None:
    """Three panels over r: peak MiB, ms per frame, mIoU (points)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rs = [rec.r for rec in records]
    panels = (
        ([rec.peak_bytes / 2**20 for rec in records], "Peak allocation (MiB)", "magenta", "o"),
        ([rec.ms_per_frame for rec in records], "Inference time (ms / frame)", "tab:cyan", "x"),
        ([100 * rec.miou for rec in records], "mIoU", "tab:cyan", "x"),
    )
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    for ax, (ys, label, color, marker) in zip(axes, panels):
        ax.plot(rs, ys, color=color, marker=marker)
        ax.set_xlabel("token keep ratio r")
        ax.set_ylabel(label)
        ax.set_xticks(rs)
        ax.grid(alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def write_sweep(records: Sequence[BenchRecord], out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = out / "sweep.csv", out / "sweep.svg"
    csv_path.write_text(records_to_csv(records))
    plot_sweep(records, svg_path)
    return csv_path, svg_path
