"""Run configuration and the plain-text ``key = value`` config format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .data import SynthConfig
from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    """Everything a train / eval / sweep run depends on.

    Defaults are the desk-scale profile. ``PAPER_SCALE`` lists the reference
    settings (D=384, 8 heads, about nine decoder layers) for documentation;
    they are far beyond what a CPU run can train.
    """

    seed: int = 0
    epochs: int = 15
    clip_len: int = 5
    lr: float = 1e-4
    batch_size: int = 2
    d: int = 48
    n_queries: int = 5
    heads: int = 4
    rounds: int = 2
    stage1_rounds: int = 1
    keep_ratio: float = 0.5
    encoder_depth: int = 2
    mode: str = "ours"
    height: int = 64
    width: int = 64
    data_root: str = ""
    data_seed: int = 0
    train_clips: int = 32
    val_clips: int = 8
    max_objects: int = 3
    background: str = "static"
    n_static: int = 0
    bench_repeats: int = 5
    bench_warmup: int = 2

    def __post_init__(self):
        positive = ("epochs", "clip_len", "batch_size", "d", "n_queries", "heads", "rounds",
                    "stage1_rounds", "encoder_depth", "height", "width", "train_clips", "val_clips",
                    "max_objects", "bench_repeats")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ConfigError(f"keep_ratio must lie in (0, 1], got {self.keep_ratio}")
        if self.bench_repeats < 5:
            raise ConfigError("bench_repeats must be at least 5")
        try:
            self.model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def model_config(self, mode: str | None = None) -> ModelConfig:
        return ModelConfig(
            d=self.d,
            n_queries=self.n_queries,
            heads=self.heads,
            rounds=self.rounds,
            stage1_rounds=self.stage1_rounds,
            keep_ratio=self.keep_ratio,
            encoder_depth=self.encoder_depth,
            mode=mode or self.mode,
            seed=self.seed,
        )

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            n_frames=self.clip_len,
            height=self.height,
            width=self.width,
            background=self.background,
            n_static=self.n_static,
        )

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


PAPER_SCALE = {
    "clip_len": 5,
    "epochs": 15,
    "lr": 1e-4,
    "d": 384,
    "heads": 8,
    "n_queries": 5,
    "keep_ratio": 0.5,
    "rounds": 2,  # nine decoder layers over four scales, rounded to full sweeps
}


def _coerce(name: str, kind: type, raw: str):
    try:
        if kind is bool:
            return raw.lower() in ("1", "true", "yes")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from exc


def parse_config(text: str, **overrides) -> TrainConfig:
    types = {f.name: type(f.default) for f in fields(TrainConfig)}
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, types[key], raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def load_config(path, **overrides) -> TrainConfig:
    return parse_config(Path(path).read_text(), **overrides)
