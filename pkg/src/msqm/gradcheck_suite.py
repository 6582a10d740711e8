"""Finite-difference verification of every primitive and of the toy end-to-end model."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .attention import AttentionBlock, FeedForward, self_attend_with_drop
from .autodiff import Tensor, finite_difference_check, ops, parameter
from .data import SynthConfig, generate_clip
from .head import SegHead
from .model import ModelConfig, VideoMaskModel
from .train import mask_loss

TOLERANCE = 1e-3

# toy end-to-end setting: T=2, 32x32 frames, D=24, N=3, 2 heads, one Stage-2 sweep
TOY = dict(d=24, n_queries=3, heads=2, rounds=1, keep_ratio=1.0)


@dataclass
class CheckResult:
    name: str
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error <= TOLERANCE


def _p(rng, *shape, scale=1.0) -> Tensor:
    return parameter(rng.standard_normal(shape) * scale)


def _away_from_zero(rng, *shape) -> Tensor:
    x = rng.uniform(0.2, 2.0, shape) * rng.choice([-1.0, 1.0], shape)
    return parameter(x)


def _toy_clip(seed: int = 3):
    return generate_clip(SynthConfig(seed=seed, n_frames=2, height=32, width=32, n_objects=2, size_range=(4.0, 8.0)))


def _toy_model(mode: str, keep_ratio: float = 1.0, **extra) -> VideoMaskModel:
    return VideoMaskModel(ModelConfig(**{**TOY, "keep_ratio": keep_ratio, **extra}, mode=mode, seed=11))


def _model_check(mode: str, keep_ratio: float = 1.0, coords: int = 2):
    model = _toy_model(mode, keep_ratio)
    clip = _toy_clip()

    def f():
        return mask_loss(model(clip.frames, step=7), clip.masks)

    return f, model.parameters(), coords


def _cases() -> dict[str, Callable[[], tuple]]:
    rng = np.random.default_rng(1234)
    cases: dict[str, Callable[[], tuple]] = {}

    def case(name):
        def register(builder):
            cases[name] = builder
            return builder

        return register

    @case("add")
    def _():
        a, b = _p(rng, 3, 4), _p(rng, 3, 4)
        return (lambda: ops.add(a, b)), [a, b]

    @case("add_bias")
    def _():
        x, b = _p(rng, 5, 4), _p(rng, 4)
        return (lambda: ops.add_bias(x, b)), [x, b]

    @case("scale")
    def _():
        x = _p(rng, 3, 4)
        return (lambda: ops.scale(x, -1.7)), [x]

    @case("mul")
    def _():
        a, b = _p(rng, 3, 4), _p(rng, 3, 4)
        return (lambda: ops.mul(a, b)), [a, b]

    @case("matmul")
    def _():
        a, b = _p(rng, 4, 3), _p(rng, 3, 5)
        return (lambda: ops.matmul(a, b)), [a, b]

    @case("matmul_batched")
    def _():
        a, b = _p(rng, 2, 4, 3), _p(rng, 2, 3, 5)
        return (lambda: ops.matmul(a, b)), [a, b]

    @case("linear")
    def _():
        x, w, b = _p(rng, 6, 4), _p(rng, 4, 3), _p(rng, 3)
        return (lambda: ops.linear(x, w, b)), [x, w, b]

    @case("reshape")
    def _():
        x = _p(rng, 2, 3, 4)
        return (lambda: ops.reshape(x, (4, 6))), [x]

    @case("transpose")
    def _():
        x = _p(rng, 2, 3, 4)
        return (lambda: ops.transpose(x, (2, 0, 1))), [x]

    @case("concat_last_axis")
    def _():
        a, b = _p(rng, 3, 2), _p(rng, 3, 4)
        return (lambda: ops.concat_last_axis(a, b)), [a, b]

    @case("relu")
    def _():
        x = _away_from_zero(rng, 4, 5)
        return (lambda: ops.relu(x)), [x]

    @case("gelu")
    def _():
        x = _p(rng, 4, 5, scale=2.0)
        return (lambda: ops.gelu(x)), [x]

    @case("sigmoid")
    def _():
        x = _p(rng, 4, 5, scale=3.0)
        return (lambda: ops.sigmoid(x)), [x]

    @case("softmax")
    def _():
        x = _p(rng, 3, 6, scale=2.0)
        return (lambda: ops.softmax(x)), [x]

    @case("softmax_matmul")
    def _():
        a, b, v = _p(rng, 4, 3), _p(rng, 3, 5), _p(rng, 5, 2)
        return (lambda: ops.matmul(ops.softmax(ops.matmul(a, b)), v)), [a, b, v]

    @case("layer_norm")
    def _():
        x, g, b = _p(rng, 5, 6), _p(rng, 6), _p(rng, 6)
        return (lambda: ops.layer_norm(x, g, b)), [x, g, b]

    @case("group_norm")
    def _():
        x, g, b = _p(rng, 4, 2, 3, 3), _p(rng, 4), _p(rng, 4)
        return (lambda: ops.group_norm(x, g, b, groups=2)), [x, g, b]

    @case("conv3d")
    def _():
        x, w, b = _p(rng, 2, 3, 6, 5), _p(rng, 3, 2, 3, 3, 2), _p(rng, 3)
        return (lambda: ops.conv3d(x, w, b, stride=(1, 2, 1), padding=(1, 1, 0))), [x, w, b]

    @case("bilinear_interp")
    def _():
        x = _p(rng, 2, 3, 2, 4)
        return (lambda: ops.bilinear_interp(x, 6, 5)), [x]

    @case("bilinear_downsample")
    def _():
        x = _p(rng, 1, 8, 6, 2)
        return (lambda: ops.bilinear_interp(x, 3, 4)), [x]

    @case("sum")
    def _():
        x = _p(rng, 3, 4)
        return (lambda: ops.sum(x)), [x]

    @case("mean")
    def _():
        x = _p(rng, 3, 4)
        return (lambda: ops.mean(x)), [x]

    @case("max_last_axis")
    def _():
        base = rng.permutation(20).reshape(4, 5).astype(float)
        x = parameter(base + 0.1 * rng.standard_normal((4, 5)))
        return (lambda: ops.max_last_axis(x)), [x]

    @case("take_replace_rows")
    def _():
        x, y = _p(rng, 6, 3), _p(rng, 2, 3)
        idx = np.array([1, 4])
        return (lambda: ops.replace_rows(ops.scale(x, 2.0), idx, ops.mul(y, ops.take_rows(x, idx)))), [x, y]

    @case("bce_with_logits")
    def _():
        x = _p(rng, 3, 4, scale=3.0)
        t = (rng.random((3, 4)) > 0.5).astype(float)
        return (lambda: ops.bce_with_logits(x, t)), [x]

    @case("dice_loss")
    def _():
        p = parameter(rng.uniform(0.1, 0.9, (3, 4)))
        t = (rng.random((3, 4)) > 0.5).astype(float)
        return (lambda: ops.dice_loss(p, t)), [p]

    @case("attention")
    def _():
        block = AttentionBlock(8, 2, rng)
        q, k = _p(rng, 3, 8), _p(rng, 5, 8)
        return (lambda: block(q, k, k)), [q, k] + block.parameters()

    @case("ffn")
    def _():
        ffn = FeedForward(6, rng)
        x = _p(rng, 4, 6)
        return (lambda: ffn(x)), [x] + ffn.parameters()

    @case("token_drop_r0.5")
    def _():
        block = AttentionBlock(8, 2, rng)
        x = _p(rng, 10, 8)
        # a fresh generator per call freezes the mask across finite-difference probes
        return (lambda: self_attend_with_drop(block, x, 0.5, np.random.default_rng(5))), [x] + block.parameters()

    @case("seg_head")
    def _():
        head = SegHead(8, rng)
        x = _p(rng, 2 * 2 * 3, 8)
        return (lambda: head(x, (2, 2, 3), (8, 12))), [x] + head.parameters()

    @case("model_ours_toy")
    def _():
        return _model_check("ours")

    @case("model_ours_toy_r0.5")
    def _():
        return _model_check("ours", keep_ratio=0.5)

    @case("model_baseline_toy")
    def _():
        return _model_check("baseline")

    return cases


def component_names() -> list[str]:
    return list(_cases())


def run_gradcheck(only: list[str] | None = None, progress: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    results = []
    for name, builder in _cases().items():
        if only is not None and name not in only:
            continue
        start = time.perf_counter()
        built = builder()
        f, inputs = built[0], built[1]
        coords = built[2] if len(built) > 2 else 64
        err = finite_difference_check(f, inputs, coords_per_input=coords)
        res = CheckResult(name, err, time.perf_counter() - start)
        if progress is not None:
            progress(res)
        results.append(res)
    return results


def format_report(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'component':<{width}}  max_rel_err  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.error:11.3e}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
