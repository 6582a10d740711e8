"""Central finite-difference oracle for the reverse-mode engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, no_grad, precision


def _scalarize(out: Tensor, weights: np.ndarray | None) -> Tensor:
    if weights is None:
        return out if out.size == 1 else ops.sum(out)
    return ops.sum(ops.mul(out, Tensor(weights)))


def finite_difference_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    coords_per_input: int = 64,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Compare ``backward()`` against central differences and return the max relative error.

    ``f`` is re-evaluated with each probed coordinate nudged by ``±h``; it must be
    deterministic (pin any RNG it uses). Non-scalar outputs are reduced with a
    fixed random projection so every output entry contributes. The whole check
    runs in float64; inputs are cast for the duration and restored afterwards.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """
    rng = np.random.default_rng(seed)
    originals = [t.data for t in inputs]
    try:
        with precision(np.float64):
            for t in inputs:
                t.data = t.data.astype(np.float64)
                t.grad = None
            out = f()
            weights = None if out.size == 1 else rng.standard_normal(out.shape)
            _scalarize(out, weights).backward()
            analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

            def value() -> float:
                with no_grad():
                    o = f().data
                if weights is None:
                    return float(o.sum(dtype=np.float64))
                return float((o * weights).sum(dtype=np.float64))

            worst = 0.0
            for t, a in zip(inputs, analytic):
                flat = t.data.reshape(-1)
                if flat.size <= coords_per_input:
                    coords = np.arange(flat.size)
                else:
                    coords = np.sort(rng.choice(flat.size, coords_per_input, replace=False))
                a_flat = a.reshape(-1)
                for i in coords:
                    keep = flat[i]
                    flat[i] = keep + h
                    fp = value()
                    flat[i] = keep - h
                    fm = value()
                    flat[i] = keep
                    num = (fp - fm) / (2 * h)
                    err = abs(a_flat[i] - num) / max(abs(a_flat[i]), abs(num), floor)
                    worst = max(worst, err)
    finally:
        for t, data in zip(inputs, originals):
            t.data = data
            t.grad = None
    return worst
