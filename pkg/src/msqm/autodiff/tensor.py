"""Dense tensor with tape-based reverse-mode differentiation.

A forward pass records one :class:`Node` per executed primitive. Calling
:meth:`Tensor.backward` on a scalar walks the recorded graph once, in reverse
topological order, and accumulates gradients into every leaf that requires
them. The graph is released afterwards unless ``retain_graph=True``.
"""

from __future__ import annotations

import contextlib
import threading
import weakref
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class MemoryMeter:
    """Live and peak bytes of the buffers behind tensors created while active.

    A buffer is counted once from the first tensor that wraps it (views share
    their base) until the last such tensor is released, so the peak is the
    high-water mark of tensor storage, like an accelerator allocator reports.
    Freeing is by reference count, which makes the figure deterministic.
    """

    def __init__(self):
        self.live = 0
        self.peak = 0
        self._buffers: dict[int, list] = {}  # id(base) -> [nbytes, tensors still open]

    def track(self, tensor: "Tensor") -> None:
        arr = tensor.data
        base = arr.base if isinstance(arr.base, np.ndarray) else arr
        key = id(base)
        entry = self._buffers.get(key)
        if entry is None:
            entry = self._buffers[key] = [base.nbytes, 0]
            self.live += entry[0]
            self.peak = max(self.peak, self.live)
        entry[1] += 1
        weakref.finalize(tensor, self._release, key)

    def _release(self, key: int) -> None:
        entry = self._buffers[key]
        entry[1] -= 1
        if entry[1] == 0:
            del self._buffers[key]
            self.live -= entry[0]


@contextlib.contextmanager
def measure_memory() -> Iterator[MemoryMeter]:
    """Track tensor storage created inside the block; read ``peak`` afterwards."""
    prev = getattr(_state, "meter", None)
    meter = _state.meter = MemoryMeter()
    try:
        yield meter
    finally:
        _state.meter = prev


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Set the dtype new tensors are created with (float32 or float64)."""
    prev = default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


class Function:
    """A differentiable primitive.

    Subclasses implement ``forward`` on raw arrays and ``backward`` mapping the
    output gradient to one gradient (or ``None``) per tensor input. Anything
    needed by ``backward`` is stashed on ``self`` during ``forward``.
    """

    name = "op"

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs) -> "Tensor":
        fn = cls()
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        requires_grad = _grad_enabled() and any(t.requires_grad for t in inputs)
        result = Tensor(out, requires_grad=requires_grad, _copy=False)
        if requires_grad:
            result._node = Node(fn, tuple(inputs), result)
        return result


@dataclass(eq=False)
class Node:
    fn: Function
    inputs: tuple
    output: "Tensor"

    @property
    def op(self) -> str:
        return self.fn.name


class Graph:
    """Topologically ordered record of the primitives that produced ``output``."""

    def __init__(self, output: "Tensor"):
        self.nodes: list[Node] = []
        seen: set[int] = set()
        # iterative post-order DFS; inputs are visited in argument order so the
        # resulting order (and hence gradient summation order) is deterministic
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            node = tensor._node
            if node is None:
                continue
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((tensor, True))
            for parent in reversed(node.inputs):
                if parent._node is not None and id(parent._node) not in seen:
                    stack.append((parent, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def records(self) -> list[tuple[str, tuple[int, ...], int]]:
        """(operation tag, input ids, output id) for each node, in tape order."""
        return [(n.op, tuple(id(t) for t in n.inputs), id(n.output)) for n in self.nodes]

    def backward(self, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(self.nodes[-1].output): seed}
        for node in reversed(self.nodes):
            g_out = grads.pop(id(node.output), None)
            if g_out is None:
                continue
            g_in = node.fn.backward(g_out)
            for tensor, g in zip(node.inputs, g_in):
                if g is None or not tensor.requires_grad:
                    continue
                if g.shape != tensor.shape:
                    raise RuntimeError(
                        f"{node.op}: gradient shape {g.shape} does not match input {tensor.shape}"
                    )
                if tensor._node is None:
                    tensor._accumulate(g)
                else:
                    key = id(tensor)
                    grads[key] = grads[key] + g if key in grads else g

    def free(self) -> None:
        for node in self.nodes:
            node.output._node = None


class Tensor:
    """Row-major n-dimensional float array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _copy: bool = True):
        arr = np.array(data, dtype=default_dtype(), copy=_copy or None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(default_dtype())
        if arr.ndim and 0 in arr.shape:
            raise ValueError(f"tensor extents must be >= 1, got {arr.shape}")
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        meter = getattr(_state, "meter", None)
        if meter is not None:
            meter.track(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        g = g.astype(self.data.dtype, copy=False)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self, retain_graph: bool = False) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._node is None:
            if self.requires_grad:
                self._accumulate(np.ones_like(self.data))
            return
        graph = Graph(self)
        graph.backward(np.ones_like(self.data))
        if not retain_graph:
            graph.free()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; the implementations live in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.add(self, ops.scale(other, -1.0))

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __mul__(self, other):
        from . import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops

        return ops.transpose(self, axes or None)

    def sum(self):
        from . import ops

        return ops.sum(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)
