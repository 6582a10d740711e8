from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import finite_difference_check
from .ops import DimensionError
from .tensor import Function, Graph, MemoryMeter, Tensor, measure_memory, no_grad, parameter, precision, tensor

__all__ = [
    "CheckpointError",
    "DimensionError",
    "Function",
    "Graph",
    "MemoryMeter",
    "Tensor",
    "finite_difference_check",
    "load_checkpoint",
    "measure_memory",
    "no_grad",
    "ops",
    "parameter",
    "precision",
    "save_checkpoint",
    "tensor",
]
