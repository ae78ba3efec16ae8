"""Minimal differentiable numeric core."""

from .autodiff import Tensor, as_tensor, backward, parameter
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .functional import PROB_FLOOR, softmax, weighted_cross_entropy
from .layers import DenseLayer, dropout, init_truncated_normal, mlp_forward
from .optim import OptimizerState, adam_step
from .rng import RngStream

__all__ = [
    "Tensor", "as_tensor", "backward", "parameter",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
    "PROB_FLOOR", "softmax", "weighted_cross_entropy",
    "DenseLayer", "dropout", "init_truncated_normal", "mlp_forward",
    "OptimizerState", "adam_step", "RngStream",
]
