"""Minimal reverse-mode autodiff with the layers and losses the networks need."""
from . import ops
from .losses import mixed_l1_l2_loss, ssim, ssim_loss
from .nn import CnnBlock, MlpNetwork
from .ops import complex_linear, pack, unpack
from .optim import Adam, adam_step
from .tensor import ShapeError, Tape, Tensor, active_tape, backward, forward

__all__ = [
    "Adam", "CnnBlock", "MlpNetwork", "ShapeError", "Tape", "Tensor",
    "active_tape", "adam_step", "backward", "complex_linear", "forward",
    "mixed_l1_l2_loss", "ops", "pack", "ssim", "ssim_loss", "unpack",
]
