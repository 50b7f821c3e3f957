"""Small networks built from the tape primitives."""
from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor

ACTIVATIONS = {"silu": ops.silu, "tanh": ops.tanh, "softplus": ops.softplus}


class CnnBlock:
    """Stack of same-padded 3x3 convolutions used as a learned regulariser.

    Parameters
    ----------
    channels : int
        Input and output channel count (2 per complex image).
    hidden : int
        Width of the inner layers.
    layers : int
        Number of convolutions (>= 2).
    rng : numpy.random.Generator
        Source for the weight initialisation.
    out_scale : float
        Multiplier on the last layer's initial weights; 0 gives a block that
        outputs exactly zero.
    bias : bool
        Learn per-channel offsets.  Without them, a zero input maps to zero
        and the output scales with the input near the origin.
    """

    def __init__(self, channels: int, hidden: int = 16, layers: int = 3, rng=None,
                 activation: str = "silu", out_scale: float = 0.1, kernel: int = 3,
                 bias: bool = True):
        if layers < 2:
            raise ValueError("a CnnBlock needs at least two convolutions")
        rng = np.random.default_rng(0) if rng is None else rng
        self.channels = channels
        self.act = ACTIVATIONS[activation]
        widths = [channels] + [hidden] * (layers - 1) + [channels]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (cin, cout) in enumerate(zip(widths[:-1], widths[1:])):
            std = np.sqrt(2.0 / (cin * kernel * kernel))
            w = rng.standard_normal((cout, cin, kernel, kernel)) * std
            if i == layers - 1:
                w *= out_scale
            self.weights.append(Tensor(w, requires_grad=True, name=f"conv{i}.w"))
            self.biases.append(Tensor(np.zeros(cout), requires_grad=True, name=f"conv{i}.b")
                               if bias else None)

    def parameters(self, prefix: str = "") -> dict:
        params = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"{prefix}conv{i}.w"] = w
            if b is not None:
                params[f"{prefix}conv{i}.b"] = b
        return params

    @property
    def num_weights(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ops.conv2d(h, w, b)
            if i < last:
                h = self.act(h)
        return h


class MlpNetwork:
    """Fully connected curve-to-parameter regressor (``n_in -> ... -> 3``)."""

    def __init__(self, n_in: int, hidden=(64, 64), n_out: int = 3, rng=None,
                 activation: str = "tanh"):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_in, self.n_out = n_in, n_out
        self.act = ACTIVATIONS[activation]
        widths = [n_in, *hidden, n_out]
        self.weights, self.biases = [], []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            w = rng.standard_normal((a, b)) * np.sqrt(1.0 / a)
            self.weights.append(Tensor(w, requires_grad=True, name=f"fc{i}.w"))
            self.biases.append(Tensor(np.zeros(b), requires_grad=True, name=f"fc{i}.b"))

    def parameters(self, prefix: str = "") -> dict:
        params = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"{prefix}fc{i}.w"] = w
            params[f"{prefix}fc{i}.b"] = b
        return params

    def __call__(self, x) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(x)
        if h.shape[-1] != self.n_in:
            raise ValueError(f"MLP expects {self.n_in} inputs per curve, got {h.shape}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ops.add(ops.matmul(h, w), b)
            if i < last:
                h = self.act(h)
        return h
