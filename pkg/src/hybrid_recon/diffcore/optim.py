from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    """Bias-corrected ADAM over a named parameter dictionary.

    Each parameter's trajectory depends only on its own gradient history, so
    the registration order of ``params`` is irrelevant.
    """

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: dict[str, Tensor] = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads: dict) -> None:
        for name, g in grads.items():
            if name not in self.params:
                raise KeyError(f"gradient for unregistered parameter {name!r}")
            if g.shape != self.params[name].shape:
                raise ValueError(f"gradient for {name!r} has shape {g.shape}, "
                                 f"parameter has {self.params[name].shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"step": self.step_count, "lr": self.lr, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps,
                "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for key in ("lr", "beta1", "beta2", "eps"):
            if key in state:
                setattr(self, key, float(state[key]))
        for k in self.params:
            self.m[k] = np.array(state["m"][k], dtype=np.float64)
            self.v[k] = np.array(state["v"][k], dtype=np.float64)


def adam_step(params: dict, grads: dict, state: Adam) -> dict:
    """Functional form: advance ``state`` by one step and return ``params``."""
    state.step(grads)
    return params
