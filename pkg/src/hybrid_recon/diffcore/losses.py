"""Training losses: normalized mixed L1-L2 and SSIM."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ops
from .tensor import ShapeError, Tensor, as_tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def mixed_l1_l2_loss(pred, target) -> Tensor:
    """``|t - p|_2 / |t|_2 + |t - p|_1 / |t|_1`` over all entries."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mixed_l1_l2_loss: prediction {pred.shape} vs target {target.shape}")
    n2 = np.sqrt(np.sum(target * target))
    n1 = np.sum(np.abs(target))
    if n2 == 0.0 or n1 == 0.0:
        raise ValueError("mixed_l1_l2_loss: target has zero norm")
    diff = ops.sub(target, pred)
    l2 = ops.sqrt(ops.add(ops.sum(ops.square(diff)), 1e-300))
    l1 = ops.sum(ops.abs(diff))
    return ops.add(ops.mul(l2, 1.0 / n2), ops.mul(l1, 1.0 / n1))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.size
    y = sliding_window_view(x, n, axis=-1) @ g
    return sliding_window_view(y, n, axis=-2) @ g


def _filter_valid_adjoint(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.size
    pad = [(0, 0)] * (y.ndim - 2) + [(n - 1, n - 1), (0, 0)]
    t = sliding_window_view(np.pad(y, pad), n, axis=-2) @ g[::-1]
    pad = [(0, 0)] * (y.ndim - 2) + [(0, 0), (n - 1, n - 1)]
    return sliding_window_view(np.pad(t, pad), n, axis=-1) @ g[::-1]


def local_mean(x, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> Tensor:
    """Gaussian-weighted local mean over the last two axes ('valid' region)."""
    g = gaussian_window(window, sigma)
    return ops.linear_map(x, lambda v: _filter_valid(v, g),
                          lambda v: _filter_valid_adjoint(v, g), name="gaussian_filter")


def ssim(x, ref, dynamic_range: float | None = None) -> Tensor:
    """Mean structural similarity over the last two axes (and any leading ones).

    ``ref`` is treated as a constant.  ``dynamic_range`` defaults to
    ``max(|ref|)``.
    """
    x = as_tensor(x)
    ref = np.asarray(ref.data if isinstance(ref, Tensor) else ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ShapeError(f"ssim: image {x.shape} vs reference {ref.shape}")
    if x.ndim < 2 or min(x.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(f"ssim: images {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    L = float(np.max(np.abs(ref))) if dynamic_range is None else float(dynamic_range)
    if L <= 0:
        raise ValueError("ssim: dynamic range must be positive")
    c1 = (SSIM_K1 * L) ** 2
    c2 = (SSIM_K2 * L) ** 2
    g = gaussian_window()
    mu_y = _filter_valid(ref, g)
    var_y = _filter_valid(ref * ref, g) - mu_y * mu_y
    mu_x = local_mean(x)
    var_x = ops.sub(local_mean(ops.square(x)), ops.square(mu_x))
    cov = ops.sub(local_mean(ops.mul(x, ref)), ops.mul(mu_x, mu_y))
    num = ops.mul(ops.add(ops.mul(mu_x, 2.0 * mu_y), c1), ops.add(ops.mul(cov, 2.0), c2))
    den = ops.mul(ops.add(ops.square(mu_x), mu_y * mu_y + c1), ops.add(var_x, var_y + c2))
    return ops.mean(ops.div(num, den))


def ssim_loss(x, ref, dynamic_range: float | None = None) -> Tensor:
    return ops.sub(1.0, ssim(x, ref, dynamic_range))
