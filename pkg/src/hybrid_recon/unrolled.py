"""Unrolled gradient-descent reconstruction networks.

Each block applies ``x <- x - mu * (N x - x0) - CNN(x)``, where ``N`` is the
normal operator of the bound encoding context and ``x0`` its adjoint image.
Images travel as packed real tensors: ``(2, n, n)`` for spiral images and
``(2, K, n, n)`` for subspace coefficient images.  Multi-coil images carry an
extra coil axis after the component axis.
"""
from __future__ import annotations

import numpy as np

from .diffcore import CnnBlock, Tensor, ops
from .nufft import GriddingPlan, fft2c, ifft2c, normal_operator, nufft_adjoint, nufft_forward
from .subspace import apply_subspace_dc, subspace_normal


class SpiralContext:
    """Encoding ``sqrt(W) F C`` for one non-Cartesian sample set.

    Parameters
    ----------
    plan : GriddingPlan
    weights : ndarray, shape (m,)
        Density compensation of the samples in ``plan``.
    coils : ndarray, shape (C, n, n)
    """

    def __init__(self, plan: GriddingPlan, weights: np.ndarray, coils: np.ndarray):
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if weights.size != plan.n_samples:
            raise ValueError(f"{weights.size} weights for {plan.n_samples} samples")
        if coils.shape[-1] != plan.n:
            raise ValueError(f"coil maps {coils.shape} do not match matrix size {plan.n}")
        self.plan, self.weights, self.coils = plan, weights, np.asarray(coils)

    @property
    def image_shape(self) -> tuple:
        return (self.plan.n, self.plan.n)

    def normal(self, x: np.ndarray) -> np.ndarray:
        return normal_operator(x, self.plan, self.coils, self.weights)

    def combine(self, multi: np.ndarray) -> np.ndarray:
        return np.sum(np.conj(self.coils) * multi, axis=-3)

    def expand(self, x: np.ndarray) -> np.ndarray:
        return x[..., None, :, :] * self.coils

    def adjoint_images(self, samples: np.ndarray) -> np.ndarray:
        """Per-coil ``F^H W y``: samples ``(C, m)`` -> ``(C, n, n)``."""
        return nufft_adjoint(samples, self.plan, self.weights)

    def project(self, multi: np.ndarray) -> np.ndarray:
        """Per-coil ``F^H W F`` (self-adjoint)."""
        return nufft_adjoint(nufft_forward(multi, self.plan), self.plan, self.weights)


class SubspaceContext:
    """Subspace encoding with precomputed ``M_k`` and coil maps.

    Coefficient images are ``(K, n, n)``; multi-coil ones ``(K, C, n, n)``.
    Shapes of every intermediate are appended to ``shape_log`` when it is a list.
    """

    def __init__(self, Mk: np.ndarray, coils: np.ndarray, shape_log: list | None = None):
        if Mk.shape[-2:] != coils.shape[-2:]:
            raise ValueError(f"M_k {Mk.shape} and coil maps {coils.shape} differ in matrix size")
        self.Mk, self.coils, self.shape_log = Mk, np.asarray(coils), shape_log

    @property
    def image_shape(self) -> tuple:
        return (self.Mk.shape[0],) + self.coils.shape[-2:]

    def _log(self, *arrays):
        if self.shape_log is not None:
            self.shape_log.extend(a.shape for a in arrays)

    def normal(self, v: np.ndarray) -> np.ndarray:
        out = subspace_normal(v, self.Mk, self.coils)
        self._log(v, out)
        return out

    def combine(self, multi: np.ndarray) -> np.ndarray:
        out = np.sum(np.conj(self.coils) * multi, axis=-3)
        self._log(multi, out)
        return out

    def expand(self, v: np.ndarray) -> np.ndarray:
        out = v[..., None, :, :] * self.coils
        self._log(v, out)
        return out

    def project(self, multi: np.ndarray) -> np.ndarray:
        """Per-coil ``F^H M_k F`` on ``(K, C, n, n)`` (self-adjoint)."""
        out = ifft2c(apply_subspace_dc(fft2c(multi), self.Mk))
        self._log(multi, out)
        return out


class UnrolledNetwork:
    """Cascade of gradient-descent blocks with learned steps and CNN regularisers.

    Parameters
    ----------
    kind : {"spiral", "subspace"}
    num_blocks : int
    components : int
        Subspace rank ``K`` (ignored for spiral networks).
    seed : int
        Seeds the CNN weight initialisation.
    mu_init : float
        Initial step size of every block.
    out_scale : float
        Initial scale of each CNN's last layer; 0 gives CNN == 0.
    cnn_bias : bool
        Give the CNN layers additive offsets.  Without them CNN(0) == 0, so a
        network trained at one noise level adds no constant background at
        another.
    """

    def __init__(self, kind: str, num_blocks: int = 6, components: int = 4, seed: int = 0,
                 hidden: int = 16, layers: int = 3, mu_init: float = 0.5, out_scale: float = 0.1,
                 cnn_bias: bool = True):
        if kind not in ("spiral", "subspace"):
            raise ValueError(f"unknown network kind {kind!r}")
        if num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        self.kind, self.components = kind, components
        self.channels = 2 if kind == "spiral" else 2 * components
        rng = np.random.default_rng(seed)
        self.mus = [Tensor(np.array(mu_init), requires_grad=True, name=f"block{i}.mu")
                    for i in range(num_blocks)]
        self.cnns = [CnnBlock(self.channels, hidden, layers, rng=rng, out_scale=out_scale,
                              bias=cnn_bias)
                     for _ in range(num_blocks)]

    @property
    def num_blocks(self) -> int:
        return len(self.mus)

    def parameters(self) -> dict:
        params = {}
        for i, (mu, cnn) in enumerate(zip(self.mus, self.cnns)):
            params[f"block{i}.mu"] = mu
            params.update(cnn.parameters(prefix=f"block{i}."))
        return params

    def block(self, i: int, x: Tensor, x0, ctx) -> Tensor:
        return unrolled_block(x, x0, ctx, self.mus[i], self.cnns[i])

    def reconstruct(self, x0, ctx) -> Tensor:
        """Run all blocks from the coil-combined packed image ``x0``."""
        x0 = x0 if isinstance(x0, Tensor) else Tensor(x0)
        x = x0
        for i in range(self.num_blocks):
            x = self.block(i, x, x0, ctx)
        return x

    def __call__(self, multi, ctx) -> Tensor:
        """Multi-coil packed image in, multi-coil packed image out."""
        x0 = ops.complex_linear(multi, ctx.combine, ctx.expand, name="coil_combine")
        out = self.reconstruct(x0, ctx)
        return ops.complex_linear(out, ctx.expand, ctx.combine, name="coil_expand")


def _cnn_apply(x: Tensor, cnn: CnnBlock) -> Tensor:
    shape = x.shape
    h = ops.reshape(x, (cnn.channels,) + shape[-2:])
    return ops.reshape(cnn(h), shape)


def unrolled_block(x, x0, ctx, mu, cnn: CnnBlock | None) -> Tensor:
    """``x - mu * (normal(x) - x0) - CNN(x)`` on packed tensors (``cnn=None`` means CNN == 0)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    residual = ops.sub(ops.complex_linear(x, ctx.normal, ctx.normal, name="normal"), x0)
    out = ops.sub(x, ops.mul(mu, residual))
    if cnn is not None:
        out = ops.sub(out, _cnn_apply(x, cnn))
    return out


spiral_block = unrolled_block
subspace_block = unrolled_block


def build_network(kind: str, num_blocks: int = 6, seed: int = 0, **kwargs) -> UnrolledNetwork:
    return UnrolledNetwork(kind, num_blocks=num_blocks, seed=seed, **kwargs)


def power_iteration(op, shape: tuple, iters: int = 50, seed: int = 0) -> float:
    """Largest eigenvalue of a Hermitian positive operator on complex arrays."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    lam = 0.0
    for _ in range(iters):
        v /= np.linalg.norm(v)
        w = op(v)
        lam = float(np.real(np.vdot(v, w)))
        v = w
    return lam
