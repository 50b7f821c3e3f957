"""Self-supervised k-space splitting along the readout and the split losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, mixed_l1_l2_loss, ops
from .grog import ShiftedSamples, deposit
from .nufft import GriddingPlan
from .subspace import initial_coefficients, precompute_Mk
from .unrolled import SpiralContext, SubspaceContext

RATIO_RANGE = (0.3, 0.99)


@dataclass(frozen=True)
class SplitPair:
    """Disjoint readout-wise split; masks have shape ``(readouts, samples)``."""

    mask_a: np.ndarray
    mask_b: np.ndarray
    ratio: float

    def set_a(self, kspace: np.ndarray) -> np.ndarray:
        """Samples of set A, ``(coils, m_a)``."""
        return np.asarray(kspace)[..., self.mask_a]

    def set_b(self, kspace: np.ndarray) -> np.ndarray:
        return np.asarray(kspace)[..., self.mask_b]


def sample_ratio(rng: np.random.Generator) -> float:
    """Set-A fraction for one dataset and epoch, uniform on [0.3, 0.99]."""
    return float(rng.uniform(*RATIO_RANGE))


def split_readout(kspace, ratio: float, seed: int, pattern: str = "bernoulli") -> SplitPair:
    """Split every readout of ``kspace`` (``(..., readouts, samples)``) into sets A and B.

    ``kspace`` may also be given as its shape tuple.

    ``bernoulli`` assigns each sample to A with probability ``ratio``;
    ``strided`` sends evenly spaced samples (fraction ``1 - ratio``, random
    phase per readout) to B.  Each readout keeps at least one sample in
    each set: if one side is empty, a random sample is moved to it.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must lie in (0, 1)")
    shape = tuple(kspace) if isinstance(kspace, tuple) else np.shape(kspace)
    n_read, n_samp = shape[-2:]
    if n_samp < 2:
        raise ValueError("need at least 2 samples per readout to split")
    rng = np.random.default_rng(seed)
    if pattern == "bernoulli":
        a = rng.random((n_read, n_samp)) < ratio
    elif pattern == "strided":
        phase = rng.random((n_read, 1))
        j = np.arange(n_samp)[None, :] + phase
        a = np.floor((j + 1) * (1.0 - ratio)) == np.floor(j * (1.0 - ratio))
    else:
        raise ValueError(f"unknown split pattern {pattern!r}")
    fix = rng.integers(0, n_samp, size=n_read)
    empty_a = ~a.any(axis=1)
    a[empty_a, fix[empty_a]] = True
    empty_b = a.all(axis=1)
    a[empty_b, fix[empty_b]] = False
    return SplitPair(a, ~a, float(ratio))


def subset_weights(weights: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Density compensation restricted to ``mask``, rescaled to the full sum."""
    w = np.asarray(weights).reshape(mask.shape)[mask]
    return w * (np.sum(weights) / np.sum(w))


def split_contexts(split: SplitPair, plan: GriddingPlan, weights: np.ndarray, coils: np.ndarray):
    """Spiral encoding contexts of sets A and B."""
    ctx_a = SpiralContext(plan.subset(split.mask_a), subset_weights(weights, split.mask_a), coils)
    ctx_b = SpiralContext(plan.subset(split.mask_b), subset_weights(weights, split.mask_b), coils)
    return ctx_a, ctx_b


def ssdu_loss_spiral(network, kspace: np.ndarray, split: SplitPair, ctx_a: SpiralContext,
                     ctx_b: SpiralContext) -> Tensor:
    """Split loss on multi-coil images.

    ``network(F_A^H W_A y_A)`` is re-projected with ``F_B^H W_B F_B`` and
    compared to ``F_B^H W_B y_B`` using the normalised mixed L1-L2 loss.
    ``kspace`` is ``(coils, readouts, samples)``; ``network`` maps a packed
    multi-coil image and a context to a packed multi-coil image.
    """
    x_a = ops.pack(ctx_a.adjoint_images(split.set_a(kspace)))
    target = ops.pack(ctx_b.adjoint_images(split.set_b(kspace)))
    out = network(Tensor(x_a), ctx_a)
    pred = ops.complex_linear(out, ctx_b.project, ctx_b.project, name="project_b")
    return mixed_l1_l2_loss(pred, target)


@dataclass(frozen=True)
class SubspaceSplit:
    """Gridded, compressed halves of a radial split."""

    x_a: np.ndarray  # (K, C, n, n) multi-coil subspace images of set A
    x_b: np.ndarray
    ctx_a: SubspaceContext
    ctx_b: SubspaceContext


def subspace_split(shifted: ShiftedSamples, split: SplitPair, U, coils: np.ndarray) -> SubspaceSplit:
    """Grid sets A and B separately and move both into the subspace."""
    parts = []
    for mask in (split.mask_a, split.mask_b):
        g = deposit(shifted, mask.ravel())
        x = initial_coefficients(g.kspace, U, g.weights)
        parts.append((x, SubspaceContext(precompute_Mk(U, g.mask, g.weights), coils)))
    (x_a, ctx_a), (x_b, ctx_b) = parts
    return SubspaceSplit(x_a, x_b, ctx_a, ctx_b)


def ssdu_loss_subspace(network, parts: SubspaceSplit) -> Tensor:
    """Split loss inside the subspace: ``F^H M_k^B F network(x_A)`` vs ``x_B``."""
    out = network(Tensor(ops.pack(parts.x_a)), parts.ctx_a)
    pred = ops.complex_linear(out, parts.ctx_b.project, parts.ctx_b.project, name="project_b")
    return mixed_l1_l2_loss(pred, ops.pack(parts.x_b))
