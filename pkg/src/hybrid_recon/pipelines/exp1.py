"""Spiral denoising/reconstruction experiment (lung-like phantoms).

Stage 1 trains Network A with the readout-split loss on fully sampled noisy
data; its outputs become the references for Network B, which sees
interleaf-undersampled data and is trained with an SSIM loss.  Two baselines
share Network B's architecture, epochs and seeds: a split-loss network on
the undersampled data (``selfsup``) and an SSIM network against the noisy
fully sampled images (``supervised_noisy``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import ssdu
from ..coils import estimate_sensitivities
from ..diffcore import Adam, Tape, Tensor, ops, ssim_loss
from ..nufft import GriddingPlan, make_plan
from ..trajectories import Trajectory, density_compensation, spiral_keep, undersample
from ..unrolled import SpiralContext, UnrolledNetwork, build_network
from .config import ExperimentConfig
from .data import SpiralCase

METHODS = ("hybrid", "selfsup", "supervised_noisy")


@dataclass
class SpiralPrep:
    """Normalised k-space and operators of one case at one sampling level."""

    case_id: str
    kspace: np.ndarray  # (coils, readouts, samples), divided by ``scale``
    traj: Trajectory
    plan: GriddingPlan
    weights: np.ndarray
    coils: np.ndarray
    scale: float

    @property
    def ctx(self) -> SpiralContext:
        return SpiralContext(self.plan, self.weights, self.coils)

    def adjoint_multi(self) -> np.ndarray:
        """Per-coil ``F^H W y`` ``(C, n, n)``."""
        return self.ctx.adjoint_images(self.kspace.reshape(self.kspace.shape[0], -1))

    def adjoint_image(self) -> np.ndarray:
        """Coil-combined ``C^H F^H W y`` in normalised units."""
        return self.ctx.combine(self.adjoint_multi())


class _PlanCache:
    """Trajectories are shared by all cases, so plans are built once per sampling."""

    def __init__(self):
        self._plans = {}

    def get(self, traj: Trajectory, n: int, key) -> tuple:
        if key not in self._plans:
            self._plans[key] = (make_plan(traj, n), density_compensation(traj).ravel())
        return self._plans[key]


_PLANS = _PlanCache()


def prepare(case: SpiralCase, n: int, rate: int = 1) -> SpiralPrep:
    """Undersample by ``rate`` (every rate-th interleaf), estimate coils, normalise."""
    keep = spiral_keep(case.traj.readout_count, rate)
    traj = undersample(case.traj, keep) if rate > 1 else case.traj
    k = undersample(case.kspace, keep, axis=1) if rate > 1 else case.kspace
    key = (case.traj.coords.shape, float(case.traj.coords[0, -1, 0]), rate, n)
    plan, w = _PLANS.get(traj, n, key)
    coils = estimate_sensitivities(k, traj, n)
    prep = SpiralPrep(case.case_id, k, traj, plan, w, coils, 1.0)
    img = np.abs(prep.adjoint_image())
    scale = float(np.percentile(img, 99))
    if scale <= 0:
        raise ValueError(f"case {case.case_id}: empty adjoint image")
    prep.kspace = k / scale
    prep.scale = scale
    return prep


def new_network(cfg: ExperimentConfig, seed: int) -> UnrolledNetwork:
    return build_network("spiral", cfg.blocks, seed=seed, hidden=cfg.hidden)


def _check(loss: Tensor, case_id: str, epoch: int) -> float:
    value = loss.item()
    if not np.isfinite(value):
        raise FloatingPointError(f"training diverged: loss {value} on case {case_id} in epoch {epoch}")
    return value


def split_loss(net, prep: SpiralPrep, ratio: float, seed: int, pattern: str) -> Tensor:
    split = ssdu.split_readout(prep.kspace, ratio, seed, pattern)
    ctx_a, ctx_b = ssdu.split_contexts(split, prep.plan, prep.weights, prep.coils)
    return ssdu.ssdu_loss_spiral(net, prep.kspace, split, ctx_a, ctx_b)


def ssim_image_loss(net, prep: SpiralPrep, reference: np.ndarray) -> Tensor:
    """SSIM loss between ``|C^H f(F^H W y)|`` and ``|reference|`` (normalised units)."""
    ctx = prep.ctx
    x0 = Tensor(ops.pack(prep.adjoint_image()))
    out = net.reconstruct(x0, ctx)
    return ssim_loss(ops.magnitude(out, axis=0), np.abs(reference))


@dataclass
class TrainResult:
    net: UnrolledNetwork
    optimizer: Adam
    train_loss: list
    val_loss: list
    best_epoch: int


def _train(net, preps, val_preps, loss_fn, val_fn, epochs: int, lr: float, seed: int) -> TrainResult:
    params = net.parameters()
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng(seed)
    history, val_history = [], []
    best = (np.inf, -1, None)
    for epoch in range(epochs):
        total = 0.0
        for i in rng.permutation(len(preps)):
            with Tape() as tape:
                loss = loss_fn(preps[i], rng, epoch)
            total += _check(loss, preps[i].case_id, epoch)
            opt.step(tape.gradient(loss, params))
        history.append(total / len(preps))
        if val_preps:
            v = float(np.mean([val_fn(p).item() for p in val_preps]))
            val_history.append(v)
            if v < best[0]:
                best = (v, epoch, {k: p.data.copy() for k, p in params.items()})
    if best[2] is not None:
        for k, p in params.items():
            p.data = best[2][k]
    return TrainResult(net, opt, history, val_history, best[1] if best[2] is not None else epochs - 1)


def train_stage1(cfg: ExperimentConfig, train: list, val: list, seed: int | None = None) -> TrainResult:
    """Network A: readout-split loss on fully sampled noisy data."""
    seed = cfg.seed if seed is None else seed
    n = cfg.matrix_size
    preps = [prepare(c, n) for c in train]
    val_preps = [prepare(c, n) for c in val]
    net = new_network(cfg, seed)

    def loss_fn(prep, rng, epoch):
        return split_loss(net, prep, ssdu.sample_ratio(rng), int(rng.integers(2 ** 31)), cfg.split_pattern)

    def val_fn(prep):
        return split_loss(net, prep, 0.6, 12345, cfg.split_pattern)

    return _train(net, preps, val_preps, loss_fn, val_fn, cfg.epochs, cfg.lr_stage1, seed)


def infer(net: UnrolledNetwork, prep: SpiralPrep) -> np.ndarray:
    """Coil-combined reconstruction of a prepared case, in data units."""
    x0 = Tensor(ops.pack(prep.adjoint_image()))
    out = net.reconstruct(x0, prep.ctx)
    return ops.unpack(out.data) * prep.scale


def stage1_references(net: UnrolledNetwork, cases: list, n: int) -> dict:
    """Denoised fully sampled images (data units) keyed by case id."""
    return {c.case_id: infer(net, prepare(c, n)) for c in cases}


def noisy_references(cases: list, n: int) -> dict:
    """Plain adjoint reconstructions of the fully sampled noisy data."""
    out = {}
    for c in cases:
        p = prepare(c, n)
        out[c.case_id] = p.adjoint_image() * p.scale
    return out


def train_stage2(cfg: ExperimentConfig, method: str, rate: int, train: list, val: list,
                 references: dict | None = None, seed: int | None = None) -> TrainResult:
    """Network B (``hybrid``) or a baseline at acceleration ``rate``.

    ``references`` maps case ids to target images in data units: stage-1
    outputs for ``hybrid``, noisy adjoint images for ``supervised_noisy``;
    ``selfsup`` ignores it.  Validation cases need references too.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    seed = cfg.seed if seed is None else seed
    n = cfg.matrix_size
    preps = [prepare(c, n, rate) for c in train]
    val_preps = [prepare(c, n, rate) for c in val]
    net = new_network(cfg, seed)
    if method == "selfsup":
        def loss_fn(prep, rng, epoch):
            return split_loss(net, prep, ssdu.sample_ratio(rng), int(rng.integers(2 ** 31)), cfg.split_pattern)

        def val_fn(prep):
            return split_loss(net, prep, 0.6, 12345, cfg.split_pattern)
    else:
        if references is None:
            raise ValueError(f"method {method!r} needs reference images")

        def loss_fn(prep, rng, epoch):
            return ssim_image_loss(net, prep, references[prep.case_id] / prep.scale)

        val_fn = lambda prep: ssim_image_loss(net, prep, references[prep.case_id] / prep.scale)  # noqa: E731
    return _train(net, preps, val_preps, loss_fn, val_fn, cfg.stage2_epochs, cfg.lr_stage2, seed)
