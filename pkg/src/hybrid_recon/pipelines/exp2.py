"""Radial IR T1-mapping experiment (brain-like phantoms) in a temporal subspace.

Stage 1 uses all repetitions: Recon Network A is trained with the split loss
inside the subspace and Fitting Network A with the model-consistency loss on
its reconstructions.  Stage 2 keeps only the first few repetitions and
trains Recon Network B (SSIM against the stage-1 series) and Fitting Network
B (L1 against the stage-1 parameters).  The ``selfsup`` baseline repeats
stage 1's losses on the reduced data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import ssdu
from ..coils import estimate_sensitivities
from ..diffcore import Adam, Tape, Tensor, ops, ssim_loss
from ..fitting import (FittingNetwork, ModelParams, T1Map, fit_network_selfsup_train,
                       fit_network_sup_train, signed_curves)
from ..grog import ShiftedSamples, calibrate_grog, deposit, grog_shift
from ..subspace import (TemporalBasis, build_dictionary, default_t1_grid, expand, extract_basis,
                        initial_coefficients, precompute_Mk)
from ..trajectories import Trajectory, repetition_keep, undersample
from ..unrolled import SubspaceContext, UnrolledNetwork, build_network
from .config import ExperimentConfig
from .data import RadialCase
from .exp1 import TrainResult, _train

METHODS = ("hybrid", "selfsup")
SUPPORT_FRACTION = 0.15


def temporal_basis(cfg: ExperimentConfig, times) -> TemporalBasis:
    d = build_dictionary(default_t1_grid(), times, cfg.flip_angle, cfg.tr)
    return extract_basis(d, cfg.components)


@dataclass
class RadialPrep:
    """Gridded, normalised data of one case at one repetition budget."""

    case_id: str
    shifted: ShiftedSamples
    coils: np.ndarray
    x0_multi: np.ndarray  # (K, C, n, n) multi-coil subspace images
    Mk: np.ndarray
    split_shape: tuple  # (readouts, samples) for the split
    scale: float

    @property
    def ctx(self) -> SubspaceContext:
        return SubspaceContext(self.Mk, self.coils)

    def x0(self) -> np.ndarray:
        return self.ctx.combine(self.x0_multi)


def prepare(case: RadialCase, cfg: ExperimentConfig, U, repetitions: int | None = None) -> RadialPrep:
    """Keep the first ``repetitions`` IR repetitions, estimate coils, GROG-grid and compress."""
    n = cfg.matrix_size
    traj: Trajectory = case.traj
    k = case.kspace
    if repetitions is not None and repetitions < int(traj.repetition.max()) + 1:
        keep = repetition_keep(traj, repetitions)
        traj = undersample(traj, keep)
        k = undersample(k, keep, axis=1)
    coils = estimate_sensitivities(k, traj, n)
    ops_ = calibrate_grog(k, traj, n)
    shifted = grog_shift(k, traj, n, ops_)
    g = deposit(shifted)
    x0_multi = initial_coefficients(g.kspace, U, g.weights)
    Mk = precompute_Mk(U, g.mask, g.weights)
    combined = np.sum(np.conj(coils)[None] * x0_multi, axis=1)
    scale = float(np.percentile(np.sqrt(np.sum(np.abs(combined) ** 2, axis=0)), 99))
    if scale <= 0:
        raise ValueError(f"case {case.case_id}: empty adjoint image")
    shifted = ShiftedSamples(shifted.values / scale, shifted.cell, shifted.frame, shifted.weight,
                             shifted.n, shifted.n_frames)
    return RadialPrep(case.case_id, shifted, coils, x0_multi / scale, Mk, traj.coords.shape[:2], scale)


def new_network(cfg: ExperimentConfig, seed: int) -> UnrolledNetwork:
    return build_network("subspace", cfg.blocks, seed=seed, components=cfg.components, hidden=cfg.hidden)


def split_loss(net, prep: RadialPrep, U, ratio: float, seed: int, pattern: str) -> Tensor:
    split = ssdu.split_readout(prep.split_shape, ratio, seed, pattern)
    parts = ssdu.subspace_split(prep.shifted, split, U, prep.coils)
    return ssdu.ssdu_loss_subspace(net, parts)


def series_ssim_loss(net, prep: RadialPrep, U, reference: np.ndarray) -> Tensor:
    """SSIM loss between ``U C^H f(...)`` and a reference series (packed real/imag)."""
    out = net.reconstruct(Tensor(ops.pack(prep.x0())), prep.ctx)
    series = ops.complex_linear(out, lambda v: expand(v, U), lambda s: np.tensordot(U.T, s, axes=(1, 0)),
                                name="expand_time")
    return ssim_loss(series, ops.pack(reference))


def infer(net: UnrolledNetwork, prep: RadialPrep, U) -> np.ndarray:
    """Reconstructed complex series ``(T, n, n)`` in data units."""
    out = net.reconstruct(Tensor(ops.pack(prep.x0())), prep.ctx)
    return expand(ops.unpack(out.data), U) * prep.scale


def support_mask(series: np.ndarray, coils: np.ndarray) -> np.ndarray:
    """Pixels with coil coverage and a recovered signal above a fraction of the maximum."""
    last = np.abs(series[-1])
    return (np.abs(coils).sum(axis=0) > 0) & (last > SUPPORT_FRACTION * last.max())


def train_recon_stage1(cfg: ExperimentConfig, U, train: list, val: list, repetitions: int | None = None,
                       seed: int | None = None) -> tuple:
    """Recon Network A (or the self-supervised baseline when ``repetitions`` is set)."""
    seed = cfg.seed if seed is None else seed
    preps = [prepare(c, cfg, U, repetitions) for c in train]
    val_preps = [prepare(c, cfg, U, repetitions) for c in val]
    net = new_network(cfg, seed)

    def loss_fn(prep, rng, epoch):
        return split_loss(net, prep, U, ssdu.sample_ratio(rng), int(rng.integers(2 ** 31)), cfg.split_pattern)

    def val_fn(prep):
        return split_loss(net, prep, U, 0.6, 12345, cfg.split_pattern)

    return _train(net, preps, val_preps, loss_fn, val_fn, cfg.epochs, cfg.lr_stage1, seed), preps


def train_recon_stage2(cfg: ExperimentConfig, U, train: list, val: list, repetitions: int,
                       references: dict, seed: int | None = None) -> tuple:
    """Recon Network B: SSIM against stage-1 series (``references`` in data units)."""
    seed = cfg.seed if seed is None else seed
    preps = [prepare(c, cfg, U, repetitions) for c in train]
    val_preps = [prepare(c, cfg, U, repetitions) for c in val]
    net = new_network(cfg, seed)

    def loss_fn(prep, rng, epoch):
        return series_ssim_loss(net, prep, U, references[prep.case_id] / prep.scale)

    def val_fn(prep):
        return series_ssim_loss(net, prep, U, references[prep.case_id] / prep.scale)

    return _train(net, preps, val_preps, loss_fn, val_fn, cfg.stage2_epochs, cfg.lr_stage2, seed), preps


def collect_curves(series_by_case: dict, masks: dict) -> np.ndarray:
    return np.concatenate([signed_curves(series_by_case[c])[masks[c]] for c in sorted(series_by_case)])


def train_fitting_selfsup(cfg: ExperimentConfig, curves: np.ndarray, times, seed: int | None = None):
    seed = cfg.seed if seed is None else seed
    net = FittingNetwork(len(times), seed=seed)
    hist = fit_network_selfsup_train(net, curves, times, epochs=cfg.fit_epochs, batch=cfg.fit_batch,
                                     lr=cfg.lr_fit, seed=seed)
    return net, hist


def train_fitting_supervised(cfg: ExperimentConfig, curves: np.ndarray, p_ref: ModelParams, times,
                             seed: int | None = None):
    seed = cfg.seed if seed is None else seed
    net = FittingNetwork(len(times), seed=seed)
    hist = fit_network_sup_train(net, curves, p_ref, epochs=cfg.fit_epochs, batch=cfg.fit_batch,
                                 lr=cfg.lr_fit, seed=seed)
    return net, hist


def t1_from_series(fit_net: FittingNetwork, series: np.ndarray) -> T1Map:
    return fit_net.predict_t1(signed_curves(series))


@dataclass
class Stage1Outputs:
    recon: TrainResult
    fit: FittingNetwork
    series: dict  # case id -> reconstructed series (data units)
    masks: dict
    params: dict  # case id -> ModelParams over the masked pixels


def run_stage1(cfg: ExperimentConfig, U, times, train: list, val: list) -> Stage1Outputs:
    """Recon Network A, Fitting Network A and the references they produce for stage 2."""
    recon, preps = train_recon_stage1(cfg, U, train, val)
    series = {p.case_id: infer(recon.net, p, U) for p in preps}
    val_preps = [prepare(c, cfg, U) for c in val]
    series.update({p.case_id: infer(recon.net, p, U) for p in val_preps})
    masks = {p.case_id: support_mask(series[p.case_id], p.coils) for p in preps + val_preps}
    train_ids = {p.case_id for p in preps}
    curves = collect_curves({c: series[c] for c in train_ids}, masks)
    fit, _ = train_fitting_selfsup(cfg, curves, times)
    params = {c: fit.predict(signed_curves(series[c])[masks[c]]) for c in series}
    return Stage1Outputs(recon, fit, series, masks, params)


@dataclass
class Stage2Outputs:
    recon: TrainResult
    fit: FittingNetwork
    method: str
    repetitions: int


def run_stage2(cfg: ExperimentConfig, U, times, method: str, repetitions: int, train: list, val: list,
               stage1: Stage1Outputs | None = None) -> Stage2Outputs:
    """Hybrid stage 2 or the self-supervised baseline at a repetition budget."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if method == "hybrid":
        if stage1 is None:
            raise ValueError("hybrid training needs stage-1 outputs")
        recon, preps = train_recon_stage2(cfg, U, train, val, repetitions, stage1.series)
        series = {p.case_id: infer(recon.net, p, U) for p in preps}
        ids = sorted(series)
        curves = np.concatenate([signed_curves(series[c])[stage1.masks[c]] for c in ids])
        p_ref = ModelParams(*(np.concatenate([getattr(stage1.params[c], f) for c in ids])
                              for f in ("A", "B", "t1_star")))
        fit, _ = train_fitting_supervised(cfg, curves, p_ref, times)
    else:
        recon, preps = train_recon_stage1(cfg, U, train, val, repetitions)
        series = {p.case_id: infer(recon.net, p, U) for p in preps}
        masks = {p.case_id: support_mask(series[p.case_id], p.coils) for p in preps}
        fit, _ = train_fitting_selfsup(cfg, collect_curves(series, masks), times)
    return Stage2Outputs(recon, fit, method, repetitions)


def predict_t1(recon_net: UnrolledNetwork, fit_net: FittingNetwork, case: RadialCase, cfg: ExperimentConfig,
               U, repetitions: int | None = None) -> tuple:
    """``(series, T1Map)`` for a test case."""
    prep = prepare(case, cfg, U, repetitions)
    series = infer(recon_net, prep, U)
    return series, t1_from_series(fit_net, series)
