"""Simulated datasets and the access-audited store of ground truth.

Datasets hold only what a scanner would deliver (k-space, trajectory,
timing).  Ground truth lives in a :class:`TruthStore` that only the
``evaluate`` step may read; every access is logged.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import phantom
from ..coils import gen_coil_sensitivities
from ..nufft import make_plan, nufft_forward
from ..subspace import ir_frame_times
from ..trajectories import Trajectory, density_compensation, gen_golden_radial, gen_spiral
from .config import ExperimentConfig
from .container import read_array, write_array

SPLITS = {"train": 0, "val": 1, "test": 2}


class TruthAccessError(PermissionError):
    pass


@dataclass
class TruthStore:
    """Ground-truth arrays keyed by ``(case, name)``; reads are audited."""

    allowed: frozenset = frozenset({"evaluate"})
    _data: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    def put(self, case: str, name: str, value: np.ndarray) -> None:
        self._data[(case, name)] = np.asarray(value)

    def get(self, case: str, name: str, caller: str) -> np.ndarray:
        self.log.append((caller, case, name))
        if caller not in self.allowed:
            raise TruthAccessError(f"{caller!r} may not read ground truth ({case}/{name})")
        return self._data[(case, name)]

    def cases(self) -> list:
        return sorted({c for c, _ in self._data})

    def save(self, directory) -> None:
        directory = Path(directory)
        for (case, name), value in self._data.items():
            write_array(directory / case / f"{name}.hrc", value)

    @classmethod
    def load(cls, directory) -> "TruthStore":
        store = cls()
        for path in sorted(Path(directory).glob("*/*.hrc")):
            store.put(path.parent.name, path.stem, read_array(path))
        return store


@dataclass
class SpiralCase:
    case_id: str
    kspace: np.ndarray  # (coils, interleaves, samples)
    traj: Trajectory


@dataclass
class RadialCase:
    case_id: str
    kspace: np.ndarray  # (coils, spokes, samples)
    traj: Trajectory
    times: np.ndarray  # inversion time per frame (ms)


def case_seed(cfg: ExperimentConfig, split: str, index: int) -> int:
    """Independent, reproducible seed per case."""
    return int(np.random.SeedSequence([cfg.seed, SPLITS[split], index]).generate_state(1)[0])


def case_ids(cfg: ExperimentConfig, split: str) -> list:
    n = {"train": cfg.train_cases, "val": cfg.val_cases, "test": cfg.test_cases}[split]
    return [f"{split}{i:03d}" for i in range(n)]


def spiral_trajectory(cfg: ExperimentConfig) -> Trajectory:
    return gen_spiral(cfg.interleaves, cfg.samples_per_readout, cfg.matrix_size)


def simulate_lung(cfg: ExperimentConfig, split: str, truth: TruthStore) -> list:
    """Fully sampled noisy multi-coil spiral data of lung-like phantoms."""
    n = cfg.matrix_size
    traj = spiral_trajectory(cfg)
    plan = make_plan(traj, n)
    cases = []
    for i, cid in enumerate(case_ids(cfg, split)):
        seed = case_seed(cfg, split, i)
        img = phantom.gen_static_phantom(phantom.lung_phantom_spec(n, seed))
        maps = gen_coil_sensitivities(cfg.coils, n, seed=seed)
        y = nufft_forward(img[None] * maps, plan).reshape(cfg.coils, traj.readout_count, -1)
        y = phantom.add_complex_noise(y, cfg.noise_sigma, seed + 1)
        truth.put(cid, "image", img)
        cases.append(SpiralCase(cid, y, traj))
    return cases


def radial_trajectory(cfg: ExperimentConfig) -> Trajectory:
    return gen_golden_radial(cfg.spokes_per_repetition, cfg.repetitions, cfg.matrix_size,
                             spokes_per_frame=cfg.spokes_per_frame)


def simulate_t1map(cfg: ExperimentConfig, split: str, truth: TruthStore) -> list:
    """Golden-angle radial IR Look-Locker data of brain-like T1 phantoms."""
    n = cfg.matrix_size
    traj = radial_trajectory(cfg)
    times = ir_frame_times(cfg.spokes_per_repetition, cfg.spokes_per_frame, cfg.tr)
    plans = [make_plan(traj.coords[traj.frame == f], n) for f in range(times.size)]
    cases = []
    for i, cid in enumerate(case_ids(cfg, split)):
        seed = case_seed(cfg, split, i)
        spec = phantom.brain_phantom_spec(n, seed)
        series, t1, m0 = phantom.gen_ir_series(spec, times, cfg.flip_angle, cfg.tr)
        maps = gen_coil_sensitivities(cfg.coils, n, seed=seed)
        y = np.zeros((cfg.coils, traj.readout_count, n), dtype=np.complex128)
        for f, plan in enumerate(plans):
            sel = traj.frame == f
            y[:, sel] = nufft_forward(series[f][None] * maps, plan).reshape(cfg.coils, int(sel.sum()), n)
        y = phantom.add_complex_noise(y, cfg.noise_sigma, seed + 1)
        truth.put(cid, "t1", t1)
        truth.put(cid, "series", series)
        cases.append(RadialCase(cid, y, traj, times))
    return cases


def simulate(cfg: ExperimentConfig, truth: TruthStore | None = None):
    """All splits of the configured experiment: ``({split: cases}, truth)``."""
    truth = TruthStore() if truth is None else truth
    sim = simulate_lung if cfg.experiment == "lung" else simulate_t1map
    return {s: sim(cfg, s, truth) for s in SPLITS}, truth


def save_cases(cases: dict, directory) -> None:
    directory = Path(directory)
    for split, items in cases.items():
        for c in items:
            write_array(directory / split / f"{c.case_id}.kspace.hrc", c.kspace.astype(np.complex64))


def load_cases(cfg: ExperimentConfig, directory) -> dict:
    """Read k-space written by :func:`save_cases`; trajectories are regenerated from ``cfg``."""
    directory = Path(directory)
    out = {}
    traj = spiral_trajectory(cfg) if cfg.experiment == "lung" else radial_trajectory(cfg)
    times = ir_frame_times(cfg.spokes_per_repetition, cfg.spokes_per_frame, cfg.tr)
    for split in SPLITS:
        items = []
        for cid in case_ids(cfg, split):
            k = read_array(directory / split / f"{cid}.kspace.hrc").astype(np.complex128)
            if cfg.experiment == "lung":
                items.append(SpiralCase(cid, k, traj))
            else:
                items.append(RadialCase(cid, k, traj, times))
        out[split] = items
    return out


def spiral_weights(traj: Trajectory) -> np.ndarray:
    return density_compensation(traj).ravel()
