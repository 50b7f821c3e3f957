"""Spiral and golden-angle radial k-space trajectories.

Coordinates are in cycles/pixel, so the sampled disk has radius 0.5.  A
trajectory is organised by readout (spiral interleaf or radial spoke); all
readouts have the same number of samples.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

GOLDEN_ANGLE_DEG = 180.0 * (np.sqrt(5.0) - 1.0) / 2.0  # 111.246...


@dataclass(frozen=True)
class Trajectory:
    """Non-Cartesian sample locations.

    Attributes
    ----------
    coords : ndarray, shape (n_readouts, n_samples, 2)
        (kx, ky) per sample in cycles/pixel.
    kind : str
        ``"spiral"`` or ``"radial"``.
    angles : ndarray, shape (n_readouts,)
        Rotation angle of each readout (radians).
    frame : ndarray of int, optional
        Time-frame index per readout (dynamic data).
    repetition : ndarray of int, optional
        Inversion-recovery repetition index per readout.
    turns : float
        Spiral turns per interleaf (0 for radial).
    """

    coords: np.ndarray
    kind: str
    angles: np.ndarray
    frame: np.ndarray | None = None
    repetition: np.ndarray | None = None
    turns: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.coords.ndim != 3 or self.coords.shape[-1] != 2:
            raise ValueError(f"coords must be (readouts, samples, 2), got {self.coords.shape}")
        if np.any(np.abs(self.coords) > 0.5 + 1e-12):
            raise ValueError("trajectory coordinates must lie within [-0.5, 0.5]")

    @property
    def readout_count(self) -> int:
        return self.coords.shape[0]

    @property
    def samples_per_readout(self) -> int:
        return self.coords.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.coords.reshape(-1, 2)

    @property
    def n_frames(self) -> int:
        return 1 if self.frame is None else int(self.frame.max()) + 1


def gen_spiral(interleaves: int, samples_per_readout: int, matrix_size: int,
               turns: float | None = None) -> Trajectory:
    """Uniform Archimedean spiral, arms rotated by ``2*pi/interleaves``.

    The radius grows linearly from 0 to 0.5 along each arm.  By default the
    number of turns puts adjacent arms exactly one Nyquist step
    (``1/matrix_size``) apart at full sampling.
    """
    if interleaves < 1 or samples_per_readout < 2 or matrix_size < 2:
        raise ValueError("interleaves >= 1, samples_per_readout >= 2 and matrix_size >= 2 required")
    if turns is None:
        turns = matrix_size / (2.0 * interleaves)
    s = np.linspace(0.0, 1.0, samples_per_readout)
    radius = 0.5 * s
    theta = 2.0 * np.pi * turns * s
    rot = 2.0 * np.pi * np.arange(interleaves) / interleaves
    phi = theta[None, :] + rot[:, None]
    coords = np.stack([radius * np.cos(phi), radius * np.sin(phi)], axis=-1)
    coords = np.clip(coords, -0.5, 0.5)
    return Trajectory(coords=coords, kind="spiral", angles=rot, turns=float(turns),
                      meta={"interleaves_total": interleaves})


def golden_angles(n: int) -> np.ndarray:
    """Spoke angles (radians) of the first ``n`` golden-angle spokes."""
    return np.deg2rad(GOLDEN_ANGLE_DEG) * np.arange(n)


def gen_golden_radial(spokes_per_repetition: int, repetitions: int, samples_per_spoke: int,
                      spokes_per_frame: int | None = None) -> Trajectory:
    """Diametric golden-angle spokes, continuing the rotation across repetitions.

    Sample ``j`` of a spoke sits at radius ``(j - S/2)/S``, so sample ``S/2``
    is the k-space centre.  When ``spokes_per_frame`` is given, spoke ``i``
    of each repetition belongs to time frame ``i // spokes_per_frame``.
    """
    if min(spokes_per_repetition, repetitions, samples_per_spoke) < 1:
        raise ValueError("all radial trajectory parameters must be >= 1")
    n = spokes_per_repetition * repetitions
    ang = golden_angles(n)
    r = (np.arange(samples_per_spoke) - samples_per_spoke // 2) / samples_per_spoke
    coords = np.stack([r[None, :] * np.cos(ang)[:, None], r[None, :] * np.sin(ang)[:, None]], axis=-1)
    within = np.tile(np.arange(spokes_per_repetition), repetitions)
    frame = within // spokes_per_frame if spokes_per_frame else np.zeros(n, dtype=int)
    rep = np.repeat(np.arange(repetitions), spokes_per_repetition)
    return Trajectory(coords=coords, kind="radial", angles=ang, frame=frame.astype(int),
                      repetition=rep, meta={"spokes_per_repetition": spokes_per_repetition})


def density_compensation(traj: Trajectory) -> np.ndarray:
    """Analytic density compensation weights, shape ``(n_readouts, n_samples)``.

    Radial: ramp ``|k|`` with the centre sample floored at a quarter of the
    readout step.  Spiral: the area each sample covers, i.e. the step
    perpendicular to the radius times the radial gap to the neighbouring
    arms (which depends on each arm's angular gaps after undersampling).
    Weights are scaled to sum to the area of the sampled disk, so that
    ``F^H W F`` has unit gain on band-limited images.
    """
    k = traj.coords
    if np.ptp(traj.flat, axis=0).max() == 0.0:
        raise ValueError("degenerate trajectory: all samples coincide")
    r = np.linalg.norm(k, axis=-1)
    if traj.kind == "radial":
        step = np.median(np.linalg.norm(np.diff(k, axis=1), axis=-1))
        w = np.maximum(r, step / 4.0)
    elif traj.kind == "spiral":
        # perpendicular (azimuthal) component of the local readout step
        dk = np.gradient(k, axis=1)
        perp = np.abs(k[..., 0] * dk[..., 1] - k[..., 1] * dk[..., 0]) / np.maximum(r, 1e-300)
        ang = np.mod(traj.angles, 2.0 * np.pi)
        order = np.argsort(ang)
        srt = ang[order]
        gaps = np.diff(np.concatenate([srt, srt[:1] + 2.0 * np.pi]))
        if gaps.size == 1:
            gaps = np.array([2.0 * np.pi])
        arm_gap = np.empty_like(ang)
        arm_gap[order] = 0.5 * (gaps + np.roll(gaps, 1))
        # radial distance between neighbouring arms: (dr/dtheta) * angular gap
        drdtheta = 0.5 / (2.0 * np.pi * traj.turns) if traj.turns > 0 else 0.5
        w = perp * drdtheta * arm_gap[:, None]
        centre = r < 1e-12
        if np.any(centre):
            first = np.linalg.norm(k[:, 1], axis=-1).mean()
            w[centre] = np.pi * (first / 2.0) ** 2 / max(int(centre.sum()), 1)
    else:
        raise ValueError(f"unknown trajectory kind {traj.kind!r}")
    w = np.clip(w, 0.0, None)
    area = np.pi * r.max() ** 2
    return w * (area / w.sum())


def spiral_keep(n_interleaves: int, rate: int) -> np.ndarray:
    """Interleaf indices retained at acceleration ``rate`` (every rate-th arm)."""
    if rate < 1:
        raise ValueError("acceleration rate must be >= 1")
    return np.arange(0, n_interleaves, rate)


def repetition_keep(traj: Trajectory, n_repetitions: int) -> np.ndarray:
    """Readout indices belonging to the first ``n_repetitions`` IR repetitions."""
    if traj.repetition is None:
        raise ValueError("trajectory has no repetition labels")
    return np.flatnonzero(traj.repetition < n_repetitions)


def undersample(data_or_traj, keep, axis: int = -2):
    """Restrict to the readouts listed in ``keep`` (order preserved).

    Works on a :class:`Trajectory`, on a per-readout array (``axis`` selects
    the readout axis; k-space data is ``(coils, readouts, samples)``) or on a
    density-compensation array.
    """
    keep = np.asarray(keep, dtype=int).ravel()
    if keep.size == 0:
        raise ValueError("undersample: empty keep set")
    if isinstance(data_or_traj, Trajectory):
        t = data_or_traj
        if keep.min() < 0 or keep.max() >= t.readout_count:
            raise IndexError("undersample: readout index out of range")
        return replace(
            t, coords=t.coords[keep], angles=t.angles[keep],
            frame=None if t.frame is None else t.frame[keep],
            repetition=None if t.repetition is None else t.repetition[keep],
            meta=dict(t.meta),
        )
    arr = np.asarray(data_or_traj)
    n = arr.shape[axis]
    if keep.min() < 0 or keep.max() >= n:
        raise IndexError("undersample: readout index out of range")
    return np.take(arr, keep, axis=axis)
