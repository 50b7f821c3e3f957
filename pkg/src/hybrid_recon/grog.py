"""Self-calibrating GRAPPA operator gridding of radial multi-coil data.

Unit k-space shifts along x and y are modelled as coil-mixing matrices
``G_x = exp(L_x)`` and ``G_y = exp(L_y)``.  A shift along a spoke at angle
``theta`` by one grid unit is ``exp(cos(theta) L_x + sin(theta) L_y)``, which
is what each spoke calibrates.  Fractional powers use the eigendecomposition
of the generators, so ``G^a G^b = G^(a+b)`` holds exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trajectories import Trajectory

CONDITION_LIMIT = 1e-8
RIDGE = 1e-9


@dataclass(frozen=True)
class GrogOperators:
    """Generators ``L_x``, ``L_y`` (coil x coil) with cached eigendecompositions."""

    Lx: np.ndarray
    Ly: np.ndarray

    def __post_init__(self):
        for name in ("x", "y"):
            L = getattr(self, "L" + name)
            lam, V = np.linalg.eig(L)
            if np.linalg.cond(V) > 1.0 / CONDITION_LIMIT:
                raise ValueError(f"G_{name} generator is not diagonalisable")
            object.__setattr__(self, "_eig_" + name, (lam, V, np.linalg.inv(V)))

    @property
    def ncoils(self) -> int:
        return self.Lx.shape[0]

    def power(self, axis: str, delta: float) -> np.ndarray:
        """``G_axis ** delta`` as a matrix."""
        lam, V, Vi = getattr(self, "_eig_" + axis)
        return (V * np.exp(delta * lam)) @ Vi

    def shift(self, samples: np.ndarray, axis: str, delta: np.ndarray) -> np.ndarray:
        """Apply ``G_axis ** delta[i]`` to each row ``samples[i]`` (shape ``(m, C)``)."""
        lam, V, Vi = getattr(self, "_eig_" + axis)
        t = samples @ Vi.T
        t *= np.exp(np.asarray(delta)[:, None] * lam[None, :])
        return t @ V.T

    @property
    def Gx(self) -> np.ndarray:
        return self.power("x", 1.0)

    @property
    def Gy(self) -> np.ndarray:
        return self.power("y", 1.0)


def _principal_log(G: np.ndarray) -> np.ndarray:
    mu, V = np.linalg.eig(G)
    mag = np.abs(mu)
    if mag.min() < CONDITION_LIMIT * mag.max() or np.linalg.cond(V) > 1.0 / CONDITION_LIMIT:
        raise np.linalg.LinAlgError("ill-conditioned spoke operator")
    return (V * np.log(mu)) @ np.linalg.inv(V)


def spoke_operator(spoke: np.ndarray, ridge: float = RIDGE) -> np.ndarray:
    """Least-squares ``G`` with ``spoke[:, j+1] ~ G spoke[:, j]`` (spoke is ``C x S``)."""
    X, Y = spoke[:, :-1], spoke[:, 1:]
    C = X.shape[0]
    # ridge-augmented least squares on Y^T = X^T G^T (avoids squaring cond(X))
    lam = ridge * np.sum(np.abs(X) ** 2) / C
    A = np.concatenate([X.T, np.sqrt(lam) * np.eye(C)])
    B = np.concatenate([Y.T, np.zeros((C, C))])
    return np.linalg.lstsq(A, B, rcond=None)[0].T


def _spoke_step(traj: Trajectory, n: int) -> np.ndarray:
    """Per-spoke displacement between neighbouring samples, in grid units."""
    return np.mean(np.diff(traj.coords, axis=1), axis=1) * n


def calibrate_grog(samples: np.ndarray, traj: Trajectory, n: int, ridge: float = RIDGE) -> GrogOperators:
    """Estimate ``G_x``, ``G_y`` from the spokes themselves.

    Parameters
    ----------
    samples : ndarray, shape (coils, spokes, samples_per_spoke)
    traj : Trajectory
        Radial trajectory matching ``samples``.
    n : int
        Cartesian matrix size; grid spacing is ``1/n`` cycles/pixel.
    """
    samples = np.asarray(samples)
    if samples.ndim != 3 or samples.shape[1:] != traj.coords.shape[:2]:
        raise ValueError(f"samples {samples.shape} incongruent with trajectory {traj.coords.shape[:2]}")
    ncoil = samples.shape[0]
    if ncoil < 2:
        raise ValueError("GROG needs at least 2 coils; use grog_grid(..., ops=None) for nearest-neighbour gridding")
    step = _spoke_step(traj, n)
    logs, dirs = [], []
    for j in range(samples.shape[1]):
        try:
            logs.append(_principal_log(spoke_operator(samples[:, j], ridge)).ravel())
        except np.linalg.LinAlgError:
            continue
        dirs.append(step[j])
    if len(dirs) < 2:
        raise ValueError("GROG calibration rank-deficient: fewer than 2 usable spokes")
    A = np.asarray(dirs)
    if np.linalg.matrix_rank(A, tol=1e-6) < 2:
        raise ValueError("GROG calibration rank-deficient: spokes span a single direction")
    sol, *_ = np.linalg.lstsq(A.astype(np.complex128), np.asarray(logs), rcond=None)
    return GrogOperators(sol[0].reshape(ncoil, ncoil), sol[1].reshape(ncoil, ncoil))


@dataclass(frozen=True)
class ShiftedSamples:
    """Samples moved onto their nearest cells, ready for (sub)set deposits.

    ``values`` is ``(coils, m)``; ``cell`` flat cell index; ``frame`` per sample;
    ``weight`` the triangular distance weight ``(1-|dx|)(1-|dy|)``.
    """

    values: np.ndarray
    cell: np.ndarray
    frame: np.ndarray
    weight: np.ndarray
    n: int
    n_frames: int


@dataclass(frozen=True)
class GriddedKSpace:
    """Cartesian k-space ``(T, C, N, N)``, occupancy ``mask`` and ``weights`` ``(T, N, N)``."""

    kspace: np.ndarray
    mask: np.ndarray
    weights: np.ndarray


def grog_shift(samples: np.ndarray, traj: Trajectory, n: int, ops: GrogOperators | None) -> ShiftedSamples:
    """Shift every sample to its nearest Cartesian cell (y shift, then x shift).

    With ``ops=None`` the samples are deposited unshifted (nearest neighbour).
    Values are scaled by ``1/n`` so that the grid matches the orthonormal FFT.
    """
    samples = np.asarray(samples)
    if samples.shape[1:] != traj.coords.shape[:2]:
        raise ValueError(f"samples {samples.shape} incongruent with trajectory {traj.coords.shape[:2]}")
    ncoil = samples.shape[0]
    pos = traj.flat * n
    near = np.round(pos)
    delta = near - pos
    vals = samples.reshape(ncoil, -1).T
    if ops is not None:
        if ops.ncoils != ncoil:
            raise ValueError(f"operators calibrated for {ops.ncoils} coils, data has {ncoil}")
        vals = ops.shift(vals, "y", delta[:, 1])
        vals = ops.shift(vals, "x", delta[:, 0])
    idx = np.mod(near.astype(int) + n // 2, n)
    frame = np.zeros(traj.readout_count, dtype=int) if traj.frame is None else traj.frame
    frame = np.repeat(frame, traj.samples_per_readout)
    weight = (1.0 - np.abs(delta[:, 0])) * (1.0 - np.abs(delta[:, 1]))
    return ShiftedSamples(np.ascontiguousarray(vals.T) / n, idx[:, 0] * n + idx[:, 1], frame,
                          weight, n, int(frame.max()) + 1)


def deposit(shifted: ShiftedSamples, keep: np.ndarray | None = None) -> GriddedKSpace:
    """Weighted average of the (kept) shifted samples per cell and frame.

    ``W`` is the mean triangular weight of the samples landing in a cell, so
    ``0 < W <= 1`` on occupied cells and ``W = 0`` elsewhere.
    """
    n, T = shifted.n, shifted.n_frames
    sel = slice(None) if keep is None else np.asarray(keep).ravel()
    vals = shifted.values[:, sel]
    w = shifted.weight[sel]
    slot = shifted.frame[sel] * n * n + shifted.cell[sel]
    size = T * n * n
    wsum = np.bincount(slot, weights=w, minlength=size)
    count = np.bincount(slot, minlength=size).astype(np.float64)
    ncoil = vals.shape[0]
    k = np.empty((ncoil, size), dtype=np.complex128)
    safe = np.where(wsum > 0, wsum, 1.0)
    for c in range(ncoil):
        re = np.bincount(slot, weights=w * vals[c].real, minlength=size)
        im = np.bincount(slot, weights=w * vals[c].imag, minlength=size)
        k[c] = (re + 1j * im) / safe
    mask = count > 0
    weights = np.where(mask, wsum / np.maximum(count, 1.0), 0.0)
    kspace = np.moveaxis(k.reshape(ncoil, T, n, n), 0, 1)
    return GriddedKSpace(kspace, mask.reshape(T, n, n), weights.reshape(T, n, n))


def grog_grid(samples: np.ndarray, traj: Trajectory, n: int, ops: GrogOperators | None) -> GriddedKSpace:
    """Grid radial samples ``(coils, spokes, samples)`` to ``(T, C, n, n)``."""
    return deposit(grog_shift(samples, traj, n, ops))
