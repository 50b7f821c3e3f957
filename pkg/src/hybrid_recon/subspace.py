"""Look-Locker dictionaries, temporal subspace bases and the subspace DC operator.

Array layouts: time series ``(T, ...)``, subspace coefficients ``(K, ...)``,
per-pixel operator ``(K, K, N, N)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nufft import fft2c, ifft2c

TR_MS = 3.67
FLIP_ANGLE_DEG = 5.0
PARTITIONS = 32


def look_locker_params(t1, flip_angle_deg: float, tr: float):
    """Map true T1 (ms) to ``(A, B, T1*)`` for unit equilibrium magnetization.

    ``1/T1* = 1/T1 - ln(cos(flip))/TR``, ``A = T1*/T1`` and ``B = 1 + A``, so
    ``(B/A - 1) * T1*`` returns ``T1`` exactly.
    """
    t1 = np.asarray(t1, dtype=np.float64)
    if np.any(t1 <= 0):
        raise ValueError("T1 must be positive")
    rate = 1.0 / t1 - np.log(np.cos(np.deg2rad(flip_angle_deg))) / tr
    t1_star = 1.0 / rate
    a = t1_star / t1
    return a, 1.0 + a, t1_star


def ir_frame_times(spokes_per_repetition: int = 48, spokes_per_frame: int = 4,
                   tr: float = TR_MS, partitions: int = PARTITIONS) -> np.ndarray:
    """Inversion time (ms) at the centre of each frame of one IR repetition.

    Each radial stack takes ``partitions * tr`` ms; frame ``f`` groups stacks
    ``f*spf ... (f+1)*spf - 1`` and is timed at its middle stack.
    """
    if spokes_per_repetition % spokes_per_frame:
        raise ValueError("spokes_per_frame must divide spokes_per_repetition")
    tau = partitions * tr
    n_frames = spokes_per_repetition // spokes_per_frame
    return (np.arange(n_frames) * spokes_per_frame + 0.5 * (spokes_per_frame - 1) + 0.5) * tau


def default_t1_grid() -> np.ndarray:
    return np.arange(100.0, 3000.0 + 2.5, 5.0)


@dataclass(frozen=True)
class SignalDictionary:
    atoms: np.ndarray  # (n_atoms, T)
    t1: np.ndarray
    times: np.ndarray
    flip_angle: float
    tr: float


def build_dictionary(t1_grid, times, flip_angle: float = FLIP_ANGLE_DEG, tr: float = TR_MS) -> SignalDictionary:
    """Real IR Look-Locker atoms ``A - B exp(-t/T1*)``, one per grid T1."""
    t1_grid = np.asarray(t1_grid, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if np.any(t1_grid <= 0):
        raise ValueError("T1 grid values must be positive")
    if np.any(np.diff(t1_grid) <= 0):
        raise ValueError("T1 grid must be strictly increasing")
    if np.any(np.diff(times) <= 0):
        raise ValueError("frame times must be strictly increasing")
    a, b, ts = look_locker_params(t1_grid, flip_angle, tr)
    atoms = a[:, None] - b[:, None] * np.exp(-times[None, :] / ts[:, None])
    return SignalDictionary(atoms, t1_grid, times, float(flip_angle), float(tr))


@dataclass(frozen=True)
class TemporalBasis:
    U: np.ndarray  # (T, K), orthonormal columns
    singular_values: np.ndarray

    @property
    def rank(self) -> int:
        return self.U.shape[1]


def extract_basis(dictionary: SignalDictionary | np.ndarray, k: int) -> TemporalBasis:
    """Leading ``k`` left singular vectors of the ``T x atoms`` matrix.

    Each column is signed so that its largest-magnitude entry is positive.
    """
    atoms = dictionary.atoms if isinstance(dictionary, SignalDictionary) else np.asarray(dictionary)
    D = atoms.T
    if k < 1 or k > min(D.shape):
        raise ValueError(f"K={k} outside 1..{min(D.shape)}")
    U, s, _ = np.linalg.svd(D, full_matrices=False)
    tol = s[0] * max(D.shape) * np.finfo(np.float64).eps
    if s[k - 1] <= tol:
        raise ValueError(f"K={k} exceeds the numerical rank {int(np.sum(s > tol))} of the dictionary")
    U = U[:, :k]
    pivot = np.argmax(np.abs(U), axis=0)
    U = U * np.sign(U[pivot, np.arange(k)])
    return TemporalBasis(U, s[:k])


def _basis(U) -> np.ndarray:
    return U.U if isinstance(U, TemporalBasis) else np.asarray(U)


def compress(series: np.ndarray, U) -> np.ndarray:
    """``U^T`` along the leading (time) axis: ``(T, ...) -> (K, ...)``."""
    U = _basis(U)
    series = np.asarray(series)
    if series.shape[0] != U.shape[0]:
        raise ValueError(f"series has {series.shape[0]} frames, basis has {U.shape[0]}")
    return np.tensordot(U.T, series, axes=(1, 0))


def expand(coeffs: np.ndarray, U) -> np.ndarray:
    """``U`` along the leading (component) axis: ``(K, ...) -> (T, ...)``."""
    U = _basis(U)
    coeffs = np.asarray(coeffs)
    if coeffs.shape[0] != U.shape[1]:
        raise ValueError(f"{coeffs.shape[0]} components given, basis has {U.shape[1]}")
    return np.tensordot(U, coeffs, axes=(1, 0))


def precompute_Mk(U, mask: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``M_k[:, :, p] = sum_t W[t,p] M[t,p] u_t u_t^T``, shape ``(K, K, N, N)``."""
    U = _basis(U)
    mask = np.asarray(mask)
    weights = np.asarray(weights, dtype=np.float64)
    if mask.shape != weights.shape or mask.shape[0] != U.shape[0]:
        raise ValueError(f"mask {mask.shape}, weights {weights.shape}, basis {U.shape} incongruent")
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    wm = weights * (mask != 0)
    return np.einsum("tk,tl,t...->kl...", U, U, wm, optimize=True)


def apply_subspace_dc(kspace: np.ndarray, Mk: np.ndarray) -> np.ndarray:
    """Per-cell ``K x K`` multiply of ``(K, ..., N, N)`` subspace k-space."""
    kspace = np.asarray(kspace)
    K = Mk.shape[0]
    if kspace.shape[0] != K or kspace.shape[-2:] != Mk.shape[-2:]:
        raise ValueError(f"k-space {kspace.shape} incongruent with M_k {Mk.shape}")
    return np.einsum("kl...xy,l...xy->k...xy", Mk, kspace, optimize=True)


def subspace_normal(coeffs: np.ndarray, Mk: np.ndarray, coils: np.ndarray) -> np.ndarray:
    """``C^H F^H M_k F C V`` for coil-combined coefficients ``(K, N, N)``."""
    multi = coeffs[:, None] * coils[None]
    back = ifft2c(apply_subspace_dc(fft2c(multi), Mk))
    return np.sum(np.conj(coils)[None] * back, axis=1)


def time_domain_normal(coeffs: np.ndarray, U, mask: np.ndarray, weights: np.ndarray,
                       coils: np.ndarray) -> np.ndarray:
    """Reference path for :func:`subspace_normal` through the full time axis."""
    series = expand(coeffs, U)  # (T, N, N)
    k = fft2c(series[:, None] * coils[None]) * (weights * (mask != 0))[:, None]
    back = compress(ifft2c(k), U)
    return np.sum(np.conj(coils)[None] * back, axis=1)


def initial_coefficients(gridded: np.ndarray, U, weights: np.ndarray, coils: np.ndarray | None = None):
    """``F^H U^T W y`` per coil ``(K, C, N, N)``, or coil-combined ``(K, N, N)``."""
    multi = ifft2c(compress(np.asarray(gridded) * np.asarray(weights)[:, None], U))
    if coils is None:
        return multi
    return np.sum(np.conj(coils)[None] * multi, axis=1)
