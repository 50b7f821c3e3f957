"""Coil sensitivities: simulation, low-pass estimation and combination.

Multi-coil arrays keep the coil axis third from last: ``(..., coils, n, n)``.
"""
from __future__ import annotations

import numpy as np

from .nufft import ifft2c, make_plan, nufft_adjoint
from .trajectories import Trajectory, density_compensation

CENTRE_RADIUS = 0.125
TAPER_START = 0.5  # fraction of the radius kept flat before the Hann taper
SUPPORT_THRESHOLD = 0.05


def rss(maps: np.ndarray, axis: int = -3) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(maps) ** 2, axis=axis))


def gen_coil_sensitivities(ncoils: int, matrix_size: int, seed: int = 0,
                           width: float = 0.6, ring_radius: float = 1.2) -> np.ndarray:
    """Smooth complex Gaussian-lobe maps on a ring around the FOV, RSS = 1.

    Returns an array of shape ``(ncoils, n, n)``.
    """
    if ncoils < 1:
        raise ValueError("ncoils must be >= 1")
    n = matrix_size
    if ncoils == 1:
        return np.ones((1, n, n), dtype=np.complex128)
    rng = np.random.default_rng(seed)
    grid = (np.arange(n) - n // 2) / (n / 2.0)
    X, Y = np.meshgrid(grid, grid, indexing="ij")
    start = rng.uniform(0, 2 * np.pi)
    maps = np.empty((ncoils, n, n), dtype=np.complex128)
    for c in range(ncoils):
        a = start + 2 * np.pi * c / ncoils + rng.uniform(-0.1, 0.1)
        cx, cy = ring_radius * np.cos(a), ring_radius * np.sin(a)
        mag = np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * width ** 2))
        gx, gy = rng.uniform(-0.6, 0.6, size=2)
        phase = rng.uniform(-np.pi, np.pi) + gx * X + gy * Y
        maps[c] = mag * np.exp(1j * phase)
    return maps / rss(maps, axis=0)


def _normalise(images: np.ndarray, threshold: float) -> np.ndarray:
    total = rss(images, axis=0)
    if not np.any(total > 0):
        raise ValueError("cannot estimate sensitivities from all-zero data")
    support = total > threshold * total.max()
    return np.where(support, images / np.where(support, total, 1.0), 0.0)


def _taper(r: np.ndarray, radius: float) -> np.ndarray:
    """Flat up to ``TAPER_START * radius``, then a Hann (cos^2) roll-off to zero at ``radius``."""
    x = (r / radius - TAPER_START) / (1.0 - TAPER_START)
    return np.where(x <= 0, 1.0, np.where(x < 1, np.cos(0.5 * np.pi * x) ** 2, 0.0))


def estimate_sensitivities(kspace: np.ndarray, traj: Trajectory | None = None, n: int | None = None,
                           mask: np.ndarray | None = None, radius: float = CENTRE_RADIUS,
                           threshold: float = SUPPORT_THRESHOLD) -> np.ndarray:
    """Low-pass coil maps from central k-space.

    Two input forms are accepted:

    * non-Cartesian samples ``(coils, readouts, samples)`` with ``traj`` and
      matrix size ``n``;
    * centred Cartesian k-space ``(coils, n, n)`` or time-resolved
      ``(frames, coils, n, n)`` with an optional sampling ``mask`` of matching
      spatial/frame shape.  Frames are averaged over their sampled cells.

    Central data within ``radius`` (cycles/pixel) is apodised with a Hann-tapered
    flat-top window and
    transformed to low-resolution coil images, which are divided by their
    root-sum-of-squares.  Pixels whose RSS is below ``threshold`` of the
    maximum are set to zero.
    """
    kspace = np.asarray(kspace)
    if not np.any(kspace):
        raise ValueError("cannot estimate sensitivities from all-zero data")
    if traj is not None:
        if n is None:
            raise ValueError("matrix size n is required for non-Cartesian input")
        r = np.linalg.norm(traj.coords, axis=-1)
        w = density_compensation(traj) * _taper(r, radius)
        keep = (w > 0).ravel()
        plan = make_plan(traj.flat[keep], n)
        ncoil = kspace.shape[0]
        images = nufft_adjoint(kspace.reshape(ncoil, -1)[:, keep], plan, w.ravel()[keep])
        return _normalise(images, threshold)

    if kspace.ndim == 4:
        if mask is None:
            mask = np.ones((kspace.shape[0],) + kspace.shape[-2:])
        m = np.asarray(mask, dtype=np.float64)
        count = m.sum(axis=0)
        kspace = np.sum(kspace * m[:, None], axis=0) / np.maximum(count, 1.0)
    n = kspace.shape[-1]
    k = (np.arange(n) - n // 2) / n
    KX, KY = np.meshgrid(k, k, indexing="ij")
    win = _taper(np.hypot(KX, KY), radius)
    images = ifft2c(kspace * win)
    return _normalise(images, threshold)


def coil_combine(images: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """``C^H``: sum over the coil axis of ``conj(C) * images``."""
    images = np.asarray(images)
    if images.shape[-3:] != maps.shape:
        raise ValueError(f"images {images.shape} incongruent with coil maps {maps.shape}")
    return np.sum(np.conj(maps) * images, axis=-3)


def coil_expand(image: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """``C``: image ``(..., n, n)`` -> ``(..., coils, n, n)``."""
    image = np.asarray(image)
    if image.shape[-2:] != maps.shape[-2:]:
        raise ValueError(f"image {image.shape} incongruent with coil maps {maps.shape}")
    return image[..., None, :, :] * maps
