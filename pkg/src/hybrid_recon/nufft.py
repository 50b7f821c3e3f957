"""Kaiser-Bessel gridding NUFFT and the multi-coil encoding operator.

Convention: for an ``N x N`` image with centred pixel indices
``n in [-N/2, N/2)`` on both axes (array index ``n + N/2``), the forward
transform is ``S(k) = sum_n x[n] exp(-2*pi*i k.n)`` with ``k`` in cycles/pixel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.sparse as sp
from scipy.special import i0

from .trajectories import Trajectory

TABLE_SIZE = 10_000


def kb_beta(width: int, oversamp: float) -> float:
    """Beatty's near-optimal Kaiser-Bessel shape parameter."""
    return np.pi * np.sqrt((width / oversamp) ** 2 * (oversamp - 0.5) ** 2 - 0.8)


def kb_kernel(u, width: int, beta: float) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    arg = 1.0 - (2.0 * u / width) ** 2
    out = np.zeros_like(u)
    inside = arg >= 0.0
    out[inside] = i0(beta * np.sqrt(arg[inside]))
    return out


def kb_kernel_ft(xi, width: int, beta: float) -> np.ndarray:
    """Continuous Fourier transform of :func:`kb_kernel` (frequency ``xi``)."""
    z = beta ** 2 - (np.pi * width * np.asarray(xi, dtype=np.float64)) ** 2
    zc = np.sqrt(z.astype(np.complex128))
    val = np.where(np.abs(zc) < 1e-12, 1.0, np.sinh(zc) / np.where(zc == 0, 1, zc))
    return width * np.real(val)


@dataclass(frozen=True)
class GriddingPlan:
    """Precomputed interpolation for one trajectory and matrix size.

    Attributes
    ----------
    n : int
        Image matrix size (square).
    oversamp : float
        Grid oversampling factor.
    width : int
        Kernel width in oversampled grid units.
    beta : float
        Kaiser-Bessel shape parameter.
    table : ndarray
        Kernel lookup table on ``u in [0, width/2]``.
    deapod : ndarray
        Real, strictly positive deapodization image (``n x n``).
    coords : ndarray, shape (m, 2)
        Sample locations in cycles/pixel.
    interp : scipy.sparse.csr_matrix
        ``m x G^2`` real interpolation matrix, ``G = oversamp * n``.
    """

    n: int
    oversamp: float
    width: int
    beta: float
    table: np.ndarray
    deapod: np.ndarray
    coords: np.ndarray
    interp: sp.csr_matrix

    @property
    def grid(self) -> int:
        return int(round(self.oversamp * self.n))

    @property
    def n_samples(self) -> int:
        return self.coords.shape[0]

    def subset(self, keep) -> "GriddingPlan":
        """Plan restricted to a subset of samples (boolean mask or indices)."""
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep.ravel())
        return GriddingPlan(self.n, self.oversamp, self.width, self.beta, self.table,
                            self.deapod, _readonly(self.coords[keep]), self.interp[keep])


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


def make_plan(traj, n: int, oversamp: float = 2.0, width: int = 4) -> GriddingPlan:
    """Build a gridding plan for ``traj`` (a Trajectory or an ``(m, 2)`` array)."""
    coords = traj.flat if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64).reshape(-1, 2)
    G = int(round(oversamp * n))
    if G % 2 or n % 2:
        raise ValueError("matrix and oversampled grid sizes must be even")
    beta = kb_beta(width, oversamp)
    u_table = np.linspace(0.0, width / 2.0, TABLE_SIZE)
    table = kb_kernel(u_table, width, beta)

    def lookup(u):
        return np.interp(np.abs(u), u_table, table, right=0.0)

    m = coords.shape[0]
    pos = coords * G  # sample positions in oversampled grid units
    base = np.floor(pos - width / 2.0).astype(int) + 1
    offs = np.arange(width)
    gx = base[:, 0:1] + offs[None, :]
    gy = base[:, 1:2] + offs[None, :]
    wx = lookup(pos[:, 0:1] - gx)
    wy = lookup(pos[:, 1:2] - gy)
    ix = np.mod(gx + G // 2, G)
    iy = np.mod(gy + G // 2, G)
    rows = np.repeat(np.arange(m), width * width)
    cols = (ix[:, :, None] * G + iy[:, None, :]).ravel()
    vals = (wx[:, :, None] * wy[:, None, :]).ravel()
    interp = sp.csr_matrix((vals, (rows, cols)), shape=(m, G * G))
    interp.sum_duplicates()

    nn = np.arange(n) - n // 2
    phi = kb_kernel_ft(nn / G, width, beta)
    deapod = np.outer(phi, phi)
    if np.any(deapod <= 0):
        raise ValueError("non-positive deapodization; kernel parameters are unsuitable")
    return GriddingPlan(n, float(oversamp), int(width), float(beta), _readonly(table),
                        _readonly(deapod), _readonly(coords), interp)


def _pad(x: np.ndarray, G: int) -> np.ndarray:
    n = x.shape[-1]
    out = np.zeros(x.shape[:-2] + (G, G), dtype=np.complex128)
    s = G // 2 - n // 2
    out[..., s:s + n, s:s + n] = x
    return out


def _crop(x: np.ndarray, n: int) -> np.ndarray:
    G = x.shape[-1]
    s = G // 2 - n // 2
    return x[..., s:s + n, s:s + n]


def _cfft2(x):
    return np.fft.fftshift(scipy.fft.fft2(np.fft.ifftshift(x, axes=(-2, -1))), axes=(-2, -1))


def _cfft2_adjoint(x):
    G2 = x.shape[-1] * x.shape[-2]
    return np.fft.fftshift(scipy.fft.ifft2(np.fft.ifftshift(x, axes=(-2, -1))), axes=(-2, -1)) * G2


def fft2c(x: np.ndarray) -> np.ndarray:
    """Orthonormal centred 2D FFT over the last two axes (Cartesian ``F``)."""
    return np.fft.fftshift(scipy.fft.fft2(np.fft.ifftshift(x, axes=(-2, -1)), norm="ortho"), axes=(-2, -1))


def ifft2c(x: np.ndarray) -> np.ndarray:
    """Inverse (and adjoint) of :func:`fft2c`."""
    return np.fft.fftshift(scipy.fft.ifft2(np.fft.ifftshift(x, axes=(-2, -1)), norm="ortho"), axes=(-2, -1))


def nufft_forward(image: np.ndarray, plan: GriddingPlan) -> np.ndarray:
    """Image ``(..., n, n)`` -> samples ``(..., m)``."""
    image = np.asarray(image)
    if image.shape[-2:] != (plan.n, plan.n):
        raise ValueError(f"image shape {image.shape[-2:]} does not match plan matrix {plan.n}")
    lead = image.shape[:-2]
    G = plan.grid
    over = _cfft2(_pad(image / plan.deapod, G)).reshape(-1, G * G)
    out = plan.interp @ over.T  # m x batch
    return np.ascontiguousarray(out.T).reshape(lead + (plan.n_samples,))


def nufft_adjoint(samples: np.ndarray, plan: GriddingPlan, weights=None) -> np.ndarray:
    """Samples ``(..., m)`` -> image ``(..., n, n)``; exact adjoint of the forward.

    With ``weights`` the samples are first multiplied by them (``F^H W y``).
    """
    samples = np.asarray(samples)
    if samples.shape[-1] != plan.n_samples:
        raise ValueError(f"{samples.shape[-1]} samples given, plan has {plan.n_samples}")
    if weights is not None:
        samples = samples * np.asarray(weights).reshape(-1)
    lead = samples.shape[:-1]
    G = plan.grid
    grid = (plan.interp.T @ samples.reshape(-1, plan.n_samples).T).T
    img = _crop(_cfft2_adjoint(grid.reshape(lead + (G, G))), plan.n)
    return img / plan.deapod


def dft_oracle(image: np.ndarray, traj) -> np.ndarray:
    """Exact non-uniform DFT by direct summation (small images only)."""
    image = np.asarray(image)
    coords = traj.flat if isinstance(traj, Trajectory) else np.asarray(traj).reshape(-1, 2)
    n = image.shape[-1]
    nn = np.arange(n) - n // 2
    ex = np.exp(-2j * np.pi * np.outer(coords[:, 0], nn))  # m x n
    ey = np.exp(-2j * np.pi * np.outer(coords[:, 1], nn))
    return np.einsum("mi,mj,...ij->...m", ex, ey, image, optimize=True)


# ---------------------------------------------------------------- encoding

def _coil_check(x: np.ndarray, coils: np.ndarray) -> None:
    if coils.shape[-2:] != x.shape[-2:]:
        raise ValueError(f"coil maps {coils.shape} incongruent with image {x.shape}")


def encode(image: np.ndarray, plan: GriddingPlan, coils: np.ndarray, weights=None) -> np.ndarray:
    """``E x = sqrt(W) F (C x)``: image ``(..., n, n)`` -> ``(..., coils, m)``."""
    coils = np.asarray(coils)
    _coil_check(image, coils)
    y = nufft_forward(image[..., None, :, :] * coils, plan)
    if weights is not None:
        y = y * np.sqrt(np.asarray(weights).reshape(-1))
    return y


def encode_adjoint(samples: np.ndarray, plan: GriddingPlan, coils: np.ndarray, weights=None) -> np.ndarray:
    """``E^H y = C^H F^H sqrt(W) y``: ``(..., coils, m)`` -> ``(..., n, n)``."""
    coils = np.asarray(coils)
    if samples.shape[-2] != coils.shape[0]:
        raise ValueError(f"{samples.shape[-2]} coils in data, {coils.shape[0]} coil maps")
    w = None if weights is None else np.sqrt(np.asarray(weights).reshape(-1))
    return np.sum(np.conj(coils) * nufft_adjoint(samples, plan, w), axis=-3)


def normal_operator(image: np.ndarray, plan: GriddingPlan, coils: np.ndarray, weights) -> np.ndarray:
    """``C^H F^H W F C x`` (the data-consistency gradient's linear part)."""
    y = nufft_forward(image[..., None, :, :] * coils, plan)
    return np.sum(np.conj(coils) * nufft_adjoint(y, plan, weights), axis=-3)
