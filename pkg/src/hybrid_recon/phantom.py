"""Synthetic ground truth: ellipse phantoms, IR image series and k-space noise."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .subspace import look_locker_params

BRAIN_T1 = (800.0, 1200.0, 1600.0, 2000.0)


@dataclass(frozen=True)
class Region:
    """Ellipse in normalised coordinates (the FOV spans [-1, 1) on each axis)."""

    cx: float
    cy: float
    a: float
    b: float
    angle: float = 0.0
    intensity: float = 1.0
    t1: float | None = None

    def mask(self, n: int) -> np.ndarray:
        g = (np.arange(n) - n // 2) / (n / 2.0)
        X, Y = np.meshgrid(g, g, indexing="ij")
        c, s = np.cos(self.angle), np.sin(self.angle)
        u = (X - self.cx) * c + (Y - self.cy) * s
        v = -(X - self.cx) * s + (Y - self.cy) * c
        return (u / self.a) ** 2 + (v / self.b) ** 2 <= 1.0


@dataclass(frozen=True)
class PhantomSpec:
    """Phantom description.

    ``mode="add"`` sums region intensities (Shepp-Logan style); ``"paint"``
    lets later regions overwrite earlier ones, which keeps a single T1 per
    pixel.  ``texture`` adds a smooth random field of that relative amplitude
    inside regions flagged by ``texture_regions``.
    """

    matrix_size: int
    regions: tuple = ()
    seed: int = 0
    mode: str = "add"
    phase_amplitude: float = 0.0
    blur: float = 0.0
    texture: float = 0.0
    texture_regions: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for r in self.regions:
            if r.intensity < 0:
                raise ValueError("region intensities must be non-negative")
            if abs(r.cx) > 1 or abs(r.cy) > 1:
                raise ValueError("region centre outside the field of view")


def _smooth_phase(n: int, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    if amplitude == 0.0:
        return np.ones((n, n))
    g = (np.arange(n) - n // 2) / (n / 2.0)
    X, Y = np.meshgrid(g, g, indexing="ij")
    c = rng.uniform(-1, 1, size=5)
    phase = amplitude * (c[0] + c[1] * X + c[2] * Y + 0.5 * c[3] * X * Y + 0.5 * c[4] * (X ** 2 - Y ** 2))
    return np.exp(1j * phase)


def _compose(spec: PhantomSpec, values) -> np.ndarray:
    n = spec.matrix_size
    out = np.zeros((n, n))
    for r, val in zip(spec.regions, values):
        m = r.mask(n)
        if spec.mode == "add":
            out[m] += val
        else:
            out[m] = val
    return out


def gen_static_phantom(spec: PhantomSpec) -> np.ndarray:
    """Complex ``n x n`` image: ellipse composition with an optional mild smooth phase."""
    n = spec.matrix_size
    rng = np.random.default_rng(spec.seed)
    img = _compose(spec, [r.intensity for r in spec.regions])
    if spec.texture > 0 and spec.texture_regions:
        field_ = gaussian_filter(rng.standard_normal((n, n)), 1.5)
        field_ /= np.abs(field_).max()
        inside = np.zeros((n, n), dtype=bool)
        for i in spec.texture_regions:
            inside |= spec.regions[i].mask(n)
        img = img + spec.texture * field_ * inside * np.abs(img)
        img = np.clip(img, 0.0, None)
    if spec.blur > 0:
        img = gaussian_filter(img, spec.blur)
    return img * _smooth_phase(n, rng, spec.phase_amplitude)


def lung_phantom_spec(n: int, seed: int = 0) -> PhantomSpec:
    """Chest-like slice: body, low-signal textured lungs, bright vessels, heart."""
    rng = np.random.default_rng(seed)
    j = lambda s: rng.uniform(-s, s)  # noqa: E731
    body = Region(j(0.02), j(0.02), 0.88 + j(0.03), 0.72 + j(0.03), intensity=0.35)
    lungs = []
    for side in (-1, 1):
        lungs.append(Region(0.0 + j(0.04), side * (0.36 + j(0.03)), 0.6 + j(0.05), 0.24 + j(0.03),
                            angle=side * j(0.15), intensity=0.08))
    heart = Region(0.2 + j(0.05), -0.08 + j(0.04), 0.22 + j(0.03), 0.18 + j(0.03), intensity=0.55)
    spine = Region(0.0 + j(0.03), 0.0, 0.1, 0.08, intensity=0.45)
    vessels = []
    for lung in lungs:
        for _ in range(int(rng.integers(4, 7))):
            t = rng.uniform(0, 2 * np.pi)
            rr = np.sqrt(rng.uniform(0.0, 0.6))
            vessels.append(Region(lung.cx + rr * lung.a * np.cos(t), lung.cy + rr * lung.b * np.sin(t),
                                  rng.uniform(0.03, 0.08), rng.uniform(0.025, 0.045),
                                  angle=rng.uniform(0, np.pi), intensity=rng.uniform(0.4, 0.65)))
    regions = (body, *lungs, heart, spine, *vessels)
    return PhantomSpec(n, regions, seed=seed, mode="paint", phase_amplitude=0.5, blur=0.6,
                       texture=0.6, texture_regions=(1, 2))


def brain_phantom_spec(n: int, seed: int = 0) -> PhantomSpec:
    """Concentric tissue rings with T1 800/1200/1600/2000 ms plus small lesions."""
    rng = np.random.default_rng(seed)
    a0, b0 = 0.82 + rng.uniform(-0.04, 0.04), 0.68 + rng.uniform(-0.04, 0.04)
    cx, cy = rng.uniform(-0.03, 0.03, size=2)
    rot = rng.uniform(-0.2, 0.2)
    rings = []
    m0 = (0.65, 0.75, 0.85, 1.0)
    for i, (t1, pd) in enumerate(zip(BRAIN_T1, m0)):
        s = 1.0 - 0.22 * i
        rings.append(Region(cx, cy, a0 * s, b0 * s, angle=rot, intensity=pd, t1=t1))
    lesions = []
    for _ in range(int(rng.integers(2, 5))):
        t = rng.uniform(0, 2 * np.pi)
        rr = rng.uniform(0.2, 0.6)
        lesions.append(Region(cx + rr * a0 * np.cos(t), cy + rr * b0 * np.sin(t),
                              rng.uniform(0.06, 0.12), rng.uniform(0.06, 0.12),
                              intensity=rng.uniform(0.6, 1.0), t1=rng.uniform(850.0, 1950.0)))
    return PhantomSpec(n, (*rings, *lesions), seed=seed, mode="paint", phase_amplitude=0.4)


def gen_ir_series(spec: PhantomSpec, times, flip_angle_deg: float, tr: float):
    """Look-Locker IR image series for a painted T1 phantom.

    Returns
    -------
    series : ndarray, complex, shape (T, n, n)
        ``M0 * (A - B exp(-t/T1*))`` times the phantom's smooth phase.
    t1_map : ndarray, shape (n, n)
        True T1 in ms (0 outside the object).
    m0_map : ndarray, shape (n, n)
    """
    n = spec.matrix_size
    for r in spec.regions:
        if r.t1 is None or r.t1 <= 0:
            raise ValueError("every region of an IR phantom needs a positive T1")
    rng = np.random.default_rng(spec.seed)
    painted = PhantomSpec(n, spec.regions, mode="paint")
    t1_map = _compose(painted, [r.t1 for r in spec.regions])
    m0_map = _compose(painted, [r.intensity for r in spec.regions])
    inside = t1_map > 0
    A = np.zeros((n, n))
    B = np.zeros((n, n))
    T1s = np.ones((n, n))
    A[inside], B[inside], T1s[inside] = look_locker_params(t1_map[inside], flip_angle_deg, tr)
    t = np.asarray(times, dtype=np.float64)[:, None, None]
    series = m0_map * (A - B * np.exp(-t / T1s))
    return series * _smooth_phase(n, rng, spec.phase_amplitude), t1_map, m0_map


def add_complex_noise(data: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add i.i.d. complex Gaussian noise (std ``sigma`` per real component)."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    data = np.asarray(data)
    if sigma == 0:
        return data.copy()
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(data.shape) + 1j * rng.standard_normal(data.shape)
    return data + sigma * noise
