import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybrid_recon import phantom as ph
from hybrid_recon.fitting import lm_fit, t1_map
from hybrid_recon.subspace import extract_basis, ir_frame_times, look_locker_params

TIMES = ir_frame_times()


def test_empty_region_list_gives_zero_image():
    img = ph.gen_static_phantom(ph.PhantomSpec(16))
    assert img.shape == (16, 16) and not img.any()


def test_disjoint_ellipse_areas_match_analytic_values():
    n = 128
    regions = (ph.Region(-0.4, 0.0, 0.3, 0.2, intensity=1.0), ph.Region(0.45, 0.1, 0.25, 0.4, angle=0.6,
                                                                         intensity=1.0))
    img = np.abs(ph.gen_static_phantom(ph.PhantomSpec(n, regions)))
    pix = (n / 2.0) ** 2  # pixels per unit area
    for r in regions:
        area = np.pi * r.a * r.b * pix
        perimeter = np.pi * (3 * (r.a + r.b) - np.sqrt((3 * r.a + r.b) * (r.a + 3 * r.b))) * n / 2.0
        assert abs(r.mask(n).sum() - area) <= 2 * perimeter
    assert img.sum() == pytest.approx(sum(r.mask(n).sum() for r in regions))


def test_add_mode_sums_and_paint_mode_overwrites():
    big = ph.Region(0.0, 0.0, 0.8, 0.8, intensity=1.0)
    small = ph.Region(0.0, 0.0, 0.2, 0.2, intensity=0.5)
    added = ph.gen_static_phantom(ph.PhantomSpec(32, (big, small), mode="add"))
    painted = ph.gen_static_phantom(ph.PhantomSpec(32, (big, small), mode="paint"))
    assert added[16, 16] == pytest.approx(1.5)
    assert painted[16, 16] == pytest.approx(0.5)


def test_static_phantom_is_seed_reproducible():
    a = ph.gen_static_phantom(ph.lung_phantom_spec(48, seed=3))
    b = ph.gen_static_phantom(ph.lung_phantom_spec(48, seed=3))
    c = ph.gen_static_phantom(ph.lung_phantom_spec(48, seed=4))
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_phase_is_smooth_and_magnitude_nonnegative():
    img = ph.gen_static_phantom(ph.lung_phantom_spec(48, seed=0))
    assert np.iscomplexobj(img)
    inside = np.abs(img) > 0.05
    phase = np.angle(img * np.exp(-1j * np.angle(img[24, 24])))
    assert np.max(np.abs(np.diff(phase, axis=0)[inside[1:] & inside[:-1]])) < 0.2


def test_lung_phantom_has_dark_lungs_and_bright_vessels():
    spec = ph.lung_phantom_spec(64, seed=1)
    assert spec.regions[1].intensity < spec.regions[0].intensity
    assert all(r.intensity > spec.regions[1].intensity for r in spec.regions[5:])


@pytest.mark.parametrize("region, match", [
    (ph.Region(0.0, 0.0, 0.2, 0.2, intensity=-1.0), "non-negative"),
    (ph.Region(1.5, 0.0, 0.2, 0.2), "outside"),
])
def test_spec_validation(region, match):
    with pytest.raises(ValueError, match=match):
        ph.PhantomSpec(16, (region,))


# ---------------------------------------------------------------- IR series

def test_brain_phantom_uses_the_four_tissue_t1s():
    spec = ph.brain_phantom_spec(48, seed=0)
    assert tuple(r.t1 for r in spec.regions[:4]) == ph.BRAIN_T1


def test_ir_series_first_frame_is_a_minus_b():
    spec = ph.brain_phantom_spec(32, seed=2)
    times = np.concatenate([[0.0], TIMES])
    series, t1, m0 = ph.gen_ir_series(spec, times, 5.0, 3.67)
    inside = t1 > 0
    a, b, _ = look_locker_params(t1[inside], 5.0, 3.67)
    np.testing.assert_allclose(np.abs(series[0][inside]), m0[inside] * np.abs(a - b), rtol=1e-12)
    assert not series[:, ~inside].any()


def test_ir_series_lies_in_a_complete_basis():
    series, _, _ = ph.gen_ir_series(ph.brain_phantom_spec(16, seed=0), TIMES, 5.0, 3.67)
    U = extract_basis(np.eye(TIMES.size), TIMES.size).U
    proj = np.tensordot(U, np.tensordot(U.T, series, axes=(1, 0)), axes=(1, 0))
    np.testing.assert_allclose(proj, series, atol=1e-12)


def test_pixelwise_fit_of_noiseless_series_reproduces_truth():
    spec = ph.brain_phantom_spec(24, seed=5)
    series, t1, _ = ph.gen_ir_series(spec, TIMES, 5.0, 3.67)
    inside = t1 > 0
    phase = series[-1] / np.abs(np.where(inside, series[-1], 1.0))
    curves = np.real(series * np.conj(phase))[:, inside].T
    fitted = t1_map(lm_fit(curves, TIMES)).t1
    np.testing.assert_allclose(fitted, t1[inside], rtol=1e-3)


def test_single_region_of_1000ms_round_trips():
    spec = ph.PhantomSpec(8, (ph.Region(0.0, 0.0, 0.9, 0.9, intensity=0.8, t1=1000.0),), mode="paint")
    series, t1, _ = ph.gen_ir_series(spec, TIMES, 5.0, 3.67)
    p = lm_fit(np.real(series[:, 4, 4]), TIMES)
    assert t1_map(p).t1 == pytest.approx(1000.0, rel=1e-3)


def test_ir_series_requires_t1_per_region():
    spec = ph.PhantomSpec(8, (ph.Region(0.0, 0.0, 0.5, 0.5),))
    with pytest.raises(ValueError, match="positive T1"):
        ph.gen_ir_series(spec, TIMES, 5.0, 3.67)


# ---------------------------------------------------------------- noise

def test_zero_sigma_is_identity():
    x = np.arange(6.0).reshape(2, 3) + 1j
    out = ph.add_complex_noise(x, 0.0, seed=1)
    np.testing.assert_array_equal(out, x)
    assert out is not x


def test_noise_std_matches_sigma():
    noise = ph.add_complex_noise(np.zeros(10 ** 6, dtype=complex), 0.3, seed=0)
    assert np.std(noise.real) == pytest.approx(0.3, rel=0.01)
    assert np.std(noise.imag) == pytest.approx(0.3, rel=0.01)


def test_independent_seeds_give_uncorrelated_noise():
    a = ph.add_complex_noise(np.zeros(10 ** 5, dtype=complex), 1.0, seed=1)
    b = ph.add_complex_noise(np.zeros(10 ** 5, dtype=complex), 1.0, seed=2)
    assert abs(np.corrcoef(a.real, b.real)[0, 1]) < 0.01
    assert abs(np.corrcoef(a.real, a.imag)[0, 1]) < 0.01


def test_negative_sigma_rejected():
    with pytest.raises(ValueError, match="non-negative"):
        ph.add_complex_noise(np.zeros(3), -1.0, seed=0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(8, 40))
def test_brain_phantom_t1_values_stay_in_evaluated_range(seed, n):
    _, t1, m0 = ph.gen_ir_series(ph.brain_phantom_spec(n, seed), TIMES[:4], 5.0, 3.67)
    inside = t1 > 0
    assert np.all((t1[inside] >= 800.0) & (t1[inside] <= 2000.0))
    assert np.all(m0[inside] > 0)
