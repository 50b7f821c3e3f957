import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import least_squares

from hybrid_recon import fitting as ft
from hybrid_recon.subspace import build_dictionary, ir_frame_times, look_locker_params

from conftest import check_gradient

TIMES = ir_frame_times()
DENSE_TIMES = np.linspace(20.0, 5000.0, 24)


# ---------------------------------------------------------------- model and T1

def test_signal_model_worked_example():
    np.testing.assert_allclose(ft.signal_model(1.0, 2.0, 500.0, 500.0), 1 - 2 * np.exp(-1.0), rtol=1e-15)
    np.testing.assert_allclose(ft.signal_model(1.0, 2.0, 500.0, 500.0), 0.26424, atol=5e-6)


def test_signal_model_limits():
    assert ft.signal_model(1.3, 2.2, 800.0, 0.0) == pytest.approx(1.3 - 2.2, abs=1e-15)
    assert ft.signal_model(1.3, 2.2, 800.0, 1e7) == pytest.approx(1.3, abs=1e-12)


def test_signal_model_broadcasts_parameters_over_times():
    out = ft.signal_model(np.ones(5), 2 * np.ones(5), np.full(5, 300.0), TIMES)
    assert out.shape == (5, TIMES.size)


def test_t1_worked_example_and_degenerate_edge():
    t1, ok = ft.t1_from_params(2.0, 3.0, 600.0)
    assert t1 == pytest.approx(300.0) and ok
    t1, ok = ft.t1_from_params(1.5, 1.5, 600.0)
    assert t1 == 0.0 and ok


def test_zero_amplitude_is_masked_not_raised():
    t1, ok = ft.t1_from_params(np.array([0.0, 1.0]), np.array([1.0, 2.0]), np.array([500.0, 500.0]))
    np.testing.assert_array_equal(ok, [False, True])
    assert t1[0] == 0.0 and t1[1] == pytest.approx(500.0)


def test_t1_of_generating_parameters_is_exact():
    t1 = np.linspace(300.0, 2800.0, 40)
    a, b, ts = look_locker_params(t1, 5.0, 3.67)
    np.testing.assert_allclose(ft.t1_from_params(a, b, ts)[0], t1, rtol=1e-9)


def test_t1_map_warns_on_unphysical_pixels():
    p = ft.ModelParams(np.array([-1.0]), np.array([-2.0]), np.array([500.0]))
    with pytest.warns(RuntimeWarning, match="B < A"):
        m = ft.t1_map(p)
    assert m.valid[0] and m.t1[0] == pytest.approx(500.0)

    p = ft.ModelParams(np.array([2.0, 1.0]), np.array([1.0, 2.0]), np.array([500.0, 500.0]))
    with pytest.warns(RuntimeWarning, match="B < A"):
        m = ft.t1_map(p)
    # the warning does not reject; a positive T1 is still required
    np.testing.assert_array_equal(m.valid, [False, True])
    assert np.all(np.isfinite(m.t1))


def test_signed_curves_restore_inversion_polarity():
    t1 = np.array([[900.0, 1700.0]])
    a, b, ts = look_locker_params(t1, 5.0, 3.67)
    real = a[None] - b[None] * np.exp(-TIMES[:, None, None] / ts[None])
    phase = np.exp(1j * np.array([[0.7, -2.1]]))
    curves = ft.signed_curves(real * phase)
    assert curves.shape == (1, 2, TIMES.size)
    np.testing.assert_allclose(curves, np.moveaxis(real, 0, -1), atol=1e-12)


# ---------------------------------------------------------------- LM oracle

def test_lm_recovers_noiseless_parameters():
    y = ft.signal_model(1.2, 2.1, 700.0, DENSE_TIMES)
    p = ft.lm_fit(y, DENSE_TIMES)
    np.testing.assert_allclose([p.A, p.B, p.t1_star], [1.2, 2.1, 700.0], rtol=1e-3)
    assert p.valid


def test_lm_matches_scipy_least_squares():
    rng = np.random.default_rng(5)
    y = ft.signal_model(0.8, 1.7, 1100.0, TIMES) + 0.01 * rng.standard_normal(TIMES.size)
    ours = ft.lm_fit(y, TIMES)
    ref = least_squares(lambda th: th[0] - th[1] * np.exp(-TIMES / th[2]) - y, [1.0, 1.0, 900.0],
                        method="lm", xtol=1e-12, ftol=1e-12)
    np.testing.assert_allclose([ours.A, ours.B, ours.t1_star], ref.x, rtol=1e-5)


@pytest.mark.filterwarnings("ignore:some fitted pixels have B < A")
def test_lm_on_constant_curve_gives_constant_amplitude():
    p = ft.lm_fit(np.full(TIMES.size, 0.7), TIMES)
    assert p.A == pytest.approx(0.7, rel=1e-6)
    m = ft.t1_map(p)
    assert (not m.valid) or abs(m.t1) < 1e-3


def test_lm_round_trip_noiseless_within_a_tenth_percent():
    t1 = np.linspace(400.0, 2600.0, 30)
    a, b, ts = look_locker_params(t1, 5.0, 3.67)
    p = ft.lm_fit(ft.signal_model(a, b, ts, TIMES), TIMES)
    np.testing.assert_allclose(ft.t1_map(p).t1, t1, rtol=1e-3)


def test_lm_one_percent_noise_median_error_below_two_percent():
    rng = np.random.default_rng(0)
    a, b, ts = look_locker_params(np.full(100, 1000.0), 5.0, 3.67)
    y = ft.signal_model(a, b, ts, TIMES)
    y = y + 0.01 * a[:, None] * rng.standard_normal(y.shape)
    t1 = ft.t1_map(ft.lm_fit(y, TIMES)).t1
    assert np.median(np.abs(t1 - 1000.0) / 1000.0) < 0.02


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 2.0), st.floats(0.1, 1.0), st.floats(300.0, 2000.0), st.floats(0.01, 100.0))
def test_lm_is_scale_equivariant(A, extra, t1_star, c):
    y = ft.signal_model(A, A + extra, t1_star, TIMES)
    p1 = ft.lm_fit(y, TIMES)
    p2 = ft.lm_fit(c * y, TIMES)
    np.testing.assert_allclose([p2.A, p2.B], [c * p1.A, c * p1.B], rtol=1e-6)
    np.testing.assert_allclose(p2.t1_star, p1.t1_star, rtol=1e-6)


def test_lm_keeps_leading_shape():
    y = ft.signal_model(np.ones((2, 3)), 2 * np.ones((2, 3)), np.full((2, 3), 500.0), TIMES)
    p = ft.lm_fit(y, TIMES)
    assert p.A.shape == (2, 3) and p.valid.shape == (2, 3)


@pytest.mark.parametrize("curves, times, match", [
    (np.zeros(5), np.arange(4.0), "points"),
    (np.zeros(3), np.arange(3.0), "at least 4"),
    (np.zeros(4), np.array([0.0, 2.0, 1.0, 3.0]), "increasing"),
])
def test_lm_input_validation(curves, times, match):
    with pytest.raises(ValueError, match=match):
        ft.lm_fit(curves, times)


# ---------------------------------------------------------------- networks

def _atoms(t1):
    d = build_dictionary(t1, TIMES)
    return d.atoms, look_locker_params(d.t1, d.flip_angle, d.tr)


def test_network_t1_is_invariant_to_curve_scale():
    net = ft.FittingNetwork(TIMES.size, seed=3)
    curves, _ = _atoms(np.linspace(500.0, 2500.0, 7))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = net.predict_t1(curves)
        b = net.predict_t1(17.5 * curves)
    np.testing.assert_allclose(a.t1, b.t1, rtol=1e-10)


def test_network_is_deterministic_and_seeded():
    curves, _ = _atoms(np.array([800.0, 1600.0]))
    a = ft.FittingNetwork(TIMES.size, seed=4).predict(curves)
    b = ft.FittingNetwork(TIMES.size, seed=4).predict(curves)
    c = ft.FittingNetwork(TIMES.size, seed=5).predict(curves)
    np.testing.assert_array_equal(a.stack(), b.stack())
    assert not np.allclose(a.stack(), c.stack())


def test_selfsup_loss_is_l1_between_synthesis_and_normalised_curve():
    net = ft.FittingNetwork(TIMES.size, seed=0)
    curves, _ = _atoms(np.array([900.0, 1300.0, 1900.0]))
    p = net.predict(curves)
    scale = np.max(np.abs(curves), axis=1, keepdims=True)
    expected = np.mean(np.abs(ft.signal_model(p.A, p.B, p.t1_star, TIMES) - curves) / scale)
    assert ft.selfsup_loss(net, curves, TIMES).item() == pytest.approx(expected, rel=1e-10)


def test_supervised_loss_vanishes_at_own_predictions():
    net = ft.FittingNetwork(TIMES.size, seed=0)
    curves, _ = _atoms(np.array([900.0, 1300.0, 1900.0]))
    p = net.predict(curves)
    assert ft.supervised_loss(net, curves, p).item() < 1e-12


def _with_param(net, index, value, fn):
    """Evaluate ``fn`` with layer ``index``'s weight replaced by ``value``."""
    old = net.mlp.weights[index]
    net.mlp.weights[index] = value
    try:
        return fn()
    finally:
        net.mlp.weights[index] = old


@pytest.mark.parametrize("layer", [0, 1])
def test_fitting_loss_gradients_match_finite_differences(layer):
    net = ft.FittingNetwork(TIMES.size, hidden=(5,), seed=1)
    curves, (a, b, ts) = _atoms(np.array([700.0, 1500.0, 2300.0]))
    ref = ft.ModelParams(a * 1.1, b * 0.9, ts * 1.2)
    w0 = net.mlp.weights[layer].data.copy()
    check_gradient(lambda w: _with_param(net, layer, w, lambda: ft.selfsup_loss(net, curves, TIMES)), w0)
    check_gradient(lambda w: _with_param(net, layer, w, lambda: ft.supervised_loss(net, curves, ref)), w0)


def test_cosine_schedule_endpoints():
    assert ft.cosine_lr(1e-3, 0, 100) == pytest.approx(1e-3)
    assert ft.cosine_lr(1e-3, 99, 100) == pytest.approx(1e-5)
    lrs = [ft.cosine_lr(1.0, e, 50) for e in range(50)]
    assert np.all(np.diff(lrs) <= 0)


@pytest.fixture(scope="module")
def selfsup_net():
    curves, _ = _atoms(np.arange(400.0, 2800.0, 10.0))
    net = ft.FittingNetwork(TIMES.size, seed=0)
    hist = ft.fit_network_selfsup_train(net, curves, TIMES, epochs=300, batch=64, lr=3e-3, seed=0)
    return net, hist


def test_selfsup_training_reduces_loss(selfsup_net):
    _, hist = selfsup_net
    assert hist[-1] < 0.2 * hist[0]


def test_selfsup_network_reproduces_atoms(selfsup_net):
    net, _ = selfsup_net
    curves, _ = _atoms(np.arange(405.0, 2800.0, 40.0))
    p = net.predict(curves)
    synth = ft.signal_model(p.A, p.B, p.t1_star, TIMES)
    rel = np.linalg.norm(synth - curves, axis=1) / np.linalg.norm(curves, axis=1)
    assert np.median(rel) < 0.01


def test_selfsup_network_agrees_with_lm(selfsup_net):
    net, _ = selfsup_net
    curves, _ = _atoms(np.arange(805.0, 2000.0, 40.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        t_net = net.predict_t1(curves).t1
    t_lm = ft.t1_map(ft.lm_fit(curves, TIMES)).t1
    assert np.median(np.abs(t_net - t_lm) / t_lm) < 0.05


def test_supervised_network_generalises_to_held_out_atoms():
    t1_train = np.arange(400.0, 2800.0, 10.0)
    curves, (a, b, ts) = _atoms(t1_train)
    net = ft.FittingNetwork(TIMES.size, seed=0)
    hist = ft.fit_network_sup_train(net, curves, ft.ModelParams(a, b, ts), epochs=300, lr=3e-3, seed=0)
    assert hist[-1] < hist[0]
    t1_test = np.arange(805.0, 2000.0, 40.0)
    held, _ = _atoms(t1_test)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        t_pred = net.predict_t1(held).t1
    assert np.median(np.abs(t_pred - t1_test) / t1_test) < 0.03
