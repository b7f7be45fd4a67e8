import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqsim.spin import (
    DecoherenceParams,
    GaussianSpinState,
    apply_dephasing,
    apply_scattering,
    backaction_inject,
    css_new,
    pcss_new,
    rotate_about_x,
)

N = 1.75e6


def test_pcss_reference_numbers():
    s = pcss_new(N)
    np.testing.assert_array_equal(s.mean, [0, N, 0])
    np.testing.assert_array_equal(np.diag(s.cov), [8.75e5, 1.75e6, 8.75e5])
    assert s.coherence_factor == 1.0


@pytest.mark.parametrize("ctor", [pcss_new, css_new])
def test_empty_ensemble(ctor):
    s = ctor(0)
    assert not s.mean.any() and not s.cov.any()


def test_small_states():
    np.testing.assert_array_equal(pcss_new(2).cov, np.diag([1.0, 2.0, 1.0]))
    np.testing.assert_array_equal(css_new(1e6).cov, np.diag([5e5, 0.0, 5e5]))


@pytest.mark.parametrize("ctor", [pcss_new, css_new])
def test_negative_atoms_rejected(ctor):
    with pytest.raises(ValueError):
        ctor(-1)


def test_state_is_immutable():
    s = pcss_new(10)
    with pytest.raises(ValueError):
        s.mean[0] = 1.0


def test_quarter_turn():
    s = rotate_about_x(pcss_new(N), math.pi / 2)
    np.testing.assert_allclose(s.mean, [0, 0, -N], atol=1e-9 * N)
    np.testing.assert_allclose(s.cov, np.diag([N / 2, N / 2, N]), atol=1e-9 * N)


def test_zero_rotation_identity():
    s = pcss_new(N)
    assert rotate_about_x(s, 0.0) is s


@settings(max_examples=200, deadline=None)
@given(phi=st.floats(-10, 10), seed=st.integers(0, 2**32 - 1))
def test_rotation_preserves_trace_det_and_inverts(phi, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((3, 3))
    s = GaussianSpinState(rng.standard_normal(3) * 1e3, a @ a.T * 1e3, 1e3)
    r = rotate_about_x(s, phi)
    assert math.isclose(np.trace(r.cov), np.trace(s.cov), rel_tol=1e-12)
    assert math.isclose(np.linalg.det(r.cov), np.linalg.det(s.cov), rel_tol=1e-9, abs_tol=1e-6)
    back = rotate_about_x(r, -phi)
    np.testing.assert_allclose(back.mean, s.mean, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(back.cov, s.cov, rtol=1e-12, atol=1e-6)


def test_scattering_window_factor():
    d = apply_scattering(pcss_new(1.0), 3.81e8, DecoherenceParams()).coherence_factor
    assert math.isclose(d, math.exp(-0.1143), rel_tol=1e-12)
    assert abs(d - 0.8920) < 5e-5


def test_scattering_trivial_cases():
    s = pcss_new(N)
    assert apply_scattering(s, 0, DecoherenceParams()) is s
    assert apply_scattering(s, 1e9, DecoherenceParams(eta_per_photon=0)) is s
    with pytest.raises(ValueError):
        apply_scattering(s, -1, DecoherenceParams())


def test_scattering_multiplicative_on_mean():
    p = DecoherenceParams()
    s = pcss_new(N)
    two = apply_scattering(apply_scattering(s, 1e8, p), 2e8, p)
    one = apply_scattering(s, 3e8, p)
    np.testing.assert_allclose(two.mean, one.mean, rtol=1e-14)
    np.testing.assert_allclose(two.cov, one.cov, rtol=1e-12)


def test_scattering_relaxes_toward_floor():
    s = apply_scattering(css_new(N), 1e12, DecoherenceParams())
    np.testing.assert_allclose(s.cov, np.eye(3) * N / 2, rtol=1e-9)
    assert np.max(np.abs(s.mean)) < 1e-6 * N


def test_dephasing():
    s = apply_dephasing(pcss_new(1.56e6 / 1.0), 0.93)
    assert math.isclose(s.mean[1], 1.45e6, rel_tol=2e-3)
    base = pcss_new(N)
    assert apply_dephasing(base, 1.0) is base
    twice = apply_dephasing(apply_dephasing(base, 0.9), 0.9)
    np.testing.assert_allclose(twice.mean, apply_dephasing(base, 0.81).mean, rtol=1e-14)
    for bad in (0.0, 1.2, -0.1):
        with pytest.raises(ValueError):
            apply_dephasing(base, bad)


def test_backaction_increment():
    s = backaction_inject(pcss_new(N), 1.48e-7, 2.74e6)
    inc = s.cov[0, 0] - N / 2
    assert math.isclose(inc, 1.48e-7**2 * 2.74e6 / 4 * N**2, rel_tol=1e-12)
    assert abs(inc - 4.60e4) < 50
    assert np.array_equal(s.cov[1:, 1:], pcss_new(N).cov[1:, 1:])


def test_backaction_trivial():
    s = pcss_new(N)
    assert backaction_inject(s, 0.0, 1e6) is s
    assert backaction_inject(s, 1e-7, 0.0) is s


def test_decoherence_params_validation():
    with pytest.raises(ValueError):
        DecoherenceParams(eta_per_photon=-1)
    with pytest.raises(ValueError):
        DecoherenceParams(p_return=1.5)
    with pytest.raises(ValueError):
        DecoherenceParams(eta_dec=0)


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_ops=st.integers(1, 40))
def test_robertson_and_psd_survive_random_sequences(seed, n_ops):
    rng = np.random.default_rng(seed)
    n = rng.uniform(1, 1e7)
    s = pcss_new(n) if rng.random() < 0.5 else css_new(n)
    p = DecoherenceParams(eta_per_photon=10 ** rng.uniform(-11, -8))
    for _ in range(n_ops):
        op = rng.integers(4)
        if op == 0:
            s = rotate_about_x(s, rng.uniform(-7, 7))
        elif op == 1:
            s = backaction_inject(s, 10 ** rng.uniform(-8, -6), 10 ** rng.uniform(3, 7))
        elif op == 2:
            s = apply_scattering(s, 10 ** rng.uniform(3, 9), p)
        else:
            s = apply_dephasing(s, rng.uniform(0.3, 1.0))
    assert s.robertson_holds()
    assert np.linalg.eigvalsh(s.cov).min() >= -1e-9 * np.trace(s.cov)
    assert 0 < s.coherence_factor <= 1


def test_pcss_saturates_robertson_along_coherence():
    s = pcss_new(N)
    assert math.isclose(s.cov[0, 0] * s.cov[2, 2], s.mean[1] ** 2 / 4)
    assert s.robertson_holds()
    squeezed = GaussianSpinState(s.mean, np.diag([N / 2, N, N / 4]), N)
    assert not squeezed.robertson_holds()
