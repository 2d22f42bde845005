from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entwp.analysis import (fit_cosine, fit_phase_scan, first_moment, hockey_stick, line_fit,
                            modulation_spectrum, phase_vs_inverse_energy)
from entwp.shaper import wrap_phase
from entwp.units import (OBSERVED_MODULATION_PERIOD_FS, OBSERVED_MODULATION_UNCERTAINTY_FS,
                         UNITS, VIBRATIONAL_MODES)

TAU = np.arange(0.0, 400.0, 1.0)


def test_constant_series_has_no_period():
    s = modulation_spectrum(TAU, np.full(TAU.size, 3.0))
    assert np.isnan(s.period)


def test_recovers_pure_period():
    s = modulation_spectrum(TAU, 1.0 + 0.2 * np.cos(2 * np.pi * TAU / 28.0))
    assert abs(s.period - 28.0) < 0.5


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-0.05, 0.05), T=st.floats(20.0, 60.0))
def test_linear_trend_does_not_move_peak(a, b, T):
    y = 5.0 + 0.3 * np.cos(2 * np.pi * TAU / T)
    base = modulation_spectrum(TAU, y).period
    trended = modulation_spectrum(TAU, y + a + b * TAU).period
    assert trended == pytest.approx(base, rel=1e-6)
    assert abs(base - T) < 0.05 * T


def test_nonuniform_axis_rejected():
    tau = np.array([0.0, 1.0, 2.5, 3.0, 4.0])
    with pytest.raises(ValueError):
        modulation_spectrum(tau, np.ones(5))
    with pytest.raises(ValueError):
        modulation_spectrum(np.arange(3.0), np.ones(3))


def test_mode_table_within_observed_band():
    periods = [UNITS.wavenumber_to_period_fs(wn) for _, wn, _ in VIBRATIONAL_MODES]
    lo = OBSERVED_MODULATION_PERIOD_FS - OBSERVED_MODULATION_UNCERTAINTY_FS
    hi = OBSERVED_MODULATION_PERIOD_FS + OBSERVED_MODULATION_UNCERTAINTY_FS
    assert all(lo <= p <= hi for p in periods)
    # the 1189 cm^-1 stretch: 1 / (1189 cm^-1 * c)
    assert periods[-1] == pytest.approx(1e15 / (1189 * 2.99792458e10), rel=1e-9)


PHI = np.linspace(0, 2 * np.pi, 16, endpoint=False)


def test_exact_cosine_fit():
    y = 1.0 + 0.5 * np.cos(PHI - 0.7)
    (c0, A, B), _, rms = fit_cosine(PHI, y)
    assert c0 == pytest.approx(1.0, abs=1e-10)
    assert np.hypot(A, B) == pytest.approx(0.5, abs=1e-10)
    assert np.arctan2(B, A) == pytest.approx(0.7, abs=1e-10)
    assert rms < 1e-10


@settings(max_examples=50, deadline=None)
@given(c0=st.floats(0.5, 5), c1=st.floats(0.01, 0.5), d=st.floats(-np.pi, np.pi),
       shift=st.floats(-np.pi, np.pi))
def test_fit_shift_equivariance(c0, c1, d, shift):
    y = c0 + c1 * np.cos(PHI - d)
    f0 = fit_phase_scan(PHI, y[None, :])[0]
    f1 = fit_phase_scan(PHI + shift, y[None, :])[0]
    assert abs(wrap_phase(f1.phase - f0.phase - shift)) < 1e-8
    assert f1.c1 == pytest.approx(f0.c1, rel=1e-9)


def test_phase_linear_in_inverse_energy():
    # dPhi(E) = 0.2 + 3/E recovered with slope 3 and intercept 0.2
    E = np.linspace(2.0, 8.0, 40)
    Y = 1.0 + 0.3 * np.cos(PHI[None, :] - (0.2 + 3.0 / E)[:, None])
    fits = fit_phase_scan(PHI, Y)
    x, ph = phase_vs_inverse_energy(fits, E)
    slope, icpt, r2 = line_fit(x, ph)
    assert slope == pytest.approx(3.0, abs=1e-6)
    assert wrap_phase(icpt - 0.2) == pytest.approx(0.0, abs=1e-6)
    assert r2 > 0.999999


def test_flat_phase_when_no_coherence():
    E = np.linspace(2.0, 8.0, 20)
    Y = 1.0 + 0.3 * np.cos(PHI[None, :] - 0.4) * np.ones((20, 1))
    x, ph = phase_vs_inverse_energy(fit_phase_scan(PHI, Y), E)
    assert np.allclose(ph, 0.4, atol=1e-9)


def test_second_harmonic_has_no_first_harmonic():
    Y = 1.0 + 0.3 * np.cos(2 * PHI - 0.5)
    f = fit_phase_scan(PHI, Y[None, :])[0]
    assert f.c1 < 1e-12
    assert not f.significant


def test_significance_and_weights(rng):
    Y = 1.0 + 0.01 * rng.standard_normal((2, PHI.size))
    Y[0] += 0.5 * np.cos(PHI)
    sig = np.full(Y.shape, 0.01)
    f = fit_phase_scan(PHI, Y, sig)
    assert f[0].significant and not f[1].significant
    # a zero error in one row falls back to an unweighted fit for that row
    sig[1, 3] = 0.0
    g = fit_phase_scan(PHI, Y, sig)
    ref = fit_phase_scan(PHI, Y[1:])[0]
    assert g[1].phase == pytest.approx(ref.phase)
    with pytest.raises(ValueError):
        fit_phase_scan(PHI[:2], Y[:, :2])
    with pytest.raises(ValueError):
        fit_cosine(PHI, Y[0], -np.ones(PHI.size))


def test_first_moment_examples():
    E = np.array([1.0, 2.0, 3.0])
    Y = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 2.0]])
    assert np.allclose(first_moment(E, Y), [2.0, 3.0])
    with pytest.raises(ValueError):
        first_moment(E, np.zeros((3, 2)))


def test_hockey_stick_shape():
    x = np.linspace(0.1, 0.6, 101)
    w = np.exp(-((x - 0.3) / 0.08) ** 2)
    phase = np.where(x >= 0.3, 20 * (x - 0.3), 20 * (x - 0.3) + 30 * (x - 0.3) ** 2)
    h = hockey_stick(x, phase, w)
    assert h.leading_r2 == pytest.approx(1.0, abs=1e-12)
    assert h.trailing_departure > 0.3
    assert h.holds()
    straight = hockey_stick(x, 20 * (x - 0.3), w)
    assert straight.trailing_departure < 1e-10 and not straight.holds()


def test_hockey_stick_too_few_points():
    x = np.linspace(0, 1, 10)
    w = np.zeros(10)
    w[-1] = 1.0
    h = hockey_stick(x, x, w)
    assert h.leading_r2 == 0.0 and not h.holds()
