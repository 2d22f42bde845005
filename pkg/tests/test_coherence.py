from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entwp.coherence import (NegativeYieldError, TwoStateSystem, bin_in_energy,
                             coherence_density, coherence_from_states,
                             decoherence_decomposition, delay_scan, dication_yield,
                             energy_bins_from_R, instantaneous_yield, ionization_amplitudes,
                             phase_scan, vibrational_modulation, yield_from_states)
from entwp.pipeline import build_system
from entwp.potentials import PotentialPair, SpatialGrid, build_spline_potential
from entwp.propagator import (PropagationParams, TwoStateWavepacket, init_gaussian,
                              propagate_pair)
from entwp.units import UNITS

PHI = np.linspace(0, 2 * np.pi, 16, endpoint=False)


@pytest.fixture(scope="module")
def sys_(default_cfg):
    return build_system(default_cfg)


def _times(traj):
    return [traj.times[i] for i in (0, 10, 40, 80, len(traj.times) - 1)]


def test_coherence_equals_product_of_full_solutions(model_traj):
    wp = model_traj.wavepacket
    for t in _times(model_traj):
        c1, c2 = model_traj.state_at(t)
        ref = wp.a1 * np.conj(wp.a2) * c1.psi * np.conj(c2.psi)
        assert np.max(np.abs(coherence_density(model_traj, t) - ref)) < 1e-12 * np.max(np.abs(ref))


def test_coherence_at_time_zero(model_traj):
    c1, _ = model_traj.snapshot(0)
    rho = coherence_density(model_traj, 0.0, 1 / np.sqrt(2), 1 / np.sqrt(2))
    assert np.allclose(rho, c1.density / 2, atol=1e-15)


def test_coherence_vanishes_without_second_state(model_traj):
    rho = coherence_density(model_traj, model_traj.times[30], 1.0, 0.0)
    assert np.all(rho == 0)


def test_cauchy_schwarz_bound(model_traj):
    wp = model_traj.wavepacket
    dR = model_traj.grid.dR
    for t in _times(model_traj):
        total = np.sum(np.abs(coherence_density(model_traj, t))) * dR
        assert total <= abs(wp.a1) * abs(wp.a2) * (1 + 1e-9)


def test_ionization_amplitude_examples():
    s = TwoStateSystem(m=4, photon_separation=1)
    assert ionization_amplitudes(s, 0.5) == (pytest.approx(0.0625), pytest.approx(0.125))
    s2 = TwoStateSystem(m=5, photon_separation=2, Q1f=2.0, Q2f=1j)
    b1, b2 = ionization_amplitudes(s2, 2.0)
    assert b1 == pytest.approx(64.0) and b2 == pytest.approx(8j)
    with pytest.raises(ValueError):
        ionization_amplitudes(s, -1.0)


def test_system_validation():
    with pytest.raises(ValueError):
        TwoStateSystem(m=1)
    with pytest.raises(ValueError):
        TwoStateSystem(m=4, photon_separation=4)
    with pytest.raises(ValueError):
        TwoStateSystem(probe_amplitude=-1.0)


def test_yield_independent_of_phase_without_coherence(model_traj, sys_):
    s = dataclasses.replace(sys_, a1=1.0, a2=0.0)
    Y, tot = dication_yield(s, model_traj, model_traj.times[50], PHI)
    assert np.allclose(Y, Y[0], rtol=0, atol=1e-15)
    assert np.ptp(tot) == 0.0


@pytest.mark.parametrize("K", [1, 2, 3])
def test_single_harmonic_per_photon_separation(model_traj, sys_, K):
    s = dataclasses.replace(sys_, m=max(sys_.m, K + 1), photon_separation=K)
    _, tot = dication_yield(s, model_traj, model_traj.times[40], PHI)
    spec = np.abs(np.fft.rfft(tot)) / PHI.size
    others = np.delete(spec[1:], K - 1)
    assert spec[K] > 1e-6 * spec[0]
    assert np.all(others < 1e-12 * spec[0])


def test_phase_average_is_incoherent_sum(model_traj, sys_):
    t = model_traj.times[60]
    Y, _ = dication_yield(sys_, model_traj, t, PHI)
    c1, c2 = model_traj.state_at(t)
    b1, b2 = ionization_amplitudes(sys_, sys_.probe_amplitude)
    inc = abs(sys_.a1) ** 2 * abs(b1) ** 2 * c1.density + abs(sys_.a2) ** 2 * abs(b2) ** 2 * c2.density
    assert np.allclose(Y.mean(axis=0), inc, rtol=1e-12, atol=1e-18)


def test_negative_yield_detected():
    g = SpatialGrid(0.0, 10.0, 64)
    chi = init_gaussian(g, 5.0, 1.0)
    rho = 10.0 * chi.density.astype(complex)
    with pytest.raises(NegativeYieldError):
        yield_from_states(TwoStateSystem(), chi, chi, rho, np.pi)


@settings(max_examples=25, deadline=None)
@given(E0=st.floats(0.1, 2.0), phi=st.floats(-np.pi, np.pi))
def test_instantaneous_matches_phase_form(model_traj, E0, phi):
    s = TwoStateSystem(probe_amplitude=E0, Q2f=0.7 - 0.2j)
    t = model_traj.times[20]
    c1, c2 = model_traj.state_at(t)
    V1, V2 = model_traj.potentials_on_grid()
    rho = coherence_from_states(c1, c2, V1, V2, t, s.a1, s.a2)
    # the phase form carries a1 a2* once more on top of the one inside rho12
    a = instantaneous_yield(s, c1, c2, s.a1 * np.conj(s.a2) * rho, E0 * np.exp(1j * phi))
    b = yield_from_states(s, c1, c2, rho, phi)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-14 * np.max(b))


def test_instantaneous_limits(model_traj):
    s = TwoStateSystem(a1=1.0, a2=0.0)
    c1, c2 = model_traj.snapshot(10)
    rho = np.zeros(model_traj.grid.N, complex)
    assert np.all(instantaneous_yield(s, c1, c2, rho, 0.0) == 0)
    Y = instantaneous_yield(s, c1, c2, rho, 0.5)
    assert np.allclose(Y, 0.5 ** (2 * s.m) * c1.density)
    assert instantaneous_yield(s, c1, c2, rho, [0.1, 0.2]).shape == (2, model_traj.grid.N)


def test_energy_binning_conserves_yield():
    g = SpatialGrid(1.0, 60.0, 512)
    r = np.random.default_rng(0).random(g.N)
    edges = np.linspace(0.01, 1.01, 41)
    assert bin_in_energy(r, g, edges).sum() == pytest.approx(r.sum() * g.dR, rel=1e-12)
    idx = energy_bins_from_R(g, edges)
    assert np.all(idx >= 0)
    with pytest.raises(ValueError):
        energy_bins_from_R(g, edges[::-1])


def test_energy_bin_edges_map_through_coulomb():
    g = SpatialGrid(1.0, 9.0, 8)  # R = 1, 2, ..., 8 bohr
    idx = energy_bins_from_R(g, np.array([0.2, 0.3, 0.6]))
    # E = 1/R: 1, 0.5, 0.333, 0.25, 0.2, 0.167, ...
    assert list(idx) == [-1, 1, 1, 0, 0, -1, -1, -1]


def test_vibrational_modulation():
    tau = np.array([0.0, 7.0, 14.0])
    assert np.array_equal(vibrational_modulation(tau, None, 0.3), np.ones(3))
    assert np.allclose(vibrational_modulation(tau, 28.0, 0.3), [1.3, 1.0, 0.7])


def test_delay_scan_phase_average_removes_coherence(model_traj, sys_):
    edges = UNITS.ev_to_hartree(np.arange(0.5, 10.01, 0.5))
    taus = np.array([0.0, 30.0, 60.0])
    avg = delay_scan(sys_, model_traj, taus, edges)
    inc = delay_scan(dataclasses.replace(sys_, a2=0.0), model_traj, taus, edges) + \
        delay_scan(dataclasses.replace(sys_, a1=0.0), model_traj, taus, edges)
    assert np.allclose(avg, inc, rtol=1e-10, atol=1e-20)
    assert phase_scan(sys_, model_traj, UNITS.fs_to_au(30.0), PHI, edges).shape == (edges.size - 1, 16)


def _two_state(offset):
    g = SpatialGrid(1.0, 30.0, 512)
    c = build_spline_potential([(2.9, 0.0), (3.6, -0.04), (4.4, -0.025), (6.0, -0.08)])
    chi = init_gaussian(g, 3.0, 0.1)
    wp = TwoStateWavepacket(chi, chi, PotentialPair(c, c, offset))
    return propagate_pair(wp, PropagationParams(dt=0.5, total_time=2000, snapshot_interval=100))


def test_decoherence_split_for_parallel_curves():
    d = decoherence_decomposition(_two_state(0.01))
    assert np.allclose(d.overlap, 1.0, atol=1e-10)
    assert np.allclose(d.contrast, 1.0, atol=1e-10)
    assert np.allclose(d.pop1 + d.pop2, 1.0)


def test_decoherence_of_model(model_traj):
    d = decoherence_decomposition(model_traj)
    assert d.overlap[0] == pytest.approx(1.0, abs=1e-12)
    assert d.contrast[0] == pytest.approx(1.0, abs=1e-12)
    assert np.all(d.overlap <= 1 + 1e-12) and np.all((d.contrast >= 0) & (d.contrast <= 1 + 1e-12))
    assert d.overlap[-1] < d.overlap[0]
