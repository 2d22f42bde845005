"""Electronic coherence, ionization amplitudes and the dication yield.

The propagated wavefunctions from :mod:`entwp.propagator` are full TDSE
solutions, i.e. they already carry the local electronic phase
``exp(-i V_i(R) t)``. The coherence is built from the slowly varying nuclear
envelopes ``chi_i exp(+i V_i t)`` times ``exp(i (omega_2 - omega_1) t)``,
which is numerically the same as ``a1 conj(a2) chi1 conj(chi2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .potentials import SpatialGrid, coulomb_energy_distance
from .propagator import Trajectory, Wavefunction, overlap
from .units import PHOTON_ENERGY_EV, UNITS


class NegativeYieldError(ArithmeticError):
    """The yield model produced a negative value: inconsistent magnitudes."""


@dataclass(frozen=True)
class TwoStateSystem:
    """Excitation/ionization parameters of the two-state model.

    ``photon_separation`` is the number of photons K between the two states;
    the probe then ionizes state 2 with ``m - K`` photons and the coherent
    term carries ``exp(i K phi)``. ``probe_amplitude`` is E'_0 = A_R E_0.
    """

    a1: complex = 1 / np.sqrt(2)
    a2: complex = 1 / np.sqrt(2)
    Q1f: complex = 1.0
    Q2f: complex = 1.0
    n: int = 4
    m: int = 4
    photon_separation: int = 1
    photon_energy: float = UNITS.ev_to_hartree(PHOTON_ENERGY_EV)
    probe_amplitude: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("pump photon order n must be >= 1")
        if self.m < 2:
            raise ValueError("probe photon order m must be >= 2 (double ionization)")
        if not 1 <= self.photon_separation < self.m:
            raise ValueError("photon separation K must satisfy 1 <= K < m")
        for v in (self.a1, self.a2, self.Q1f, self.Q2f, self.probe_amplitude):
            if not np.isfinite(v):
                raise ValueError("amplitudes must be finite")
        if self.probe_amplitude < 0:
            raise ValueError("probe amplitude must be non-negative")


def ionization_amplitudes(sys: TwoStateSystem, E_probe_peak: float) -> tuple[complex, complex]:
    """Perturbative amplitudes b1 = Q1f E^m and b2 = Q2f E^(m-K)."""
    if E_probe_peak < 0:
        raise ValueError("probe field amplitude must be non-negative")
    b1 = sys.Q1f * E_probe_peak**sys.m
    b2 = sys.Q2f * E_probe_peak ** (sys.m - sys.photon_separation)
    return complex(b1), complex(b2)


def coherence_from_states(chi1: Wavefunction, chi2: Wavefunction, V1: np.ndarray,
                          V2: np.ndarray, t: float, a1: complex, a2: complex) -> np.ndarray:
    env1 = chi1.psi * np.exp(1j * V1 * t)
    env2 = chi2.psi * np.exp(1j * V2 * t)
    return a1 * env1 * np.conj(a2 * env2) * np.exp(1j * (V2 - V1) * t)


def coherence_density(traj: Trajectory, t: float, a1: complex | None = None,
                      a2: complex | None = None) -> np.ndarray:
    """rho_12(R, t) on the trajectory grid."""
    wp = traj.wavepacket
    a1 = wp.a1 if a1 is None else a1
    a2 = wp.a2 if a2 is None else a2
    chi1, chi2 = traj.state_at(t)
    V1, V2 = traj.potentials_on_grid()
    return coherence_from_states(chi1, chi2, V1, V2, t, a1, a2)


def instantaneous_yield(sys: TwoStateSystem, chi1: Wavefunction, chi2: Wavefunction,
                        rho12: np.ndarray, probe_field) -> np.ndarray:
    """Y(R, t) for instantaneous (complex) probe field value(s) E_pr(t).

    Amplitudes are b1 = Q1f E^m and b2 = Q2f E^(m-K); rho12 already holds
    a1 a2*. Returns shape ``(len(E), N)`` or ``(N,)``.
    """
    E = np.atleast_1d(np.asarray(probe_field, dtype=complex))[:, None]
    b1 = sys.Q1f * E**sys.m
    b2 = sys.Q2f * E ** (sys.m - sys.photon_separation)
    Y = (abs(sys.a1) ** 2 * np.abs(b1) ** 2 * chi1.density
         + abs(sys.a2) ** 2 * np.abs(b2) ** 2 * chi2.density
         + 2.0 * np.real(b1 * np.conj(b2) * rho12[None, :]))
    return Y[0] if np.ndim(probe_field) == 0 else Y


def yield_from_states(sys: TwoStateSystem, chi1: Wavefunction, chi2: Wavefunction,
                      rho12: np.ndarray, phi) -> np.ndarray:
    """R-resolved yield for one or many phases; shape ``(len(phi), N)`` or ``(N,)``.

    The incoherent terms are weighted by the state densities |chi_i(R)|^2 so
    the yield follows the packets in R.
    """
    b1, b2 = ionization_amplitudes(sys, sys.probe_amplitude)
    pop1 = abs(sys.a1) ** 2 * abs(b1) ** 2 * chi1.density
    pop2 = abs(sys.a2) ** 2 * abs(b2) ** 2 * chi2.density
    pref = sys.a1 * np.conj(sys.a2) * b1 * np.conj(b2)
    phi_arr = np.atleast_1d(np.asarray(phi, dtype=float))
    coh = 2.0 * np.real(pref * np.exp(1j * sys.photon_separation * phi_arr)[:, None] * rho12[None, :])
    Y = pop1 + pop2 + coh
    scale = max(float(np.max(pop1 + pop2)), np.finfo(float).tiny)
    if np.min(Y) < -1e-9 * scale:
        raise NegativeYieldError(
            f"yield went negative ({np.min(Y):.3e}); check amplitude magnitudes")
    Y = np.maximum(Y, 0.0)
    return Y[0] if np.ndim(phi) == 0 else Y


def dication_yield(sys: TwoStateSystem, traj: Trajectory, tau: float, phi) -> tuple[np.ndarray, np.ndarray]:
    """Yield Y(R, tau, phi) and its R-integral; ``tau`` in atomic time."""
    chi1, chi2 = traj.state_at(tau)
    V1, V2 = traj.potentials_on_grid()
    rho12 = coherence_from_states(chi1, chi2, V1, V2, tau, sys.a1, sys.a2)
    Y = yield_from_states(sys, chi1, chi2, rho12, phi)
    return Y, Y.sum(axis=-1) * traj.grid.dR


def energy_bins_from_R(grid: SpatialGrid, ker_edges: np.ndarray) -> np.ndarray:
    """Bin index (or -1) of every grid point under the Coulomb map E = 1/R.

    ``ker_edges`` are in hartree and strictly increasing.
    """
    edges = np.asarray(ker_edges, dtype=float)
    if np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    E = coulomb_energy_distance(grid.R)
    idx = np.searchsorted(edges, E, side="right") - 1
    idx[(E < edges[0]) | (E >= edges[-1])] = -1
    return idx


def bin_in_energy(Y: np.ndarray, grid: SpatialGrid, ker_edges: np.ndarray) -> np.ndarray:
    """Integrate R-resolved yield(s) over the R-range of each KER bin."""
    idx = energy_bins_from_R(grid, ker_edges)
    nb = len(ker_edges) - 1
    Y2 = np.atleast_2d(Y)
    out = np.zeros((Y2.shape[0], nb))
    ok = idx >= 0
    for r in range(Y2.shape[0]):
        out[r] = np.bincount(idx[ok], weights=Y2[r, ok], minlength=nb) * grid.dR
    return out[0] if Y.ndim == 1 else out


def phase_scan(sys: TwoStateSystem, traj: Trajectory, tau: float, phis: np.ndarray,
               ker_edges: np.ndarray) -> np.ndarray:
    """Energy-binned yield at fixed delay; shape ``(n_bins, n_phi)``."""
    Y, _ = dication_yield(sys, traj, tau, np.asarray(phis, dtype=float))
    return bin_in_energy(Y, traj.grid, ker_edges).T


def vibrational_modulation(tau_fs, period_fs: float | None, depth: float):
    """Multiplicative yield modulation 1 + depth cos(2 pi tau / period).

    The 1D dissociation model has no transverse vibrations; this injects one.
    """
    tau_fs = np.asarray(tau_fs, dtype=float)
    if period_fs is None or depth == 0:
        return np.ones_like(tau_fs)
    return 1.0 + depth * np.cos(2.0 * np.pi * tau_fs / period_fs)


def delay_scan(sys: TwoStateSystem, traj: Trajectory, taus_fs: np.ndarray, ker_edges: np.ndarray,
               n_phase_average: int = 8, fixed_phase: float | None = None,
               vib_period_fs: float | None = None, vib_depth: float = 0.0) -> np.ndarray:
    """Energy-binned yield versus delay; shape ``(n_bins, n_tau)``.

    With ``fixed_phase`` None the yield is averaged over ``n_phase_average``
    evenly spaced phases, which removes the coherent term exactly.
    """
    taus_fs = np.asarray(taus_fs, dtype=float)
    if fixed_phase is None:
        phis = 2.0 * np.pi * np.arange(n_phase_average) / n_phase_average
    else:
        phis = np.array([fixed_phase])
    out = np.empty((len(ker_edges) - 1, taus_fs.size))
    mod = vibrational_modulation(taus_fs, vib_period_fs, vib_depth)
    for j, tau in enumerate(taus_fs):
        Y, _ = dication_yield(sys, traj, UNITS.fs_to_au(tau), phis)
        out[:, j] = bin_in_energy(Y, traj.grid, ker_edges).mean(axis=0) * mod[j]
    return out


@dataclass(frozen=True)
class DecoherenceSeries:
    times: np.ndarray
    overlap: np.ndarray
    contrast: np.ndarray
    pop1: np.ndarray
    pop2: np.ndarray


def decoherence_decomposition(traj: Trajectory, a1: complex | None = None,
                              a2: complex | None = None) -> DecoherenceSeries:
    """Overlap loss, dephasing contrast and populations at every snapshot.

    contrast = |int rho12 dR| / int |rho12| dR; NaN where the denominator
    vanishes.
    """
    wp = traj.wavepacket
    a1 = wp.a1 if a1 is None else a1
    a2 = wp.a2 if a2 is None else a2
    V1, V2 = traj.potentials_on_grid()
    dR = traj.grid.dR
    n = len(traj.times)
    ov = np.empty(n)
    con = np.empty(n)
    for i, t in enumerate(traj.times):
        c1, c2 = traj.snapshot(i)
        ov[i] = abs(overlap(c1, c2))
        rho = coherence_from_states(c1, c2, V1, V2, t, a1, a2)
        den = np.sum(np.abs(rho)) * dR
        con[i] = abs(np.sum(rho) * dR) / den if den > 1e-300 else np.nan
    pops = np.ones(n)
    return DecoherenceSeries(traj.times.copy(), ov, con, abs(a1) ** 2 * pops, abs(a2) ** 2 * pops)
