"""Numbered acceptance checks shared by ``entwp reproduce`` and the test suite.

Every check returns a :class:`CheckResult` with the measured quantities in
``detail``; none of them raise on failure.
"""
from __future__ import annotations

import hashlib
import math
import time
import tracemalloc
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import fit_phase_scan, modulation_spectrum
from .coherence import ionization_amplitudes, phase_scan
from .config import RunConfig
from .covariance import (CoincidenceRateWarning, CovarianceAccumulator, PairSelection,
                         coincidence_oracle, covariance_map, map_correlation)
from .events import EventModel, YieldMap, iter_pair_events, sample_pair_events
from .pipeline import (build_grid, build_pair, build_system, hockey_at, ker_edges,
                       propagate_model, run_ensemble)
from .potentials import PotentialPair, SpatialGrid
from .propagator import (PropagationParams, SplitOperator, TwoStateWavepacket, init_gaussian,
                         overlap, phase_difference, propagate_pair)
from .shaper import (PulseSpec, ShaperMask, fwhm, nphoton_effective_field, shaped_field,
                     shaper_mask, wrap_phase)
from .units import OBSERVED_MODULATION_PERIOD_FS, OBSERVED_MODULATION_UNCERTAINTY_FS, UNITS, \
    VIBRATIONAL_MODES


@dataclass
class CheckResult:
    number: int
    title: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        bits = ", ".join(f"{k}={_short(v)}" for k, v in self.detail.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.title}: {bits} ({self.seconds:.1f} s)"


def _short(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.4g}"
    return str(v)


def _timed(number: int, title: str, fn, *args, **kw) -> CheckResult:
    t0 = time.perf_counter()
    passed, detail = fn(*args, **kw)
    return CheckResult(number, title, bool(passed), detail, time.perf_counter() - t0)


# 1 ---------------------------------------------------------------------------

def _unitarity(nsteps: int = 100_000, n_grid: int = 128):
    grid = SpatialGrid(1.0, 60.0, n_grid)
    mass = 1836.0
    V = 0.5 * mass * 0.01**2 * (grid.R - 30.0) ** 2
    chi = init_gaussian(grid, 32.0, 1.5, mass=mass)
    op = SplitOperator(grid, V, mass, 0.5)
    op.evolve(chi, 2)           # compile outside the timed region
    t0 = time.perf_counter()
    out = op.evolve(chi, nsteps)
    dt = time.perf_counter() - t0
    drift = abs(out.norm() - chi.norm())
    return drift < 1e-10 and dt < 1.0, {"norm_drift": drift, "steps": nsteps, "grid": n_grid,
                                         "runtime_s": dt}


def check_unitarity() -> CheckResult:
    return _timed(1, "split-operator unitarity", _unitarity)


# 2 ---------------------------------------------------------------------------

def free_spreading_error(sigma0: float = 0.2, mass: float = 1836.0, t: float = 200.0,
                         dt: float = 0.5) -> float:
    grid = SpatialGrid(1.0, 41.0, 2048)
    chi = init_gaussian(grid, 20.0, sigma0, mass=mass)
    out = SplitOperator(grid, 0.0, mass, dt).evolve(chi, int(round(t / dt)))
    expect = sigma0 * math.sqrt(1.0 + (t / (2.0 * mass * sigma0**2)) ** 2)
    return abs(math.sqrt(out.variance_R()) - expect) / expect


def harmonic_return_error(mass: float = 1836.0, omega: float = 0.01, amp: float = 1.0,
                          dt: float = 0.05) -> float:
    grid = SpatialGrid(1.0, 41.0, 1024)
    centre = 20.0
    sigma = math.sqrt(1.0 / (2.0 * mass * omega))
    V = 0.5 * mass * omega**2 * (grid.R - centre) ** 2
    chi = init_gaussian(grid, centre + amp, sigma, mass=mass)
    period = 2.0 * math.pi / omega
    n = int(round(period / dt))
    out = SplitOperator(grid, V, mass, period / n).evolve(chi, n)
    return abs(out.mean_R() - chi.mean_R())


def gaussian_overlap_error(sigma: float = 0.3, d: float = 0.5) -> float:
    grid = SpatialGrid(1.0, 41.0, 4096)
    g1 = init_gaussian(grid, 20.0, sigma)
    g2 = init_gaussian(grid, 20.0 + d, sigma)
    return abs(abs(overlap(g1, g2)) - math.exp(-d * d / (8.0 * sigma**2)))


def _oracles():
    e1 = free_spreading_error()
    e2 = harmonic_return_error()
    e3 = gaussian_overlap_error()
    return e1 < 1e-6 and e2 < 1e-4 and e3 < 1e-6, {
        "spreading_rel_err": e1, "harmonic_return_bohr": e2, "overlap_err": e3}


def check_oracles() -> CheckResult:
    return _timed(2, "analytic propagation oracles", _oracles)


# 3 ---------------------------------------------------------------------------

def constant_offset_phase_error(offset_ev: float = 0.5, total_fs: float = 50.0) -> float:
    cfg = RunConfig()
    pair0 = build_pair(cfg)
    pair = PotentialPair(pair0.V1, pair0.V1, UNITS.ev_to_hartree(offset_ev))
    grid = build_grid(cfg)
    chi = init_gaussian(grid, UNITS.angstrom_to_bohr(1.6), UNITS.angstrom_to_bohr(0.05))
    traj = propagate_pair(TwoStateWavepacket(chi, chi, pair),
                          PropagationParams.from_fs(0.5, total_fs, 5.0, absorber_strength=1.0))
    worst = 0.0
    for i, t in enumerate(traj.times):
        c1, c2 = traj.snapshot(i)
        d = phase_difference(c1, c2)
        ok = np.isfinite(d)
        err = np.abs(wrap_phase(d[ok] + pair.constant_offset * t))
        worst = max(worst, float(err.max()))
    return worst


def _dephasing():
    e = constant_offset_phase_error()
    return e < 1e-8, {"max_phase_err_rad": e}


def check_dephasing() -> CheckResult:
    return _timed(3, "constant-offset dephasing law", _dephasing)


# 4 ---------------------------------------------------------------------------

def _hockey(cfg: RunConfig, threads: int, precomputed):
    if precomputed is None:
        t0 = time.perf_counter()
        traj = propagate_model(cfg, cfg.scan.phase_delay_fs)
        base, _, _ = hockey_at(cfg, traj, cfg.scan.phase_delay_fs)
        rows = run_ensemble(cfg, threads)
        dt = time.perf_counter() - t0
    else:
        base, rows, dt = precomputed
    frac = float(rows[:, 3].mean())
    return base.holds and frac >= 0.9 and dt < 300.0, {
        "base_r2": base.r2, "base_departure": base.departure,
        "persistence": frac, "members": len(rows), "runtime_s": dt}


def check_hockey_stick(cfg: RunConfig | None = None, threads: int = 1,
                       precomputed=None) -> CheckResult:
    """``precomputed`` is ``(HockeyResult, ensemble_rows, seconds)`` from a pipeline run."""
    return _timed(4, "hockey stick and ensemble persistence", _hockey, cfg or RunConfig(),
                  threads, precomputed)


# 5 ---------------------------------------------------------------------------

def phase_harmonic(Y: np.ndarray) -> int:
    """Dominant harmonic of the phase dependence, pooled over energy bins."""
    spec = np.abs(np.fft.rfft(Y, axis=1)) ** 2
    return int(np.argmax(spec[:, 1:].sum(axis=0)) + 1)


def _harmonics(cfg: RunConfig):
    traj = propagate_model(cfg, cfg.scan.phase_delay_fs)
    edges = UNITS.ev_to_hartree(ker_edges(cfg.scan.ker_min_ev, cfg.scan.ker_max_ev, 0.1))
    phis = 2.0 * np.pi * np.arange(32) / 32
    tau = UNITS.fs_to_au(cfg.scan.phase_delay_fs)
    out = {}
    ok = True
    for K in (1, 2, 3):
        base = build_system(cfg)
        sys_k = replace(base, m=max(base.m, K + 1), photon_separation=K)
        Y = phase_scan(sys_k, traj, tau, phis, edges)
        h = phase_harmonic(Y)
        out[f"harmonic_K{K}"] = h
        ok &= h == K
        fits = fit_phase_scan(phis, Y)
        scale = float(Y.max())
        if K == 1:
            rms = max(f.residual_rms for f in fits)
            out["K1_fit_residual"] = rms
            out["K1_fit_residual_rel"] = rms / scale
            ok &= rms < 1e-10
        else:
            c1 = max(f.c1 for f in fits) / scale
            out[f"K{K}_single_harmonic_c1_rel"] = c1
            ok &= c1 < 1e-10
    return ok, out


def check_harmonics(cfg: RunConfig | None = None) -> CheckResult:
    return _timed(5, "phase-scan harmonic count", _harmonics, cfg or RunConfig())


# 6 ---------------------------------------------------------------------------

def bandwidth_ratios(orders=(2, 4, 5)) -> dict[int, float]:
    pulse = PulseSpec()
    nu, s1 = nphoton_effective_field(pulse, 1)
    base = fwhm(nu, s1)
    out = {}
    for n in orders:
        nu, sn = nphoton_effective_field(pulse, n)
        out[n] = fwhm(nu, sn) / base / math.sqrt(n)
    return out


def _sqrt_n():
    r = bandwidth_ratios()
    return all(abs(v - 1.0) < 0.01 for v in r.values()), {f"ratio_n{n}": v for n, v in r.items()}


def check_sqrt_n() -> CheckResult:
    return _timed(6, "n-photon bandwidth scaling", _sqrt_n)


# 7 ---------------------------------------------------------------------------

def locked_mask_error(a_tot: float = 1.3, a_r: float = 0.7) -> float:
    taus = np.linspace(-500.0, 500.0, 2001)
    worst = 0.0
    for tau in taus:
        m = ShaperMask(a_tot, a_r, float(tau), 0.0)
        worst = max(worst, abs(abs(shaper_mask(m.nu_L, m)) - a_tot * (1 + a_r)))
    return worst


def interpulse_contrast(tau: float = 95.0, width: float = 7.0) -> float:
    """Largest intensity more than 2 FWHM away from both pulses, over the peak."""
    pulse = PulseSpec(fwhm=width)
    t, f = shaped_field(pulse, ShaperMask(tau=tau))
    I = np.abs(f) ** 2
    far = (np.abs(t) > 2 * width) & (np.abs(t - tau) > 2 * width)
    return float(I[far].max() / I.max())


def _mask():
    e = locked_mask_error()
    c = interpulse_contrast()
    return e < 1e-12 and c < 1e-4, {"locked_modulus_err": e, "interpulse_rel_intensity": c}


def check_mask() -> CheckResult:
    return _timed(7, "shaper mask and pulse pair", _mask)


# 8 ---------------------------------------------------------------------------

def _structured_map() -> YieldMap:
    edges = np.arange(0.5, 6.01, 0.1)
    c = 0.5 * (edges[1:] + edges[:-1])
    w = np.exp(-0.5 * ((c - 2.5) / 0.5) ** 2) + 0.4 * np.exp(-0.5 * ((c - 4.2) / 0.3) ** 2)
    return YieldMap(edges, [0.0], [0.0], w[None, :])


def _covariance(seed: int = 7, n_shots: int = 100_000):
    ym = _structured_map()
    d = {}
    clean = sample_pair_events(ym, n_shots, 0.1, {}, seed)
    cm = covariance_map(clean, 1, 2, ym.ker_edges)
    _, oracle = coincidence_oracle(clean, 1, 2, ym.ker_edges)
    d["low_rate_corr"] = map_correlation(cm.cov, oracle)
    noisy = sample_pair_events(ym, n_shots, 0.1, {1: 4.0, 2: 4.0}, seed + 1)
    cmn = covariance_map(noisy, 1, 2, ym.ker_edges)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoincidenceRateWarning)
        _, raw = coincidence_oracle(noisy, 1, 2, ym.ker_edges, epsilon=None)
    d["bg_cov_peak_bin"] = int(np.argmax(cmn.cov[:, 0]))
    d["oracle_peak_bin"] = int(np.argmax(oracle[:, 0]))
    d["raw_peak_bin"] = int(np.argmax(raw[:, 0]))
    t0 = time.perf_counter()
    one = YieldMap(np.array([1.0, 1.5]), [0.0], [0.0], [[1.0]])
    bern = covariance_map(sample_pair_events(one, n_shots, 0.5, {}, seed + 2), 1, 2, one.ker_edges)
    d["bernoulli_cov"] = float(bern.cov[0, 0])
    d["bernoulli_sigma"] = float(bern.sigma[0, 0])
    d["bernoulli_pull"] = abs(bern.cov[0, 0] - 0.25) / bern.sigma[0, 0]
    d["bernoulli_runtime_s"] = time.perf_counter() - t0
    ok = (d["low_rate_corr"] > 0.99 and d["bg_cov_peak_bin"] == d["oracle_peak_bin"]
          and d["bernoulli_pull"] < 3.0 and d["bernoulli_runtime_s"] < 60.0)
    return ok, d


def check_covariance() -> CheckResult:
    return _timed(8, "covariance versus coincidence", _covariance)


# 9 ---------------------------------------------------------------------------

def recovered_period(period: float, depth: float = 0.3, step: float = 2.0, span: float = 400.0,
                     trend: float = 0.0) -> float:
    tau = np.arange(0.0, span + step / 2, step)
    y = 1.0 + trend * tau + depth * np.cos(2 * np.pi * tau / period)
    return modulation_spectrum(tau, y).period


def _fourier(pipeline_period: float | None, injected: float):
    d = {}
    p28 = recovered_period(28.0)
    d["synthetic_28fs"] = p28
    ok = abs(p28 - 28.0) <= 1.0
    lo = OBSERVED_MODULATION_PERIOD_FS - OBSERVED_MODULATION_UNCERTAINTY_FS
    hi = OBSERVED_MODULATION_PERIOD_FS + OBSERVED_MODULATION_UNCERTAINTY_FS
    for name, wn, _ in VIBRATIONAL_MODES:
        p_in = float(UNITS.wavenumber_to_period_fs(wn))
        if lo <= p_in <= hi:
            p = recovered_period(p_in)
            d[f"mode_{int(wn)}cm"] = p
            ok &= lo <= p <= hi and abs(p - p_in) <= 1.0
    if pipeline_period is not None:
        d["pipeline_injected_fs"] = injected
        d["pipeline_recovered_fs"] = pipeline_period
        ok &= abs(pipeline_period - injected) <= 1.0 and lo <= pipeline_period <= hi
    return ok, d


def check_fourier(pipeline_period: float | None = None, injected: float = 28.0) -> CheckResult:
    return _timed(9, "Fourier period recovery", _fourier, pipeline_period, injected)


# 10 --------------------------------------------------------------------------

def end_to_end_phase_error(cfg: RunConfig, traj=None) -> tuple[float, int]:
    """Largest |fitted - propagated| phase over significant KER bins."""
    if traj is None:
        traj = propagate_model(cfg, cfg.scan.phase_delay_fs)
    tau = UNITS.fs_to_au(cfg.scan.phase_delay_fs)
    edges = UNITS.ev_to_hartree(ker_edges(cfg.scan.ker_min_ev, cfg.scan.ker_max_ev,
                                          cfg.scan.ker_step_ev))
    phis = 2.0 * np.pi * np.arange(cfg.scan.n_phases) / cfg.scan.n_phases
    system = build_system(cfg)
    Y = phase_scan(system, traj, tau, phis, edges)
    fits = fit_phase_scan(phis, Y, significance=cfg.analysis.significance,
                          min_rel_amplitude=cfg.analysis.min_rel_amplitude)
    E = 0.5 * (edges[1:] + edges[:-1])
    c1, c2 = traj.state_at(tau)
    dphi = phase_difference(c1, c2)
    ok = np.isfinite(dphi)
    R = 1.0 / E
    inside = (R >= traj.grid.R[ok].min()) & (R <= traj.grid.R[ok].max())
    ref = np.interp(R, traj.grid.R[ok], dphi[ok])
    # besides the packet phase, the coherent term carries the constant phases
    # of a1 a2* (twice: in rho12 and in the prefactor) and of b1 b2*
    b1, b2 = ionization_amplitudes(system, system.probe_amplitude)
    aa = system.a1 * np.conj(system.a2)
    const = -np.angle(aa) - np.angle(aa * b1 * np.conj(b2))
    sig = np.array([f.significant for f in fits]) & inside
    fitted = np.array([f.phase for f in fits])
    err = np.abs(wrap_phase(fitted - (ref + const)))
    return float(err[sig].max()) if sig.any() else float("inf"), int(sig.sum())


def _end_to_end(cfg: RunConfig, traj):
    e, n = end_to_end_phase_error(cfg, traj)
    return e < 0.1 and n > 0, {"max_phase_err_rad": e, "significant_bins": n}


def check_end_to_end(cfg: RunConfig | None = None, traj=None) -> CheckResult:
    return _timed(10, "fitted phase versus propagated phase", _end_to_end, cfg or RunConfig(), traj)


# 11 --------------------------------------------------------------------------

def accumulation_peak_bytes(n_events: int, seed: int = 3) -> tuple[int, int]:
    """Peak traced memory while streaming ``n_events``-ish events into the accumulator.

    Returns ``(peak_bytes, events_seen)``.
    """
    ym = _structured_map()
    model = EventModel(pair_prob=0.5, background_rates={1: 4.0, 2: 4.0})
    per_shot = 2 * 0.5 + 8.0
    n_shots = int(math.ceil(n_events / per_shot))
    acc = CovarianceAccumulator(PairSelection(1, 2, ym.ker_edges))
    seen = 0
    tracemalloc.start()
    try:
        for shot in iter_pair_events(ym, n_shots, model, seed):
            acc.add(shot)
            seen += len(shot)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return peak, seen


def file_digests(root: Path, patterns=("*.dat", "*.csv")) -> dict[str, str]:
    out = {}
    for pat in patterns:
        for p in sorted(root.rglob(pat)):
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def _scale(reference: dict[str, str] | None, current: dict[str, str] | None,
           runtime_s: float | None, small: int, large: int):
    d = {}
    ok = True
    if reference is not None and current is not None:
        same = reference == current
        d["files_compared"] = len(current)
        d["bit_identical"] = same
        ok &= same and len(current) > 0
    if runtime_s is not None:
        d["reproduce_runtime_s"] = runtime_s
        ok &= runtime_s < 900.0
    p_small, n_small = accumulation_peak_bytes(small)
    p_large, n_large = accumulation_peak_bytes(large)
    d["events_small"] = n_small
    d["events_large"] = n_large
    d["peak_bytes_small"] = p_small
    d["peak_bytes_large"] = p_large
    d["memory_ratio"] = p_large / p_small
    ok &= p_large / p_small < 1.5
    return ok, d


def check_determinism_scale(reference=None, current=None, runtime_s=None,
                            small: int = 100_000, large: int = 1_000_000) -> CheckResult:
    return _timed(11, "determinism and constant-memory accumulation", _scale,
                  reference, current, runtime_s, small, large)
