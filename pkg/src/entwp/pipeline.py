"""Pipeline stages behind the command line: model builders and file writers.

Each ``run_*`` function writes self-describing tables (and PNG plots) into an
output directory and returns the in-memory results so that stages can be
chained without re-reading files.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import plots
from .analysis import (first_moment, fit_phase_scan, hockey_stick, line_fit,
                       modulation_spectrum, phase_vs_inverse_energy)
from .coherence import TwoStateSystem, delay_scan, phase_scan
from .config import RunConfig, parse_float_list, parse_points
from .covariance import CovarianceAccumulator, CovarianceMap, PairSelection
from .events import (DEFAULT_SPECIES, DetectorCalibration, EventModel, YieldMap,
                     iter_events, iter_pair_events, read_header, write_events)
from .io import grid_to_long, long_to_grid, read_table, write_table
from .potentials import (PotentialPair, SpatialGrid, build_spline_potential,
                         has_rolldown_well_barrier)
from .propagator import (PropagationParams, Trajectory, TwoStateWavepacket,
                         init_gaussian, phase_difference, propagate_pair)
from .shaper import PulseSpec, ShaperMask, shaped_field
from .units import UNITS, reduced_mass_u

log = logging.getLogger("entwp")


# -- model builders ---------------------------------------------------------

def build_grid(cfg: RunConfig) -> SpatialGrid:
    g = cfg.grid
    return SpatialGrid(g.r_min_bohr, g.r_max_bohr, g.n_points)


def build_pair(cfg: RunConfig) -> PotentialPair:
    """Spline pair from "R[Å]:V[eV]" control points, converted to atomic units."""
    p = cfg.potentials

    def curve(points):
        return build_spline_potential(
            [(UNITS.angstrom_to_bohr(r), UNITS.ev_to_hartree(v)) for r, v in points])

    v1 = parse_points(p.v1_points, "potentials.v1_points")
    if p.v2_points.strip():
        v2 = parse_points(p.v2_points, "potentials.v2_points")
    else:
        v2 = [(r, v * p.v2_scale) for r, v in v1]
    pair = PotentialPair(curve(v1), curve(v2), UNITS.ev_to_hartree(p.offset_ev))
    if p.perturb_fraction > 0:
        pair = pair.perturbed(p.perturb_seed, p.perturb_fraction)
    return pair


def build_wavepacket(cfg: RunConfig, pair: PotentialPair, grid: SpatialGrid) -> TwoStateWavepacket:
    pr = cfg.propagation
    mass = UNITS.u_to_me(reduced_mass_u(pr.mass_a_u, pr.mass_b_u))
    chi = init_gaussian(grid, UNITS.angstrom_to_bohr(pr.r0_angstrom),
                        UNITS.angstrom_to_bohr(pr.sigma_angstrom), mass=mass)
    return TwoStateWavepacket(chi, chi, pair, cfg.system.a1, cfg.system.a2)


def build_params(cfg: RunConfig, total_fs: float | None = None) -> PropagationParams:
    pr = cfg.propagation
    start = None if math.isnan(pr.absorber_start_bohr) else pr.absorber_start_bohr
    return PropagationParams.from_fs(pr.dt_au, pr.total_fs if total_fs is None else total_fs,
                                     pr.snapshot_fs, absorber_strength=pr.absorber_strength,
                                     absorber_start_R=start, edge_tolerance=pr.edge_tolerance)


def build_system(cfg: RunConfig) -> TwoStateSystem:
    s = cfg.system
    return TwoStateSystem(a1=s.a1, a2=s.a2, Q1f=s.q1f, Q2f=s.q2f, n=s.n_photons, m=s.m_photons,
                          photon_separation=s.photon_separation,
                          probe_amplitude=cfg.mask.a_r * cfg.pulse.e0)


def build_calibration(cfg: RunConfig) -> DetectorCalibration:
    e = cfg.events
    t0 = {s.id: e.t0_ns_per_sqrt_u * math.sqrt(s.mass_u) for s in DEFAULT_SPECIES}
    return DetectorCalibration(e.cx_mm_per_au, e.cy_mm_per_au, e.ct_ns_per_au, t0,
                               blur_xy=e.blur_xy_mm, blur_t=e.blur_t_ns)


def build_event_model(cfg: RunConfig) -> EventModel:
    e = cfg.events
    a, b = cfg.covariance.species_a, cfg.covariance.species_b
    rates = {s.id: e.background_rate_other for s in DEFAULT_SPECIES}
    rates[a], rates[b] = e.background_rate_a, e.background_rate_b
    rates = {k: v for k, v in rates.items() if v > 0}
    return EventModel(species_a=a, species_b=b, pair_prob=e.pair_prob, background_rates=rates,
                      background_momentum=e.background_momentum_au, calib=build_calibration(cfg),
                      scale_pair_prob=e.scale_pair_prob)


def ker_edges(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


def phase_axis(cfg: RunConfig) -> np.ndarray:
    return 2.0 * np.pi * np.arange(cfg.scan.n_phases) / cfg.scan.n_phases


def delay_axis(cfg: RunConfig) -> np.ndarray:
    sc = cfg.scan
    n = int(round((sc.delay_max_fs - sc.delay_min_fs) / sc.delay_step_fs))
    return sc.delay_min_fs + sc.delay_step_fs * np.arange(n + 1)


def vib_period_fs(cfg: RunConfig) -> float | None:
    w = cfg.scan.vib_wavenumber_cm
    return None if w == 0 or cfg.scan.vib_depth == 0 else float(UNITS.wavenumber_to_period_fs(w))


# -- propagate ---------------------------------------------------------------

@dataclass
class HockeyResult:
    delay_fs: float
    r2: float
    departure: float
    peak_R: float
    holds: bool


def hockey_at(cfg: RunConfig, traj: Trajectory, delay_fs: float):
    c1, c2 = traj.state_at(UNITS.fs_to_au(delay_fs))
    dphi = phase_difference(c1, c2)
    hs = hockey_stick(traj.grid.R, dphi, c1.density * c2.density, lobe_floor=cfg.analysis.lobe_floor)
    ok = hs.holds(cfg.analysis.hockey_r2, cfg.analysis.hockey_departure_rad)
    return HockeyResult(delay_fs, hs.leading_r2, hs.trailing_departure, hs.peak_x, ok), dphi, hs


def propagate_model(cfg: RunConfig, total_fs: float | None = None,
                    pair: PotentialPair | None = None) -> Trajectory:
    grid = build_grid(cfg)
    pair = build_pair(cfg) if pair is None else pair
    return propagate_pair(build_wavepacket(cfg, pair, grid), build_params(cfg, total_fs))


def _ensemble_member(args):
    cfg, seed = args
    pair = build_pair(cfg).perturbed(seed, cfg.potentials.ensemble_fraction)
    traj = propagate_model(cfg, cfg.scan.phase_delay_fs, pair)
    res, _, _ = hockey_at(cfg, traj, cfg.scan.phase_delay_fs)
    return seed, res.r2, res.departure, res.holds, has_rolldown_well_barrier(pair.V1)


def run_ensemble(cfg: RunConfig, threads: int = 1) -> np.ndarray:
    """Hockey-stick metric over perturbed control points.

    Rows: (seed, r2, departure, holds, rolldown_shape).
    """
    base = cfg.potentials.perturb_seed
    tasks = [(cfg, base + i) for i in range(cfg.potentials.ensemble_size)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(_ensemble_member, tasks))
    else:
        rows = [_ensemble_member(t) for t in tasks]
    return np.array(rows, dtype=float)


def run_propagate(cfg: RunConfig, out: Path, ensemble: bool = False, threads: int = 1,
                  traj: Trajectory | None = None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.sha256()
    if traj is None:
        traj = propagate_model(cfg)
    grid = traj.grid
    R_ang = UNITS.bohr_to_angstrom(grid.R)
    times = parse_float_list(cfg.propagation.report_times_fs, "propagation.report_times_fs")
    snaps, rows = [], []
    for t in times:
        c1, c2 = traj.state_at(UNITS.fs_to_au(t))
        dphi = phase_difference(c1, c2)
        snaps.append((t, c1.density, c2.density, dphi))
        rows.append(np.column_stack([np.full(grid.N, t), R_ang, c1.density, c2.density, dphi]))
    write_table(out / "packets.dat", "packets", ["t_fs", "R_angstrom", "rho1", "rho2", "dphi_rad"],
                np.vstack(rows), h)
    plots.plot_packets(out / "packets.png", R_ang, snaps)

    res, dphi, hs = hockey_at(cfg, traj, cfg.scan.phase_delay_fs)
    c1, c2 = traj.state_at(UNITS.fs_to_au(cfg.scan.phase_delay_fs))
    w = c1.density * c2.density
    write_table(out / "phase_difference.dat", "phase_difference",
                ["R_angstrom", "inv_ker_per_ev", "dphi_rad", "weight"],
                np.column_stack([R_ang, UNITS.ev_to_hartree(1.0) * grid.R, dphi, w]), h,
                delay_fs=res.delay_fs, leading_r2=res.r2, trailing_departure_rad=res.departure,
                hockey_stick=res.holds)
    fit = None
    if hs.leading_r2 > 0:
        lead = (grid.R >= hs.peak_x) & (grid.R <= hs.lobe[1]) & np.isfinite(dphi)
        sl, ic, _ = line_fit(R_ang[lead], dphi[lead])
        fit = (sl, ic, (R_ang[lead][0], R_ang[lead][-1]))
    plots.plot_hockey(out / "phase_difference.png", R_ang, dphi, w / w.max(), xlabel="R (Å)", fit=fit)
    summary = {"hockey": res, "trajectory": traj}
    if ensemble:
        rows = run_ensemble(cfg, threads)
        frac = float(rows[:, 3].mean())
        write_table(out / "ensemble.dat", "ensemble",
                    ["seed", "leading_r2", "trailing_departure_rad", "holds", "rolldown_shape"],
                    rows, h, fraction=cfg.potentials.ensemble_fraction,
                    members=len(rows), persistence=frac)
        plots.plot_ensemble(out / "ensemble.png", rows[:, 1], rows[:, 2],
                            cfg.analysis.hockey_r2, cfg.analysis.hockey_departure_rad)
        summary["ensemble"] = rows
        summary["persistence"] = frac
    return summary


# -- scan --------------------------------------------------------------------

@dataclass
class ScanResult:
    axis: str
    scan_values: np.ndarray     # phase (rad) or delay (fs)
    ker_edges_ev: np.ndarray
    Y: np.ndarray               # (n_bins, n_points)

    @property
    def ker_centers(self):
        e = self.ker_edges_ev
        return 0.5 * (e[1:] + e[:-1])

    def yield_map(self, phase_delay_fs: float = 0.0) -> YieldMap:
        if self.axis == "phase":
            d = np.full(self.scan_values.size, phase_delay_fs)
            ph = self.scan_values
        else:
            d = self.scan_values
            ph = np.zeros(self.scan_values.size)
        return YieldMap(self.ker_edges_ev, d, ph, self.Y.T)


def _write_scan(path: Path, res: ScanResult, h: str, **meta):
    rows = grid_to_long(res.scan_values, res.ker_centers, res.Y)
    name = "phase_rad" if res.axis == "phase" else "delay_fs"
    write_table(path, "yield", [name, "ker_ev", "yield"], rows, h, scan_axis=res.axis,
                ker_edges_ev=" ".join(repr(float(x)) for x in res.ker_edges_ev), **meta)


def run_scan(cfg: RunConfig, out: Path, axis: str = "both", traj: Trajectory | None = None) -> dict:
    if axis not in ("delay", "phase", "both"):
        raise ValueError("axis must be delay, phase or both")
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.sha256()
    sc = cfg.scan
    if traj is None:
        traj = propagate_model(cfg)
    system = build_system(cfg)
    results = {"trajectory": traj}
    if axis in ("phase", "both"):
        edges = ker_edges(sc.ker_min_ev, sc.ker_max_ev, sc.ker_step_ev)
        phis = phase_axis(cfg)
        Y = phase_scan(system, traj, UNITS.fs_to_au(sc.phase_delay_fs), phis,
                       UNITS.ev_to_hartree(edges))
        res = ScanResult("phase", phis, edges, Y)
        _write_scan(out / "yield_phase.dat", res, h, delay_fs=sc.phase_delay_fs)
        plots.plot_map(out / "yield_phase.png", phis, res.ker_centers, Y,
                       "phase (rad)", "KER (eV)", "yield")
        results["phase"] = res
    if axis in ("delay", "both"):
        edges = ker_edges(sc.delay_ker_min_ev, sc.delay_ker_max_ev, sc.delay_ker_step_ev)
        taus = delay_axis(cfg)
        Y = delay_scan(system, traj, taus, UNITS.ev_to_hartree(edges), sc.n_phase_average,
                       vib_period_fs=vib_period_fs(cfg), vib_depth=sc.vib_depth)
        res = ScanResult("delay", taus, edges, Y)
        _write_scan(out / "yield_delay.dat", res, h, phase_average=sc.n_phase_average,
                    vib_period_fs=vib_period_fs(cfg) or 0.0)
        plots.plot_map(out / "yield_delay.png", taus, res.ker_centers, Y,
                       "delay (fs)", "KER (eV)", "yield")
        results["delay"] = res
    pulse = PulseSpec(cfg.pulse.fwhm_fs, cfg.pulse.e0, dt=cfg.pulse.dt_fs, n=cfg.pulse.n_samples)
    m = cfg.mask
    t, field = shaped_field(pulse, ShaperMask(m.a_tot, m.a_r, m.tau_fs, m.phi_l, m.nu_l_phz))
    write_table(out / "pulse_pair.dat", "pulse_pair", ["t_fs", "intensity"],
                np.column_stack([t, np.abs(field) ** 2]), h, tau_fs=m.tau_fs)
    return results


def load_scan(path) -> ScanResult:
    tab = read_table(path)
    if tab.kind != "yield":
        raise ValueError(f"{path} is a {tab.kind!r} table, not a yield scan")
    xs, _, Z = long_to_grid(tab.data[:, 0], tab.data[:, 1], tab.data[:, 2])
    edges = np.array([float(x) for x in tab.meta["ker_edges_ev"].split()])
    return ScanResult(tab.meta["scan_axis"], xs, edges, Z)


# -- synth -------------------------------------------------------------------

def run_synth(cfg: RunConfig, out: Path, scans: dict | None = None, threads: int = 1,
              axes=("delay", "phase")) -> dict[str, Path]:
    """Event files for the delay and phase scans, sampled from the model yields."""
    out.mkdir(parents=True, exist_ok=True)
    if scans is None or any(a not in scans for a in axes):
        scans = run_scan(cfg, out / "model", "both")
    model = build_event_model(cfg)
    paths = {}
    for k, axis in enumerate(("delay", "phase")):
        if axis not in axes:
            continue
        ymap = scans[axis].yield_map(cfg.scan.phase_delay_fs)
        n = cfg.events.shots_per_delay if axis == "delay" else cfg.events.shots_per_phase
        shots = iter_pair_events(ymap, n, model, cfg.events.seed + k, threads)
        path = out / f"events_{axis}.csv"
        write_events(path, shots, model.calib, model.species, cfg.sha256())
        paths[axis] = path
    return paths


# -- covmap ------------------------------------------------------------------

def covariance_from_file(cfg: RunConfig, path, threads: int = 1) -> CovarianceMap:
    c = cfg.covariance
    header = read_header(path)
    sel = PairSelection(c.species_a, c.species_b, ker_edges(c.ker_min_ev, c.ker_max_ev, c.ker_step_ev),
                        c.epsilon_au, "auto")
    acc = CovarianceAccumulator(sel, header.species, header.calib)
    return acc.update(iter_events(path)).result()


def write_covmap(path: Path, cm: CovarianceMap, h: str) -> Path:
    nb, npnt = cm.cov.shape
    name = "phase_rad" if cm.scan_axis == "phase" else "delay_fs"
    rows = np.column_stack([
        np.repeat(cm.scan_values, nb), np.tile(cm.ker_centers, npnt),
        cm.cov.T.ravel(), cm.sigma.T.ravel(), np.repeat(cm.n_shots, nb), cm.coincidence.T.ravel()])
    return write_table(path, "covariance", [name, "ker_ev", "cov", "sigma", "n_shots", "coincidence"],
                       rows, h, scan_axis=cm.scan_axis,
                       ker_edges_ev=" ".join(repr(float(x)) for x in cm.ker_edges))


def run_covmap(cfg: RunConfig, events: list[Path], out: Path, threads: int = 1) -> dict[str, CovarianceMap]:
    out.mkdir(parents=True, exist_ok=True)
    maps = {}
    for path in events:
        cm = covariance_from_file(cfg, path, threads)
        stem = Path(path).stem.replace("events", "covmap")
        write_covmap(out / f"{stem}.dat", cm, cfg.sha256())
        xl = "phase (rad)" if cm.scan_axis == "phase" else "delay (fs)"
        plots.plot_map(out / f"{stem}.png", cm.scan_values, cm.ker_centers, cm.cov,
                       xl, "KER (eV)", "covariance", symmetric=True)
        maps[stem] = cm
    return maps


# -- analyze -----------------------------------------------------------------

@dataclass
class MapData:
    axis: str
    x: np.ndarray
    ker: np.ndarray
    Z: np.ndarray
    sigma: np.ndarray | None


def load_map(path) -> MapData:
    tab = read_table(path)
    if tab.kind not in ("yield", "covariance"):
        raise ValueError(f"{path}: cannot analyze a {tab.kind!r} table")
    x, ker, Z = long_to_grid(tab.data[:, 0], tab.data[:, 1], tab.column(tab.columns[2]))
    sig = None
    if "sigma" in tab.columns:
        sig = long_to_grid(tab.data[:, 0], tab.data[:, 1], tab.column("sigma"))[2]
    return MapData(tab.meta.get("scan_axis", "delay"), x, ker, Z, sig)


def analyze_delay(cfg: RunConfig, m: MapData):
    a = cfg.analysis
    series = m.Z.sum(axis=0)
    spec = modulation_spectrum(m.x, series, pad_factor=a.pad_factor, min_period=a.min_period_fs)
    return series, spec


def analyze_phase(cfg: RunConfig, m: MapData):
    a = cfg.analysis
    fits = fit_phase_scan(m.x, m.Z, m.sigma, a.significance, a.min_rel_amplitude)
    inv, ph = phase_vs_inverse_energy(fits, m.ker)
    w = np.array([f.c1 for f in fits if f.significant])
    w = w[np.argsort(1.0 / m.ker[[f.significant for f in fits]])] if w.size else w
    hs = hockey_stick(inv, ph, w, a.lobe_floor) if inv.size else None
    return fits, inv, ph, w, hs


def run_analyze(cfg: RunConfig, maps: list[Path], out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.sha256()
    results = {}
    for path in maps:
        path = Path(path)
        m = load_map(path)
        stem = path.stem
        if m.axis == "delay":
            series, spec = analyze_delay(cfg, m)
            ok = spec.freq > 0
            write_table(out / f"{stem}_spectrum.dat", "modulation_spectrum",
                        ["freq_per_fs", "period_fs", "amplitude"],
                        np.column_stack([spec.freq[ok], 1.0 / spec.freq[ok], spec.amplitude[ok]]), h,
                        dominant_period_fs=spec.period)
            write_table(out / f"{stem}_series.dat", "delay_series", ["delay_fs", "total"],
                        np.column_stack([m.x, series]), h)
            plots.plot_spectrum(out / f"{stem}_spectrum.png", m.x, series, spec.freq,
                                spec.amplitude, spec.period)
            results[stem] = {"axis": "delay", "period": spec.period, "spectrum": spec}
        else:
            fits, inv, ph, w, hs = analyze_phase(cfg, m)
            rows = np.array([(E, f.c0, f.c1, f.phase, f.sigma_c1, f.sigma_phase, f.significant)
                             for E, f in zip(m.ker, fits)], dtype=float)
            write_table(out / f"{stem}_phase_fit.dat", "phase_fit",
                        ["ker_ev", "c0", "c1", "dphi_rad", "sigma_c1", "sigma_dphi", "significant"],
                        rows, h)
            meta = {}
            if hs is not None:
                meta = dict(leading_r2=hs.leading_r2, trailing_departure_rad=hs.trailing_departure,
                            hockey_stick=hs.holds(cfg.analysis.hockey_r2,
                                                  cfg.analysis.hockey_departure_rad))
            write_table(out / f"{stem}_inverse_energy.dat", "phase_vs_inverse_energy",
                        ["inv_ker_per_ev", "dphi_unwrapped_rad", "c1"],
                        np.column_stack([inv, ph, w]) if inv.size else np.empty((0, 3)), h, **meta)
            Zc = np.clip(m.Z, 0.0, None)
            if np.all(Zc.sum(axis=0) > 0):
                write_table(out / f"{stem}_first_moment.dat", "first_moment",
                            ["phase_rad", "mean_ker_ev"],
                            np.column_stack([m.x, first_moment(m.ker, Zc)]), h)
            plots.plot_phase_fit(out / f"{stem}_phase_fit.png", m.ker, rows[:, 2], rows[:, 3],
                                 rows[:, 6])
            if inv.size >= 2:
                fit = None
                if hs is not None and hs.leading_r2 > 0:
                    lead = inv >= hs.peak_x
                    s, c, _ = line_fit(inv[lead], ph[lead])
                    fit = (s, c, (hs.peak_x, hs.lobe[1]))
                plots.plot_hockey(out / f"{stem}_inverse_energy.png", inv, ph, w / w.max(), fit=fit)
            results[stem] = {"axis": "phase", "fits": fits, "inv": inv, "phase": ph, "hockey": hs}
    return results
