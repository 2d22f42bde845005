"""Run configuration: an INI file with one section per pipeline stage.

Every key has a documented default, so an empty file (or no file) is a
valid configuration. Unknown sections or keys are rejected by name. The
``[meta] version`` key versions the format.
"""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .units import CARRIER_FREQUENCY_PHZ

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class GridSection:
    r_min_bohr: float = 1.0
    r_max_bohr: float = 60.0
    n_points: int = 2048


@dataclass
class PotentialsSection:
    # control points as "R_angstrom:V_eV" pairs; V2 defaults to a scaled V1
    v1_points: str = "1.55:0.0, 1.90:-1.10, 2.35:-0.70, 3.20:-2.20"
    v2_points: str = ""
    v2_scale: float = 1.03
    offset_ev: float = 1.55
    perturb_fraction: float = 0.0
    perturb_seed: int = 0
    ensemble_size: int = 100
    ensemble_fraction: float = 0.05


@dataclass
class PropagationSection:
    dt_au: float = 0.5
    total_fs: float = 400.0
    snapshot_fs: float = 1.0
    r0_angstrom: float = 1.60
    sigma_angstrom: float = 0.05
    mass_a_u: float = 69.0
    mass_b_u: float = 43.0
    absorber_strength: float = 1.0
    absorber_start_bohr: float = math.nan   # nan: last 10% of the grid
    edge_tolerance: float = 1e-6
    report_times_fs: str = "0, 25, 50, 75, 95"


@dataclass
class PulseSection:
    fwhm_fs: float = 7.0
    e0: float = 1.0
    dt_fs: float = 0.25
    n_samples: int = 4096


@dataclass
class MaskSection:
    a_tot: float = 1.0
    a_r: float = 1.0
    tau_fs: float = 95.0
    phi_l: float = 0.0
    nu_l_phz: float = CARRIER_FREQUENCY_PHZ


@dataclass
class SystemSection:
    a1: complex = complex(math.sqrt(0.5))
    a2: complex = complex(math.sqrt(0.5))
    q1f: complex = 1.0 + 0j
    q2f: complex = 1.0 + 0j
    n_photons: int = 4
    m_photons: int = 4
    photon_separation: int = 1


@dataclass
class ScanSection:
    delay_min_fs: float = 0.0
    delay_max_fs: float = 400.0
    delay_step_fs: float = 2.0
    phase_delay_fs: float = 95.0
    n_phases: int = 16
    ker_min_ev: float = 2.0
    ker_max_ev: float = 8.0
    ker_step_ev: float = 0.025
    delay_ker_min_ev: float = 0.5
    delay_ker_max_ev: float = 10.0
    delay_ker_step_ev: float = 0.1
    n_phase_average: int = 8
    vib_wavenumber_cm: float = 1189.0
    vib_depth: float = 0.3


@dataclass
class EventsSection:
    seed: int = 20240611
    shots_per_delay: int = 1000
    shots_per_phase: int = 10000
    pair_prob: float = 0.3
    scale_pair_prob: bool = True
    background_rate_a: float = 4.0
    background_rate_b: float = 4.0
    background_rate_other: float = 0.0
    background_momentum_au: float = 20.0
    cx_mm_per_au: float = 0.25
    cy_mm_per_au: float = 0.25
    ct_ns_per_au: float = 1.5
    t0_ns_per_sqrt_u: float = 1000.0
    blur_xy_mm: float = 0.0
    blur_t_ns: float = 0.0


@dataclass
class CovarianceSection:
    species_a: int = 1
    species_b: int = 2
    epsilon_au: float = 5.0
    ker_min_ev: float = 0.5
    ker_max_ev: float = 10.0
    ker_step_ev: float = 0.1


@dataclass
class AnalysisSection:
    pad_factor: int = 8
    min_period_fs: float = 10.0
    significance: float = 3.0
    min_rel_amplitude: float = 1e-3
    lobe_floor: float = 0.01
    hockey_r2: float = 0.99
    hockey_departure_rad: float = 0.3


_SECTIONS = {
    "grid": GridSection,
    "potentials": PotentialsSection,
    "propagation": PropagationSection,
    "pulse": PulseSection,
    "mask": MaskSection,
    "system": SystemSection,
    "scan": ScanSection,
    "events": EventsSection,
    "covariance": CovarianceSection,
    "analysis": AnalysisSection,
}


@dataclass
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    potentials: PotentialsSection = field(default_factory=PotentialsSection)
    propagation: PropagationSection = field(default_factory=PropagationSection)
    pulse: PulseSection = field(default_factory=PulseSection)
    mask: MaskSection = field(default_factory=MaskSection)
    system: SystemSection = field(default_factory=SystemSection)
    scan: ScanSection = field(default_factory=ScanSection)
    events: EventsSection = field(default_factory=EventsSection)
    covariance: CovarianceSection = field(default_factory=CovarianceSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    def to_ini(self) -> str:
        lines = ["[meta]", f"version = {CONFIG_VERSION}", ""]
        for name in _SECTIONS:
            sec = getattr(self, name)
            lines.append(f"[{name}]")
            for f in fields(sec):
                lines.append(f"{f.name} = {_format(getattr(sec, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def sha256(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is not None:
            self.events.seed = int(seed)
        return self


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, complex):
        return repr(v.real) if v.imag == 0 else repr(v).strip("()")
    return str(v)


def _parse(raw: str, typ, key: str):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is complex:
            return complex(raw.replace(" ", ""))
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


_TYPES = {"float": float, "int": int, "str": str, "bool": bool, "complex": complex}


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = RunConfig()
    for sec in cp.sections():
        if sec == "meta":
            for key, raw in cp.items(sec):
                if key != "version":
                    raise ConfigError(f"meta.{key}: unknown key")
                if _parse(raw, int, "meta.version") != CONFIG_VERSION:
                    raise ConfigError(f"meta.version: unsupported version {raw}")
            continue
        if sec not in _SECTIONS:
            raise ConfigError(f"{sec}: unknown section")
        obj = getattr(cfg, sec)
        known = {f.name: _TYPES[f.type] for f in fields(obj)}
        for key, raw in cp.items(sec):
            if key not in known:
                raise ConfigError(f"{sec}.{key}: unknown key")
            setattr(obj, key, _parse(raw, known[key], f"{sec}.{key}"))
    validate(cfg)
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    return parse_config(p.read_text())


def parse_points(text: str, key: str) -> list[tuple[float, float]]:
    """Parse "R:V, R:V, ..." control points."""
    pts = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            r, v = item.split(":")
            pts.append((float(r), float(v)))
        except ValueError:
            raise ConfigError(f"{key}: bad control point {item!r} (expected R:V)") from None
    return pts


def parse_float_list(text: str, key: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected a comma-separated list of numbers") from None


def _require(cond: bool, key: str, msg: str):
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def validate(cfg: RunConfig) -> None:
    """Cross-field checks; raises ConfigError naming the first bad key."""
    g = cfg.grid
    _require(g.r_max_bohr > g.r_min_bohr > 0, "grid.r_max_bohr", "need r_max > r_min > 0")
    _require(g.n_points >= 16 and g.n_points & (g.n_points - 1) == 0,
             "grid.n_points", "must be a power of two >= 16")
    p = cfg.potentials
    v1 = parse_points(p.v1_points, "potentials.v1_points")
    _require(len(v1) >= 4, "potentials.v1_points", "need at least 4 control points")
    if p.v2_points.strip():
        _require(len(parse_points(p.v2_points, "potentials.v2_points")) >= 4,
                 "potentials.v2_points", "need at least 4 control points")
    _require(0 <= p.perturb_fraction < 1, "potentials.perturb_fraction", "must be in [0, 1)")
    _require(0 <= p.ensemble_fraction < 1, "potentials.ensemble_fraction", "must be in [0, 1)")
    _require(p.ensemble_size >= 1, "potentials.ensemble_size", "must be >= 1")
    pr = cfg.propagation
    _require(pr.dt_au > 0, "propagation.dt_au", "must be positive")
    _require(pr.total_fs > 0, "propagation.total_fs", "must be positive")
    _require(pr.snapshot_fs > 0, "propagation.snapshot_fs", "must be positive")
    _require(pr.sigma_angstrom > 0, "propagation.sigma_angstrom", "must be positive")
    _require(pr.mass_a_u > 0 and pr.mass_b_u > 0, "propagation.mass_a_u", "masses must be positive")
    _require(pr.absorber_strength >= 0, "propagation.absorber_strength", "must be >= 0")
    parse_float_list(pr.report_times_fs, "propagation.report_times_fs")
    _require(cfg.pulse.fwhm_fs > 0, "pulse.fwhm_fs", "must be positive")
    _require(cfg.mask.a_tot > 0, "mask.a_tot", "must be positive")
    _require(cfg.mask.a_r >= 0, "mask.a_r", "must be >= 0")
    s = cfg.system
    _require(s.n_photons >= 1, "system.n_photons", "must be >= 1")
    _require(s.m_photons >= 2, "system.m_photons", "must be >= 2")
    _require(1 <= s.photon_separation < s.m_photons, "system.photon_separation", "need 1 <= K < m")
    sc = cfg.scan
    _require(sc.delay_step_fs > 0, "scan.delay_step_fs", "must be positive")
    _require(sc.delay_max_fs > sc.delay_min_fs >= 0, "scan.delay_max_fs", "need max > min >= 0")
    span = (sc.delay_max_fs - sc.delay_min_fs) / sc.delay_step_fs
    _require(abs(span - round(span)) < 1e-9, "scan.delay_step_fs", "must divide the delay range")
    _require(sc.delay_max_fs <= pr.total_fs, "scan.delay_max_fs", "exceeds propagation.total_fs")
    _require(0 <= sc.phase_delay_fs <= pr.total_fs, "scan.phase_delay_fs",
             "must lie inside the propagated time")
    _require(sc.n_phases >= 5, "scan.n_phases", "need at least 5 phase samples")
    for pre in ("", "delay_"):
        lo, hi, st = (getattr(sc, f"{pre}ker_{k}") for k in ("min_ev", "max_ev", "step_ev"))
        _require(hi > lo > 0 and st > 0, f"scan.{pre}ker_max_ev", "need max > min > 0 and step > 0")
    _require(sc.n_phase_average >= 3, "scan.n_phase_average", "need at least 3")
    _require(sc.vib_wavenumber_cm >= 0, "scan.vib_wavenumber_cm", "must be >= 0")
    _require(0 <= sc.vib_depth < 1, "scan.vib_depth", "must be in [0, 1)")
    e = cfg.events
    _require(0 <= e.pair_prob <= 1, "events.pair_prob", "must be in [0, 1]")
    _require(e.shots_per_delay >= 2 and e.shots_per_phase >= 2, "events.shots_per_delay",
             "need at least 2 shots per scan point")
    for k in ("background_rate_a", "background_rate_b", "background_rate_other"):
        _require(getattr(e, k) >= 0, f"events.{k}", "must be >= 0")
    for k in ("cx_mm_per_au", "cy_mm_per_au", "ct_ns_per_au", "t0_ns_per_sqrt_u"):
        _require(getattr(e, k) != 0, f"events.{k}", "must be non-zero")
    _require(e.seed >= 0, "events.seed", "must be a non-negative integer")
    c = cfg.covariance
    _require(c.species_a != c.species_b, "covariance.species_b", "must differ from species_a")
    _require(c.epsilon_au > 0, "covariance.epsilon_au", "must be positive")
    _require(c.ker_max_ev > c.ker_min_ev >= 0 and c.ker_step_ev > 0, "covariance.ker_max_ev",
             "need max > min >= 0 and step > 0")
    a = cfg.analysis
    _require(a.pad_factor >= 1, "analysis.pad_factor", "must be >= 1")
    _require(a.significance > 0, "analysis.significance", "must be positive")
