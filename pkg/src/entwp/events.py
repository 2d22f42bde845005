"""Synthetic fragment-ion events and an ideal velocity-map-imaging detector.

Momenta are in atomic units, detector hits in (mm, mm, ns), KER in eV.

Event file layout (comma separated text)::

    # entwp-events v1
    # config_sha256: <hex>
    # calibration: <json>
    # species: <json>
    # columns: shot_id,delay_fs,phase_rad,species_id,x_mm,y_mm,t_ns
    0,95.0,0.0,1,3.25,-1.5,8331.2
    ...

Shots with no detected ions are kept as a single row with species_id 0
and ``nan`` coordinates so that shot counts survive a round trip.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .units import MASS_CF2_U, MASS_CF3_U, MASS_COCH3_U, UNITS

EVENTS_MAGIC = "# entwp-events v1"
EVENT_COLUMNS = ("shot_id", "delay_fs", "phase_rad", "species_id", "x_mm", "y_mm", "t_ns")
EMPTY_SHOT_SPECIES = 0


class UnassignedHitError(ValueError):
    """A time of flight that falls in no species window."""


class EventFileError(ValueError):
    pass


@dataclass(frozen=True)
class Species:
    id: int
    name: str
    mass_u: float
    charge: int = 1


class SpeciesTable:
    def __init__(self, species: Iterable[Species]):
        self._by_id: dict[int, Species] = {}
        for s in species:
            if s.id in self._by_id:
                raise ValueError(f"duplicate species id {s.id}")
            if s.id == EMPTY_SHOT_SPECIES:
                raise ValueError("species id 0 is reserved for empty-shot rows")
            if s.mass_u <= 0:
                raise ValueError(f"species {s.name} must have positive mass")
            self._by_id[s.id] = s

    def __getitem__(self, sid: int) -> Species:
        try:
            return self._by_id[int(sid)]
        except KeyError:
            raise KeyError(f"unknown species id {sid}") from None

    def __contains__(self, sid) -> bool:
        return int(sid) in self._by_id

    def __iter__(self):
        return iter(self._by_id.values())

    def __len__(self):
        return len(self._by_id)

    def __eq__(self, other):
        return isinstance(other, SpeciesTable) and list(self) == list(other)

    def by_name(self, name: str) -> Species:
        for s in self:
            if s.name == name:
                return s
        raise KeyError(f"unknown species {name!r}")

    def to_json(self) -> str:
        return json.dumps([asdict(s) for s in self], separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SpeciesTable":
        return cls(Species(**d) for d in json.loads(text))


DEFAULT_SPECIES = SpeciesTable([
    Species(1, "CF3+", MASS_CF3_U),
    Species(2, "COCH3+", MASS_COCH3_U),
    Species(3, "CF2+", MASS_CF2_U),
])


@dataclass(frozen=True)
class DetectorCalibration:
    """Linear ideal-VMI map: x = cx px, y = cy py, t = t0[species] + ct pz.

    ``t0`` maps species id to its zero-momentum time of flight (ns). Species
    windows are centred on t0 with half width ``window_half_width`` (default
    half the smallest t0 gap).
    """

    cx: float = 0.25
    cy: float = 0.25
    ct: float = 1.5
    t0: dict = field(default_factory=lambda: {
        s.id: round(1000.0 * math.sqrt(s.mass_u), 3) for s in DEFAULT_SPECIES})
    window_half_width: float | None = None
    blur_xy: float = 0.0
    blur_t: float = 0.0

    def __post_init__(self):
        if self.cx == 0 or self.cy == 0 or self.ct == 0:
            raise ValueError("calibration coefficients must be non-zero")
        object.__setattr__(self, "t0", {int(k): float(v) for k, v in self.t0.items()})
        if len(set(self.t0.values())) != len(self.t0):
            raise ValueError("species t0 values must be distinct")

    def half_width(self) -> float:
        if self.window_half_width is not None:
            return self.window_half_width
        t = sorted(self.t0.values())
        if len(t) < 2:
            return float("inf")
        return 0.5 * min(b - a for a, b in zip(t, t[1:]))

    def windows(self) -> dict[int, tuple[float, float]]:
        h = self.half_width()
        return {sid: (t - h, t + h) for sid, t in self.t0.items()}

    def to_json(self) -> str:
        d = asdict(self)
        d["t0"] = {str(k): v for k, v in self.t0.items()}
        return json.dumps(d, separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DetectorCalibration":
        d = json.loads(text)
        d["t0"] = {int(k): v for k, v in d["t0"].items()}
        return cls(**d)


def momentum_to_detector(p, species: int, calib: DetectorCalibration) -> np.ndarray:
    """Forward map of momenta ``(..., 3)`` to hits ``(..., 3)`` = (x, y, t)."""
    p = np.asarray(p, dtype=float)
    out = np.empty_like(p)
    out[..., 0] = calib.cx * p[..., 0]
    out[..., 1] = calib.cy * p[..., 1]
    out[..., 2] = calib.t0[int(species)] + calib.ct * p[..., 2]
    return out


def assign_species(t, calib: DetectorCalibration) -> np.ndarray:
    """Species id for every time of flight; raises for hits outside all windows."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros(t.shape, dtype=int)
    for sid, (lo, hi) in calib.windows().items():
        out[(t >= lo) & (t < hi)] = sid
    if np.any(out == 0):
        bad = t[out == 0][0]
        raise UnassignedHitError(f"time of flight {bad} ns lies outside every species window")
    return out


def reconstruct_momentum(hit, species: int | None, calib: DetectorCalibration) -> np.ndarray:
    """Inverse of :func:`momentum_to_detector`; species from TOF if None."""
    hit = np.asarray(hit, dtype=float)
    if species is None:
        sp = assign_species(hit[..., 2], calib)
        t0 = np.array([calib.t0[s] for s in sp.ravel()]).reshape(hit.shape[:-1])
    else:
        t0 = calib.t0[int(species)]
    p = np.empty_like(hit)
    p[..., 0] = hit[..., 0] / calib.cx
    p[..., 1] = hit[..., 1] / calib.cy
    p[..., 2] = (hit[..., 2] - t0) / calib.ct
    return p


@dataclass(frozen=True)
class IonEvent:
    shot_id: int
    species: int
    momentum: tuple[float, float, float]
    hit: tuple[float, float, float]


@dataclass
class ShotRecord:
    """One laser shot: scan coordinates and the detected ions."""

    shot_id: int
    delay: float
    phase: float
    species: np.ndarray                     # (n,) int
    hits: np.ndarray                        # (n, 3) x, y, t
    momenta: np.ndarray | None = None       # (n, 3), reconstructed if None

    def ensure_momenta(self, calib: DetectorCalibration) -> np.ndarray:
        if self.momenta is None:
            self.momenta = np.empty_like(self.hits)
            for sid in np.unique(self.species):
                sel = self.species == sid
                self.momenta[sel] = reconstruct_momentum(self.hits[sel], int(sid), calib)
        return self.momenta

    def events(self, calib: DetectorCalibration) -> list[IonEvent]:
        p = self.ensure_momenta(calib)
        return [IonEvent(self.shot_id, int(s), tuple(map(float, pp)), tuple(map(float, h)))
                for s, pp, h in zip(self.species, p, self.hits)]

    def __len__(self):
        return int(self.species.size)

    def same_as(self, other: "ShotRecord") -> bool:
        return (self.shot_id == other.shot_id and self.delay == other.delay
                and self.phase == other.phase
                and np.array_equal(self.species, other.species)
                and np.array_equal(self.hits, other.hits))


@dataclass(frozen=True)
class YieldMap:
    """KER distributions (arbitrary units) at a list of scan points.

    ``weights[p, b]`` is the yield in KER bin ``b`` (edges in eV) at scan
    point ``p = (delays[p], phases[p])``.
    """

    ker_edges: np.ndarray
    delays: np.ndarray
    phases: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        e = np.asarray(self.ker_edges, dtype=float)
        if np.any(np.diff(e) <= 0) or e[0] < 0:
            raise ValueError("KER edges must be non-negative and increasing")
        if w.shape[1] != e.size - 1 or w.shape[0] != len(self.delays) or len(self.delays) != len(self.phases):
            raise ValueError("yield map shape does not match its axes")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("yield map must be non-negative and finite")
        if np.any(w.sum(axis=1) <= 0):
            raise ValueError("yield map has an all-zero scan point")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "ker_edges", e)
        object.__setattr__(self, "delays", np.asarray(self.delays, dtype=float))
        object.__setattr__(self, "phases", np.asarray(self.phases, dtype=float))

    @property
    def n_points(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class EventModel:
    """Everything the sampler needs besides the yield map and seed."""

    species_a: int = 1
    species_b: int = 2
    pair_prob: float = 0.5
    background_rates: dict = field(default_factory=lambda: {1: 4.0, 2: 4.0})
    background_momentum: float = 20.0      # a.u., per Cartesian component
    species: SpeciesTable = DEFAULT_SPECIES
    calib: DetectorCalibration = field(default_factory=DetectorCalibration)
    # scale the pair probability by each point's total yield relative to the
    # largest, so absolute yield changes across the scan reach the data
    scale_pair_prob: bool = False

    def __post_init__(self):
        if not 0.0 <= self.pair_prob <= 1.0:
            raise ValueError("pair probability must be in [0, 1]")
        for sid, lam in self.background_rates.items():
            if lam < 0:
                raise ValueError(f"negative background rate for species {sid}")
            self.species[sid]
        self.species[self.species_a]
        self.species[self.species_b]
        if self.background_momentum < 0:
            raise ValueError("background momentum scale must be non-negative")


def pair_momentum_from_ker(ker_ev, m_a_u: float, m_b_u: float):
    """|p| (a.u.) of a back-to-back pair with total kinetic energy ``ker_ev``."""
    mu = UNITS.u_to_me(m_a_u * m_b_u / (m_a_u + m_b_u))
    return np.sqrt(2.0 * mu * UNITS.ev_to_hartree(np.asarray(ker_ev, dtype=float)))


def _isotropic(rng: np.random.Generator, n: int) -> np.ndarray:
    cos_t = rng.uniform(-1.0, 1.0, n)
    ph = rng.uniform(0.0, 2.0 * np.pi, n)
    sin_t = np.sqrt(1.0 - cos_t**2)
    return np.column_stack([sin_t * np.cos(ph), sin_t * np.sin(ph), cos_t])


CHUNK_SHOTS = 4096


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))


def _sample_chunk(args) -> list[ShotRecord]:
    ymap, model, seed, chunk, first_shot, n_shots, n_per_point = args
    rng = _chunk_rng(seed, chunk)
    sp = model.species
    m_a, m_b = sp[model.species_a].mass_u, sp[model.species_b].mass_u
    shot_ids = np.arange(first_shot, first_shot + n_shots)
    points = shot_ids // n_per_point
    prob = np.full(ymap.n_points, model.pair_prob)
    if model.scale_pair_prob:
        tot = ymap.weights.sum(axis=1)
        prob *= tot / tot.max()
    has_pair = rng.random(n_shots) < prob[points]
    n_pair = int(has_pair.sum())
    # KER: pick a bin by weight at the shot's scan point, then uniform inside it
    edges = ymap.ker_edges
    cdf = np.cumsum(ymap.weights, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random(n_pair)
    pts = points[has_pair]
    bins = np.array([np.searchsorted(cdf[p], x, side="right") for p, x in zip(pts, u)], dtype=int)
    bins = np.minimum(bins, edges.size - 2)
    ker = edges[bins] + rng.random(n_pair) * (edges[bins + 1] - edges[bins])
    pmag = pair_momentum_from_ker(ker, m_a, m_b)
    p_a = pmag[:, None] * _isotropic(rng, n_pair)
    p_b = -p_a
    bg_ids = sorted(model.background_rates)
    bg_counts = {sid: rng.poisson(model.background_rates[sid], n_shots) for sid in bg_ids}
    bg_mom = {sid: rng.normal(0.0, model.background_momentum, (int(bg_counts[sid].sum()), 3))
              for sid in bg_ids}
    bg_pos = {sid: 0 for sid in bg_ids}
    calib = model.calib
    shots = []
    k = 0
    for j in range(n_shots):
        sids, moms = [], []
        if has_pair[j]:
            sids += [model.species_a, model.species_b]
            moms += [p_a[k], p_b[k]]
            k += 1
        for sid in bg_ids:
            c = int(bg_counts[sid][j])
            if c:
                sids += [sid] * c
                moms += list(bg_mom[sid][bg_pos[sid]:bg_pos[sid] + c])
                bg_pos[sid] += c
        species = np.array(sids, dtype=int)
        mom = np.array(moms, dtype=float).reshape(-1, 3)
        hits = np.empty_like(mom)
        for sid in np.unique(species):
            sel = species == sid
            hits[sel] = momentum_to_detector(mom[sel], int(sid), calib)
        if calib.blur_xy > 0 or calib.blur_t > 0:
            hits += rng.normal(0.0, 1.0, hits.shape) * [calib.blur_xy, calib.blur_xy, calib.blur_t]
            mom = None
        order = np.argsort(hits[:, 2], kind="stable")
        p = int(points[j])
        shots.append(ShotRecord(int(shot_ids[j]), float(ymap.delays[p]), float(ymap.phases[p]),
                                species[order], hits[order],
                                None if mom is None else mom[order]))
    return shots


def iter_pair_events(ymap: YieldMap, n_shots: int, model: EventModel, seed: int,
                     threads: int = 1) -> Iterator[ShotRecord]:
    """Stream ``n_shots`` shots per scan point, ordered by shot id.

    Shots are generated in fixed-size chunks, each with its own generator
    spawned from ``seed``; the output does not depend on ``threads``.
    """
    if n_shots < 0:
        raise ValueError("n_shots must be non-negative")
    total = n_shots * ymap.n_points
    tasks = [(ymap, model, seed, c, s, min(CHUNK_SHOTS, total - s), n_shots)
             for c, s in enumerate(range(0, total, CHUNK_SHOTS))]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            for chunk in ex.map(_sample_chunk, tasks):
                yield from chunk
    else:
        for t in tasks:
            yield from _sample_chunk(t)


def sample_pair_events(ymap: YieldMap, n_shots: int, pair_prob: float,
                       background_rates: dict, seed: int, threads: int = 1,
                       **model_kw) -> list[ShotRecord]:
    """Generate shots for every scan point of ``ymap``; see :class:`EventModel`."""
    model = EventModel(pair_prob=pair_prob, background_rates=dict(background_rates), **model_kw)
    return list(iter_pair_events(ymap, n_shots, model, seed, threads))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_events(path, shots: Iterable[ShotRecord], calib: DetectorCalibration,
                 species: SpeciesTable = DEFAULT_SPECIES, config_hash: str = "") -> int:
    """Write shots to ``path``; returns the number of shots written."""
    n = 0
    last = None
    with open(path, "w", newline="") as fh:
        fh.write(EVENTS_MAGIC + "\n")
        fh.write(f"# config_sha256: {config_hash}\n")
        fh.write(f"# calibration: {calib.to_json()}\n")
        fh.write(f"# species: {species.to_json()}\n")
        fh.write("# columns: " + ",".join(EVENT_COLUMNS) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        for shot in shots:
            if last is not None and shot.shot_id <= last:
                raise ValueError("shot ids must be strictly increasing")
            last = shot.shot_id
            d, ph = _fmt(shot.delay), _fmt(shot.phase)
            if len(shot) == 0:
                w.writerow((shot.shot_id, d, ph, EMPTY_SHOT_SPECIES, "nan", "nan", "nan"))
            else:
                w.writerows((shot.shot_id, d, ph, int(s), _fmt(h[0]), _fmt(h[1]), _fmt(h[2]))
                            for s, h in zip(shot.species, shot.hits))
            n += 1
    return n


@dataclass(frozen=True)
class EventHeader:
    calib: DetectorCalibration
    species: SpeciesTable
    config_hash: str


def _read_header(fh) -> tuple[EventHeader, int]:
    lines = []
    for _ in range(5):
        lines.append(fh.readline().rstrip("\n"))
    if lines[0] != EVENTS_MAGIC:
        raise EventFileError(f"line 1: not an entwp event file ({lines[0][:40]!r})")
    try:
        h = lines[1].split(":", 1)[1].strip()
        calib = DetectorCalibration.from_json(lines[2].split(":", 1)[1])
        species = SpeciesTable.from_json(lines[3].split(":", 1)[1])
    except (IndexError, ValueError, TypeError, KeyError) as exc:
        raise EventFileError(f"malformed header: {exc}") from exc
    cols = lines[4].split(":", 1)[-1].strip().split(",")
    if tuple(cols) != EVENT_COLUMNS:
        raise EventFileError("line 5: unexpected column layout")
    return EventHeader(calib, species, h), 5


def read_header(path) -> EventHeader:
    with open(path) as fh:
        return _read_header(fh)[0]


def iter_events(path) -> Iterator[ShotRecord]:
    """Stream shots from an event file with constant per-shot memory."""
    with open(path, newline="") as fh:
        header, lineno = _read_header(fh)
        calib, table = header.calib, header.species
        cur = None
        rows_sp: list[int] = []
        rows_hit: list[tuple[float, float, float]] = []
        last_id = None

        def flush():
            sp = np.array(rows_sp, dtype=int)
            hits = np.array(rows_hit, dtype=float).reshape(-1, 3)
            shot = ShotRecord(cur[0], cur[1], cur[2], sp, hits)
            shot.ensure_momenta(calib)
            return shot

        for row in csv.reader(fh):
            lineno += 1
            try:
                if len(row) != len(EVENT_COLUMNS):
                    raise ValueError(f"expected {len(EVENT_COLUMNS)} fields, got {len(row)}")
                sid_shot = int(row[0])
                delay, phase = float(row[1]), float(row[2])
                sid = int(row[3])
                x, y, t = float(row[4]), float(row[5]), float(row[6])
                if sid != EMPTY_SHOT_SPECIES:
                    if sid not in table:
                        raise ValueError(f"unknown species id {sid}")
                    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(t)):
                        raise ValueError("non-finite hit coordinates")
            except ValueError as exc:
                raise EventFileError(f"line {lineno}: {exc}") from None
            if cur is None or sid_shot != cur[0]:
                if cur is not None:
                    yield flush()
                if last_id is not None and sid_shot <= last_id:
                    raise EventFileError(f"line {lineno}: shot id {sid_shot} is not increasing")
                last_id = sid_shot
                cur = (sid_shot, delay, phase)
                rows_sp, rows_hit = [], []
            elif (delay, phase) != cur[1:]:
                raise EventFileError(f"line {lineno}: scan coordinates change within shot {sid_shot}")
            if sid == EMPTY_SHOT_SPECIES:
                if rows_sp:
                    raise EventFileError(f"line {lineno}: empty-shot marker inside a non-empty shot")
                continue
            rows_sp.append(sid)
            rows_hit.append((x, y, t))
        if cur is not None:
            yield flush()


def read_events(path) -> tuple[EventHeader, list[ShotRecord]]:
    return read_header(path), list(iter_events(path))
