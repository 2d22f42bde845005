"""KER-resolved covariance mapping between two fragment species.

Single pass over the shot stream. For every scan point and KER bin the
accumulator keeps integer power sums of the per-shot counts ``a`` and ``b``
(a, b, ab, a^2, b^2, (ab)^2, a^2 b, a b^2), from which both the covariance
and its delete-one-shot jackknife error follow in closed form. Memory is
bins x scan points, independent of the number of shots; partial
accumulators merge exactly, so results do not depend on chunking.
"""
from __future__ import annotations

import itertools
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .events import DEFAULT_SPECIES, DetectorCalibration, ShotRecord, SpeciesTable
from .units import UNITS

DEFAULT_GATE = 5.0  # a.u.
_SUMS = ("a", "b", "ab", "aa", "bb", "abab", "aab", "abb")


class CoincidenceRateWarning(UserWarning):
    """Count rates too high for pair counting to be trusted."""


def pair_ker(p_a, p_b, m_a_u: float, m_b_u: float):
    """Total kinetic energy (eV) of two fragments; momenta in a.u., masses in u."""
    p_a = np.asarray(p_a, dtype=float)
    p_b = np.asarray(p_b, dtype=float)
    ma, mb = UNITS.u_to_me(m_a_u), UNITS.u_to_me(m_b_u)
    e = np.sum(p_a**2, axis=-1) / (2 * ma) + np.sum(p_b**2, axis=-1) / (2 * mb)
    return UNITS.hartree_to_ev(e)


def momentum_gate(p_a, p_b, epsilon: float):
    """True where |p_A + p_B| < epsilon."""
    if epsilon <= 0:
        raise ValueError("gate width must be positive")
    s = np.asarray(p_a, dtype=float) + np.asarray(p_b, dtype=float)
    return np.sqrt(np.sum(s**2, axis=-1)) < epsilon


@dataclass(frozen=True)
class PairSelection:
    species_a: int
    species_b: int
    ker_edges: np.ndarray
    epsilon: float | None = DEFAULT_GATE
    scan_axis: str = "auto"

    def __post_init__(self):
        e = np.asarray(self.ker_edges, dtype=float)
        if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("KER bin edges must be strictly increasing")
        object.__setattr__(self, "ker_edges", e)
        if self.scan_axis not in ("delay", "phase", "auto"):
            raise ValueError("scan axis must be 'delay', 'phase' or 'auto'")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("gate width must be positive")
        if self.species_a == self.species_b:
            raise ValueError("covariance needs two distinct species")

    @property
    def n_bins(self) -> int:
        return self.ker_edges.size - 1


def shot_pair_counts(shot: ShotRecord, sel: PairSelection, species: SpeciesTable,
                     calib: DetectorCalibration | None = None):
    """Per-bin counts of distinct A and B ions in gated candidate pairs.

    Returns ``(bins, a, b, n_pairs_per_bin, n_candidates)`` with only the
    occupied bins listed.
    """
    p = shot.momenta if shot.momenta is not None else shot.ensure_momenta(calib)
    ia = np.nonzero(shot.species == sel.species_a)[0]
    ib = np.nonzero(shot.species == sel.species_b)[0]
    n_cand = ia.size * ib.size
    empty = np.empty(0, dtype=np.int64)
    if n_cand == 0:
        return empty, empty, empty, empty, 0
    pa = p[ia][:, None, :]
    pb = p[ib][None, :, :]
    ker = pair_ker(pa, pb, species[sel.species_a].mass_u, species[sel.species_b].mass_u)
    ok = np.ones(ker.shape, dtype=bool)
    if sel.epsilon is not None:
        ok = momentum_gate(pa, pb, sel.epsilon)
    edges = sel.ker_edges
    ok &= (ker >= edges[0]) & (ker < edges[-1])
    ja, jb = np.nonzero(ok)
    if ja.size == 0:
        return empty, empty, empty, empty, n_cand
    bins = np.searchsorted(edges, ker[ja, jb], side="right") - 1
    occ, npair = np.unique(bins, return_counts=True)
    ua = np.unique(bins * ia.size + ja) // ia.size
    ub = np.unique(bins * ib.size + jb) // ib.size
    a = np.searchsorted(occ, ua)
    b = np.searchsorted(occ, ub)
    a = np.bincount(a, minlength=occ.size)
    b = np.bincount(b, minlength=occ.size)
    return occ, a.astype(np.int64), b.astype(np.int64), npair.astype(np.int64), n_cand


@dataclass
class _PointSums:
    n: int
    sums: np.ndarray        # (8, n_bins) int64
    pairs: np.ndarray       # (n_bins,) gated pair counts (coincidence)
    candidates: int = 0

    @classmethod
    def zeros(cls, n_bins: int) -> "_PointSums":
        return cls(0, np.zeros((len(_SUMS), n_bins), dtype=np.int64),
                   np.zeros(n_bins, dtype=np.int64))

    def merge(self, other: "_PointSums") -> None:
        self.n += other.n
        self.sums += other.sums
        self.pairs += other.pairs
        self.candidates += other.candidates


@dataclass
class CovarianceAccumulator:
    sel: PairSelection
    species: SpeciesTable = DEFAULT_SPECIES
    calib: DetectorCalibration | None = None
    points: dict = field(default_factory=dict)

    def __post_init__(self):
        for sid in (self.sel.species_a, self.sel.species_b):
            if sid not in self.species:
                raise KeyError(f"unknown species id {sid}")

    def add(self, shot: ShotRecord) -> None:
        key = (shot.delay, shot.phase)
        ps = self.points.get(key)
        if ps is None:
            ps = self.points[key] = _PointSums.zeros(self.sel.n_bins)
        ps.n += 1
        occ, a, b, npair, ncand = shot_pair_counts(shot, self.sel, self.species, self.calib)
        ps.candidates += ncand
        if occ.size:
            ab = a * b
            s = ps.sums
            s[0, occ] += a
            s[1, occ] += b
            s[2, occ] += ab
            s[3, occ] += a * a
            s[4, occ] += b * b
            s[5, occ] += ab * ab
            s[6, occ] += a * ab
            s[7, occ] += ab * b
            ps.pairs[occ] += npair

    def update(self, shots: Iterable[ShotRecord]) -> "CovarianceAccumulator":
        for shot in shots:
            self.add(shot)
        return self

    def merge(self, other: "CovarianceAccumulator") -> "CovarianceAccumulator":
        for key, ps in other.points.items():
            if key in self.points:
                self.points[key].merge(ps)
            else:
                self.points[key] = _PointSums(ps.n, ps.sums.copy(), ps.pairs.copy(), ps.candidates)
        return self

    def nbytes(self) -> int:
        return sum(ps.sums.nbytes + ps.pairs.nbytes for ps in self.points.values())

    def scan_axis(self) -> str:
        """Resolve ``auto`` to the coordinate that varies across shots."""
        if self.sel.scan_axis != "auto":
            return self.sel.scan_axis
        delays = {k[0] for k in self.points}
        phases = {k[1] for k in self.points}
        if len(phases) == 1:
            return "delay"
        if len(delays) == 1:
            return "phase"
        raise ValueError("both delay and phase vary; choose the scan axis explicitly")

    def grouped(self) -> tuple[str, dict]:
        """Point sums merged along the scan axis, keyed by its value."""
        axis = self.scan_axis()
        j = 0 if axis == "delay" else 1
        out: dict[float, _PointSums] = {}
        for key in sorted(self.points):
            ps = self.points[key]
            if key[j] in out:
                out[key[j]].merge(ps)
            else:
                out[key[j]] = _PointSums(ps.n, ps.sums.copy(), ps.pairs.copy(), ps.candidates)
        return axis, out

    def result(self) -> "CovarianceMap":
        if not self.points:
            raise ValueError("no shots were accumulated")
        axis, groups = self.grouped()
        keys = sorted(groups)
        nb = self.sel.n_bins
        cov = np.empty((nb, len(keys)))
        sig = np.empty_like(cov)
        coinc = np.empty_like(cov)
        counts = np.empty(len(keys), dtype=np.int64)
        for j, k in enumerate(keys):
            ps = groups[k]
            if ps.n < 2:
                raise ValueError(f"scan point {k} has {ps.n} shot(s); need at least 2")
            cov[:, j], sig[:, j] = covariance_from_sums(ps.n, ps.sums)
            coinc[:, j] = ps.pairs / ps.n
            counts[j] = ps.n
        return CovarianceMap(self.sel.ker_edges.copy(), axis, np.array(keys, dtype=float),
                             cov, sig, counts, coinc)


def covariance_from_sums(n: int, sums: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Covariance <ab> - <a><b> and its delete-one jackknife sigma.

    Removing shot k changes the covariance by an affine function of
    (a_k, b_k, a_k b_k); the jackknife variance is therefore (n-1) g^T S g
    with S the population covariance of those three features.
    """
    S = {name: sums[i].astype(float) for i, name in enumerate(_SUMS)}
    N = float(n)
    cov = S["ab"] / N - S["a"] * S["b"] / N**2
    M = N - 1.0
    g = np.array([S["b"] / M**2, S["a"] / M**2, np.full_like(cov, -(1.0 / M + 1.0 / M**2))])
    m = np.array([S["a"], S["b"], S["ab"]]) / N
    E2 = np.array([
        [S["aa"], S["ab"], S["aab"]],
        [S["ab"], S["bb"], S["abb"]],
        [S["aab"], S["abb"], S["abab"]],
    ]) / N
    Sig = E2 - m[:, None] * m[None, :]
    var = (N - 1.0) * np.einsum("ib,ijb,jb->b", g, Sig, g)
    return cov, np.sqrt(np.maximum(var, 0.0))


def jackknife_bruteforce(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Reference covariance and jackknife sigma by explicit leave-one-out."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.size
    cov = np.mean(a * b) - a.mean() * b.mean()
    loo = np.empty(n)
    for k in range(n):
        m = np.ones(n, dtype=bool)
        m[k] = False
        loo[k] = np.mean(a[m] * b[m]) - a[m].mean() * b[m].mean()
    var = (n - 1) / n * np.sum((loo - loo.mean()) ** 2)
    return float(cov), float(np.sqrt(var))


@dataclass(frozen=True)
class CovarianceMap:
    ker_edges: np.ndarray           # eV
    scan_axis: str                  # "delay" (fs) or "phase" (rad)
    scan_values: np.ndarray
    cov: np.ndarray                 # (n_bins, n_points)
    sigma: np.ndarray
    n_shots: np.ndarray             # (n_points,)
    coincidence: np.ndarray         # gated pairs per shot, same shape as cov

    @property
    def ker_centers(self) -> np.ndarray:
        return 0.5 * (self.ker_edges[1:] + self.ker_edges[:-1])


def _accumulate_chunk(args) -> CovarianceAccumulator:
    sel, species, calib, shots = args
    return CovarianceAccumulator(sel, species, calib).update(shots)


def covariance_map(shots: Iterable[ShotRecord], species_a: int, species_b: int,
                   ker_bins, scan_axis: str = "auto", epsilon: float | None = DEFAULT_GATE,
                   species: SpeciesTable = DEFAULT_SPECIES, calib: DetectorCalibration | None = None,
                   threads: int = 1, chunk_size: int = 20000) -> CovarianceMap:
    """Covariance map over a shot stream; see :class:`CovarianceAccumulator`."""
    sel = PairSelection(species_a, species_b, np.asarray(ker_bins, dtype=float), epsilon, scan_axis)
    total = CovarianceAccumulator(sel, species, calib)
    if threads <= 1:
        return total.update(shots).result()
    it = iter(shots)
    chunks = iter(lambda: list(itertools.islice(it, chunk_size)), [])
    with ProcessPoolExecutor(max_workers=threads) as ex:
        for part in ex.map(_accumulate_chunk, ((sel, species, calib, c) for c in chunks)):
            total.merge(part)
    return total.result()


def coincidence_oracle(shots: Iterable[ShotRecord], species_a: int, species_b: int,
                       ker_bins, scan_axis: str = "auto", epsilon: float | None = DEFAULT_GATE,
                       species: SpeciesTable = DEFAULT_SPECIES, calib: DetectorCalibration | None = None,
                       max_candidates_per_shot: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Direct pair-counting histogram: gated pairs per shot, ``(n_bins, n_points)``.

    ``epsilon=None`` counts every A x B combination (raw coincidence). Warns
    when the mean number of A x B candidates per shot exceeds
    ``max_candidates_per_shot``. Returns ``(scan_values, counts)``.
    """
    sel = PairSelection(species_a, species_b, np.asarray(ker_bins, dtype=float), epsilon, scan_axis)
    acc = CovarianceAccumulator(sel, species, calib).update(shots)
    if not acc.points:
        raise ValueError("no shots were accumulated")
    _, groups = acc.grouped()
    keys = sorted(groups)
    n = sum(g.n for g in groups.values())
    cand = sum(g.candidates for g in groups.values())
    if cand / n > max_candidates_per_shot:
        warnings.warn(f"{cand / n:.2f} A-B candidates per shot: coincidence counting "
                      "is contaminated by false pairs at this rate", CoincidenceRateWarning,
                      stacklevel=2)
    out = np.column_stack([groups[k].pairs / groups[k].n for k in keys])
    return np.array(keys, dtype=float), out


def map_correlation(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation of two maps over all bins."""
    x = np.ravel(x)
    y = np.ravel(y)
    return float(np.corrcoef(x, y)[0, 1])
