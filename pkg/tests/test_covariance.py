from __future__ import annotations

import random
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from entwp.covariance import (_SUMS, CoincidenceRateWarning, CovarianceAccumulator,
                              PairSelection, coincidence_oracle, covariance_from_sums,
                              covariance_map, jackknife_bruteforce, map_correlation,
                              momentum_gate, shot_pair_counts)
from entwp.events import (DEFAULT_SPECIES, DetectorCalibration, EventModel, ShotRecord, YieldMap,
                          iter_pair_events, momentum_to_detector)

CAL = DetectorCalibration()
EDGES = np.arange(0.5, 10.0001, 0.1)
CENTRES = 0.5 * (EDGES[1:] + EDGES[:-1])


def ymap(n_points=1, centre=4.0):
    w = np.exp(-0.5 * ((CENTRES - centre) / 1.0) ** 2)
    return YieldMap(EDGES, np.arange(n_points) * 10.0, np.zeros(n_points), np.tile(w, (n_points, 1)))


def shots_for(n, pair_prob=0.3, bg=None, seed=1, n_points=1):
    bg = {1: 4.0, 2: 4.0} if bg is None else bg
    return list(iter_pair_events(ymap(n_points), n, EventModel(pair_prob=pair_prob,
                                                               background_rates=bg), seed))


def sums_of(a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    ab = a * b
    cols = {"a": a, "b": b, "ab": ab, "aa": a * a, "bb": b * b, "abab": ab * ab,
            "aab": a * ab, "abb": ab * b}
    return np.array([[cols[k].sum()] for k in _SUMS])


@settings(max_examples=80, deadline=None)
@given(data=st.data(), n=st.integers(3, 40))
def test_closed_form_jackknife_matches_leave_one_out(data, n):
    a = data.draw(arrays(np.int64, n, elements=st.integers(0, 6)))
    b = data.draw(arrays(np.int64, n, elements=st.integers(0, 6)))
    cov, sig = covariance_from_sums(n, sums_of(a, b))
    rc, rs = jackknife_bruteforce(a, b)
    assert cov[0] == pytest.approx(rc, abs=1e-12)
    # compare variances; raw-moment cancellation leaves a rounding floor that
    # grows with the fourth power of the counts where the true value is 0
    floor = 1e-14 * (1.0 + float(np.max(a * b))) ** 4 / n**2
    assert sig[0] ** 2 == pytest.approx(rs**2, rel=1e-7, abs=floor)


def test_covariance_of_constant_counts_is_zero():
    cov, sig = covariance_from_sums(50, sums_of([2] * 50, [3] * 50))
    assert cov[0] == 0 and sig[0] == 0


def test_gate():
    p = np.array([10.0, -3.0, 7.0])
    assert momentum_gate(p, -p, 0.1)
    assert not momentum_gate(p, p, 5.0)
    with pytest.raises(ValueError):
        momentum_gate(p, -p, 0.0)


@pytest.mark.parametrize("eps", [2.0, 4.0, 8.0])
def test_gate_acceptance_follows_maxwell_law(eps):
    # p_A + p_B of two independent N(0, s^2) vectors has chi(3) norm / (s sqrt 2)
    r = np.random.default_rng(int(eps))
    s, n = 20.0, 2_000_000
    pa = r.normal(0, s, (n, 3))
    pb = r.normal(0, s, (n, 3))
    k = int(momentum_gate(pa, pb, eps).sum())
    p = stats.chi.cdf(eps / (s * np.sqrt(2)), 3)
    assert abs(k - n * p) < 5 * np.sqrt(n * p)


def test_small_gate_acceptance_scales_as_cube():
    s = 20.0 * np.sqrt(2)
    p1, p2 = stats.chi.cdf(1.0 / s, 3), stats.chi.cdf(2.0 / s, 3)
    assert p2 / p1 == pytest.approx(8.0, rel=2e-3)


def test_selection_validation():
    with pytest.raises(ValueError):
        PairSelection(1, 1, EDGES)
    with pytest.raises(ValueError):
        PairSelection(1, 2, EDGES[::-1])
    with pytest.raises(ValueError):
        PairSelection(1, 2, EDGES, scan_axis="energy")
    with pytest.raises(KeyError):
        CovarianceAccumulator(PairSelection(1, 9, EDGES))


def _shot(i, species, momenta, delay=0.0, phase=0.0):
    species = np.asarray(species, dtype=int)
    mom = np.asarray(momenta, dtype=float).reshape(-1, 3)
    hits = np.array([momentum_to_detector(p, s, CAL) for s, p in zip(species, mom)]).reshape(-1, 3)
    return ShotRecord(i, delay, phase, species, hits, mom)


def test_shot_pair_counts_distinct_ions():
    sel = PairSelection(1, 2, EDGES, epsilon=5.0)
    p = np.array([80.0, 0.0, 0.0])  # KER about 1.8 eV
    # two A ions both pairing with one B inside the gate: a=2, b=1
    shot = _shot(0, [1, 1, 2], [p, p + [0.5, 0, 0], -p])
    occ, a, b, npair, ncand = shot_pair_counts(shot, sel, DEFAULT_SPECIES)
    assert ncand == 2 and npair.sum() == 2
    assert a.sum() == 2 and b.sum() == 1


def test_independent_backgrounds_give_null_map():
    shots = shots_for(20000, pair_prob=0.0, bg={1: 4.0, 2: 4.0}, seed=3)
    cm = covariance_map(shots, 1, 2, EDGES)
    ok = cm.sigma > 0
    assert np.all(np.abs(cm.cov[ok]) < 5 * cm.sigma[ok])
    assert np.all(cm.cov[~ok] == 0)


def test_null_bias_is_accidental_gated_pair_rate():
    # A_i and B_i only count ions of gated pairs, so an accidental background
    # pair sets both to 1 in its bin: cov_i = f_i (1 - f_i) with f_i its rate
    shots = shots_for(50000, pair_prob=0.0, bg={1: 8.0, 2: 8.0}, seed=13)
    cm = covariance_map(shots, 1, 2, EDGES)
    f = cm.coincidence
    assert f.sum() > 0
    assert np.allclose(cm.cov, f * (1 - f), atol=1e-12)


def test_bernoulli_pair_covariance():
    # one pair in a single KER bin with probability p: cov = p (1 - p)
    w = np.zeros(EDGES.size - 1)
    w[30] = 1.0
    ym = YieldMap(EDGES, [0.0], [0.0], w[None, :])
    p = 0.3
    shots = list(iter_pair_events(ym, 40000, EventModel(pair_prob=p, background_rates={}), 4))
    cm = covariance_map(shots, 1, 2, EDGES)
    assert abs(cm.cov[30, 0] - p * (1 - p)) < 5 * cm.sigma[30, 0]
    assert np.count_nonzero(cm.cov[:, 0]) == 1


def test_permutation_and_chunk_invariance():
    shots = shots_for(3000, n_points=2, seed=5)
    ref = covariance_map(shots, 1, 2, EDGES)
    mixed = shots[:]
    random.Random(0).shuffle(mixed)
    got = covariance_map(mixed, 1, 2, EDGES)
    assert np.array_equal(ref.cov, got.cov) and np.array_equal(ref.sigma, got.sigma)
    sel = PairSelection(1, 2, EDGES)
    parts = [CovarianceAccumulator(sel).update(shots[i::3]) for i in range(3)]
    merged = parts[0].merge(parts[1]).merge(parts[2]).result()
    assert np.array_equal(ref.cov, merged.cov) and np.array_equal(ref.sigma, merged.sigma)
    threaded = covariance_map(shots, 1, 2, EDGES, threads=2, chunk_size=1000)
    assert np.array_equal(ref.cov, threaded.cov)
    assert list(ref.scan_values) == [0.0, 10.0] and ref.scan_axis == "delay"


def test_background_level_does_not_bias_map():
    lo = covariance_map(shots_for(20000, bg={1: 2.0, 2: 2.0}, seed=6), 1, 2, EDGES)
    hi = covariance_map(shots_for(20000, bg={1: 4.0, 2: 4.0}, seed=7), 1, 2, EDGES)
    ok = (lo.sigma > 0) & (hi.sigma > 0)
    pull = (hi.cov[ok] - lo.cov[ok]) / np.hypot(hi.sigma[ok], lo.sigma[ok])
    assert np.mean(pull**2) < 2.0


def test_covariance_linear_in_pair_probability():
    probs = np.array([0.05, 0.1, 0.15, 0.2, 0.25, 0.3])
    tot = []
    for i, p in enumerate(probs):
        cm = covariance_map(shots_for(20000, pair_prob=p, seed=20 + i), 1, 2, EDGES)
        tot.append(cm.cov.sum())
    r = stats.linregress(probs, tot)
    assert r.rvalue**2 > 0.99


def test_coincidence_agrees_with_covariance_at_low_rate():
    shots = shots_for(30000, pair_prob=0.2, bg={}, seed=8)
    cm = covariance_map(shots, 1, 2, EDGES)
    _, co = coincidence_oracle(shots, 1, 2, EDGES)
    assert map_correlation(cm.cov, co) > 0.99


def test_coincidence_warns_at_high_rate():
    shots = shots_for(200, seed=9)
    with pytest.warns(CoincidenceRateWarning):
        coincidence_oracle(shots, 1, 2, EDGES)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        coincidence_oracle(shots_for(200, bg={}, seed=9), 1, 2, EDGES)


def test_no_pairs_gives_zero_map():
    shots = [ShotRecord(i, 0.0, 0.0, np.zeros(0, int), np.zeros((0, 3))) for i in range(10)]
    cm = covariance_map(shots, 1, 2, EDGES)
    assert np.all(cm.cov == 0) and np.all(cm.sigma == 0)
    assert cm.n_shots.tolist() == [10]


def test_result_errors():
    sel = PairSelection(1, 2, EDGES)
    with pytest.raises(ValueError, match="no shots"):
        CovarianceAccumulator(sel).result()
    one = CovarianceAccumulator(sel).update(shots_for(1, seed=1))
    with pytest.raises(ValueError, match="at least 2"):
        one.result()
    both = CovarianceAccumulator(sel)
    both.add(ShotRecord(0, 0.0, 0.0, np.zeros(0, int), np.zeros((0, 3))))
    both.add(ShotRecord(1, 5.0, 1.0, np.zeros(0, int), np.zeros((0, 3))))
    with pytest.raises(ValueError, match="scan axis"):
        both.result()


def test_accumulator_memory_independent_of_shots():
    sel = PairSelection(1, 2, EDGES)
    a = CovarianceAccumulator(sel).update(shots_for(500, seed=2))
    b = CovarianceAccumulator(sel).update(shots_for(5000, seed=2))
    assert a.nbytes() == b.nbytes()
