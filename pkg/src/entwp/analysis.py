"""Delay-scan Fourier analysis, per-bin phase-scan fits and phase-vs-1/E.

Fits use the linear form ``c0 + A cos(phi) + B sin(phi)`` so that
``c1 = hypot(A, B)`` and ``dPhi = atan2(B, A)``; the amplitude is always
non-negative and the sign is carried by the phase.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .shaper import wrap_phase


@dataclass(frozen=True)
class ModulationSpectrum:
    freq: np.ndarray        # cycles per unit of the delay axis
    amplitude: np.ndarray
    peak_freq: float
    period: float           # nan when no peak clears the floor


def _check_uniform(x: np.ndarray) -> float:
    d = np.diff(x)
    if x.size < 4 or np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-6, atol=0):
        raise ValueError("delay axis must be uniformly sampled and increasing")
    return float(d[0])


def modulation_spectrum(tau: np.ndarray, y: np.ndarray, detrend: bool = True,
                        pad_factor: int = 8, min_period: float | None = None,
                        floor: float = 1e-9) -> ModulationSpectrum:
    """Hann-windowed amplitude spectrum and dominant modulation period.

    The mean (and a linear trend if ``detrend``) is removed first; the peak
    bin is refined by three-point parabolic interpolation. ``min_period``
    optionally ignores faster components.
    """
    tau = np.asarray(tau, dtype=float)
    y = np.asarray(y, dtype=float)
    step = _check_uniform(tau)
    if detrend:
        coef = np.polyfit(tau, y, 1)
        r = y - np.polyval(coef, tau)
    else:
        r = y - y.mean()
    w = np.hanning(y.size)
    nfft = 1 << int(np.ceil(np.log2(pad_factor * y.size)))
    amp = np.abs(np.fft.rfft(r * w, n=nfft)) * 2.0 / w.sum()
    freq = np.fft.rfftfreq(nfft, d=step)
    search = freq > 0
    if min_period is not None:
        search &= freq <= 1.0 / min_period
    scale = max(np.max(np.abs(y)), np.finfo(float).tiny)
    cand = np.where(search, amp, -np.inf)
    i = int(np.argmax(cand))
    if not search.any() or amp[i] <= floor * scale or i == 0 or i == amp.size - 1:
        return ModulationSpectrum(freq, amp, np.nan, np.nan)
    a, b, c = amp[i - 1], amp[i], amp[i + 1]
    den = a - 2 * b + c
    off = 0.5 * (a - c) / den if den != 0 else 0.0
    f = freq[i] + off * (freq[1] - freq[0])
    return ModulationSpectrum(freq, amp, float(f), float(1.0 / f))


@dataclass(frozen=True)
class PhaseFitResult:
    c0: float
    c1: float
    phase: float
    residual_rms: float
    sigma_c0: float
    sigma_c1: float
    sigma_phase: float
    significant: bool


def fit_cosine(phi: np.ndarray, y: np.ndarray, sigma: np.ndarray | None = None):
    """Weighted least squares for c0 + A cos(phi) + B sin(phi).

    Returns ``(beta, cov, residual_rms)`` with ``beta = (c0, A, B)``.
    """
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    X = np.column_stack([np.ones_like(phi), np.cos(phi), np.sin(phi)])
    if sigma is None:
        w = np.ones_like(y)
    else:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma <= 0):
            raise ValueError("per-sample errors must be positive")
        w = 1.0 / sigma**2
    XtW = X.T * w
    normal = XtW @ X
    beta = np.linalg.solve(normal, XtW @ y)
    res = y - X @ beta
    rms = float(np.sqrt(np.mean(res**2)))
    inv = np.linalg.inv(normal)
    dof = phi.size - 3
    if sigma is not None:
        cov = inv
    elif dof > 0:
        cov = inv * float(np.sum(res**2)) / dof
    else:
        cov = np.full((3, 3), np.inf)
    return beta, cov, rms


def fit_phase_scan(phi: np.ndarray, Y: np.ndarray, sigma: np.ndarray | None = None,
                   significance: float = 3.0, min_rel_amplitude: float = 1e-3) -> list[PhaseFitResult]:
    """Fit c0 + c1 cos(phi - dPhi) independently in every energy bin.

    ``Y`` has shape ``(n_bins, n_phi)``; ``sigma`` (same shape) weights the
    fit, except in rows holding a non-positive entry, which are fitted
    unweighted. A bin is significant when c1 exceeds
    ``significance`` times its standard error and ``min_rel_amplitude`` times
    the largest c1 of the scan.
    """
    phi = np.asarray(phi, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if phi.size < 3:
        raise ValueError("need at least 3 phase samples for a 3-parameter fit")
    if Y.shape[1] != phi.size:
        raise ValueError("Y must have one column per phase sample")
    raw = []
    for b in range(Y.shape[0]):
        s = None if sigma is None else np.atleast_2d(sigma)[b]
        if s is not None and not np.all(s > 0):
            # empty bins carry zero error estimates; fall back to equal weights
            s = None
        beta, cov, rms = fit_cosine(phi, Y[b], s)
        c0, A, B = beta
        c1 = float(np.hypot(A, B))
        if c1 > 0 and np.all(np.isfinite(cov)):
            var_c1 = (A * A * cov[1, 1] + B * B * cov[2, 2] + 2 * A * B * cov[1, 2]) / c1**2
            var_ph = (B * B * cov[1, 1] + A * A * cov[2, 2] - 2 * A * B * cov[1, 2]) / c1**4
            s_c1, s_ph = float(np.sqrt(max(var_c1, 0.0))), float(np.sqrt(max(var_ph, 0.0)))
        else:
            s_c1 = s_ph = float("inf")
        s_c0 = float(np.sqrt(cov[0, 0])) if np.isfinite(cov[0, 0]) else float("inf")
        raw.append((float(c0), c1, wrap_phase(np.arctan2(B, A)), rms, s_c0, s_c1, s_ph))
    cmax = max((r[1] for r in raw), default=0.0)
    out = []
    for c0, c1, ph, rms, s0, s1, sp in raw:
        sig = bool(c1 > 0 and c1 > significance * s1 and c1 >= min_rel_amplitude * cmax)
        out.append(PhaseFitResult(c0, c1, ph, rms, s0, s1, sp, sig))
    return out


def first_moment(E: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Yield-weighted mean energy for each phase column of ``Y[bin, phi]``."""
    E = np.asarray(E, dtype=float)
    Y = np.asarray(Y, dtype=float)
    tot = Y.sum(axis=0)
    if np.any(tot <= 0):
        raise ValueError("every phase column needs a positive total yield")
    return (E[:, None] * Y).sum(axis=0) / tot


def phase_vs_inverse_energy(fits: list[PhaseFitResult], energies: np.ndarray,
                            significant_only: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Fitted phases against 1/E, ascending in 1/E and unwrapped.

    Unwrapping starts at the bin with the largest modulation amplitude.
    """
    E = np.asarray(energies, dtype=float)
    keep = np.array([f.significant or not significant_only for f in fits]) & (E > 0)
    if not keep.any():
        return np.empty(0), np.empty(0)
    inv = 1.0 / E[keep]
    ph = np.array([f.phase for f, k in zip(fits, keep) if k])
    amp = np.array([f.c1 for f, k in zip(fits, keep) if k])
    order = np.argsort(inv)
    inv, ph, amp = inv[order], ph[order], amp[order]
    s = int(np.argmax(amp))
    out = np.empty_like(ph)
    out[s:] = np.unwrap(ph[s:])
    out[: s + 1] = np.unwrap(ph[: s + 1][::-1])[::-1]
    return inv, out


def line_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line; returns (slope, intercept, R^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res**2)) / sst if sst > 0 else (1.0 if np.allclose(res, 0) else 0.0)
    return float(slope), float(icpt), r2


@dataclass(frozen=True)
class HockeyStick:
    leading_r2: float
    trailing_departure: float
    peak_x: float
    lobe: tuple[float, float]
    slope: float

    def holds(self, r2_min: float = 0.99, departure_min: float = 0.3) -> bool:
        return self.leading_r2 > r2_min and self.trailing_departure > departure_min


def hockey_stick(x: np.ndarray, phase: np.ndarray, weight: np.ndarray,
                 lobe_floor: float = 0.01, min_points: int = 5) -> HockeyStick:
    """Linear-blade / bent-handle test of a phase profile.

    The main lobe is the contiguous run around the weight maximum where the
    weight stays above ``lobe_floor`` of the peak and the phase is defined.
    A line is fitted from the peak to the leading (large-x) edge; the handle
    departure is the largest deviation from that line between the trailing
    edge and the peak.
    """
    x = np.asarray(x, dtype=float)
    phase = np.asarray(phase, dtype=float)
    w = np.where(np.isnan(phase), -np.inf, np.asarray(weight, dtype=float))
    order = np.argsort(x)
    x, phase, w = x[order], phase[order], w[order]
    imax = int(np.argmax(w))
    ok = (w >= lobe_floor * w[imax]) & np.isfinite(phase)
    hi = imax
    while hi + 1 < x.size and ok[hi + 1]:
        hi += 1
    lo = imax
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    lead = slice(imax, hi + 1)
    if hi - imax + 1 < min_points:
        return HockeyStick(0.0, 0.0, float(x[imax]), (float(x[lo]), float(x[hi])), 0.0)
    slope, icpt, r2 = line_fit(x[lead], phase[lead])
    trail = slice(lo, imax + 1)
    dev = float(np.max(np.abs(phase[trail] - (slope * x[trail] + icpt))))
    return HockeyStick(r2, dev, float(x[imax]), (float(x[lo]), float(x[hi])), slope)
