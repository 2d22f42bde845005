"""Spectral pulse-shaper mask and shaped pump-probe field synthesis.

Lab units here: time in fs, frequency in PHz (cycles per fs), phase in rad.
Fields are handled as complex baseband envelopes on a frequency grid
centred at the carrier; the absolute frequency is ``carrier + offset``.

Transform convention: ``a(t) = int A(dnu) exp(-2 pi i dnu t) d(dnu)``, so a
spectral factor ``exp(+2 pi i nu tau)`` delays a pulse by ``+tau``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .units import CARRIER_FREQUENCY_PHZ


class AliasingError(ValueError):
    """Requested delay does not fit in the time window of the spectral sampling."""


def wrap_phase(phi):
    """Wrap angles to (-pi, pi]."""
    w = np.pi - np.mod(np.pi - np.asarray(phi, dtype=float), 2.0 * np.pi)
    return float(w) if np.ndim(phi) == 0 else w


@dataclass(frozen=True)
class ShaperMask:
    A_tot: float = 1.0
    A_R: float = 1.0
    tau: float = 0.0
    phi_L: float = 0.0
    nu_L: float = CARRIER_FREQUENCY_PHZ

    def __post_init__(self):
        if self.A_tot <= 0:
            raise ValueError("A_tot must be positive")
        if self.A_R < 0:
            raise ValueError("A_R must be non-negative")


def shaper_mask(nu, mask: ShaperMask):
    """M(nu) = A_tot (1 + A_R exp(i 2 pi tau (nu - nu_L) + i phi_L))."""
    nu = np.asarray(nu, dtype=float)
    m = mask.A_tot * (1.0 + mask.A_R * np.exp(
        1j * (2.0 * np.pi * mask.tau * (nu - mask.nu_L) + mask.phi_L)))
    return complex(m) if m.ndim == 0 else m


def controllable_phase(phi_L: float, nu_L: float, tau: float) -> float:
    """Relative pump-probe phase phi = phi_L - 2 pi nu_L tau, wrapped."""
    return wrap_phase(phi_L - 2.0 * np.pi * nu_L * tau)


@dataclass(frozen=True)
class PulseSpec:
    """Gaussian pulse sampled on a baseband frequency grid.

    ``fwhm`` is the intensity FWHM in fs and ``E0`` the peak field amplitude.
    The grid has ``n`` points with time step ``dt`` (fs), so the time window
    is ``n * dt`` and the spectral step ``1 / (n dt)``.
    """

    fwhm: float = 7.0
    E0: float = 1.0
    carrier: float = CARRIER_FREQUENCY_PHZ
    dt: float = 0.25
    n: int = 4096

    def __post_init__(self):
        if self.fwhm <= 0:
            raise ValueError("FWHM must be positive")
        if self.dt <= 0 or self.n < 16:
            raise ValueError("need dt > 0 and at least 16 samples")
        # transform-limited Gaussian: intensity FWHM product 2 ln2 / pi
        bandwidth = 2.0 * math.log(2.0) / (np.pi * self.fwhm)
        if 1.0 / self.dt < 8.0 * bandwidth:
            raise ValueError("spectral window must cover 8x the pulse bandwidth")
        if self.n * self.dt < 8.0 * self.fwhm:
            raise ValueError("time window too short for the pulse envelope")

    @property
    def omega0(self) -> float:
        """Carrier angular frequency in rad/fs."""
        return 2.0 * np.pi * self.carrier

    @property
    def t(self) -> np.ndarray:
        """Centred time axis (fs)."""
        return (np.arange(self.n) - self.n // 2) * self.dt

    @property
    def dnu(self) -> np.ndarray:
        """Frequency offsets from the carrier (PHz), ascending."""
        return np.fft.fftshift(np.fft.fftfreq(self.n, d=self.dt))

    @property
    def nu(self) -> np.ndarray:
        return self.carrier + self.dnu

    def envelope(self) -> np.ndarray:
        t = self.t
        return self.E0 * np.exp(-2.0 * math.log(2.0) * t**2 / self.fwhm**2)

    def spectrum(self) -> np.ndarray:
        """Complex spectrum E(nu) on :attr:`dnu`."""
        return to_spectrum(self.envelope(), self.dt)


def to_spectrum(a: np.ndarray, dt: float) -> np.ndarray:
    """Centred time samples -> centred spectrum, A = int a exp(+2 pi i nu t) dt."""
    n = a.size
    return np.fft.fftshift(np.fft.ifft(np.fft.ifftshift(a))) * n * dt


def to_time(A: np.ndarray, dt: float) -> np.ndarray:
    """Inverse of :func:`to_spectrum`."""
    n = A.size
    return np.fft.fftshift(np.fft.fft(np.fft.ifftshift(A))) / (n * dt)


def shaped_field(pulse: PulseSpec, mask: ShaperMask) -> tuple[np.ndarray, np.ndarray]:
    """Time-domain complex envelope of ``M(nu) E(nu)``; returns ``(t, field)``."""
    half_window = 0.5 * pulse.n * pulse.dt
    if abs(mask.tau) + 4.0 * pulse.fwhm > half_window:
        raise AliasingError(
            f"delay {mask.tau} fs does not fit in the +/-{half_window:.0f} fs window "
            "set by the spectral sampling")
    shaped = shaper_mask(pulse.nu, mask) * pulse.spectrum()
    return pulse.t, to_time(shaped, pulse.dt)


def _refine_peak(y: np.ndarray, i: int) -> tuple[float, float]:
    """Three-point parabolic vertex around sample ``i``: (offset, height)."""
    if i <= 0 or i >= y.size - 1:
        return 0.0, float(y[i])
    a, b, c = y[i - 1], y[i], y[i + 1]
    den = a - 2.0 * b + c
    if den == 0:
        return 0.0, float(b)
    off = 0.5 * (a - c) / den
    return float(off), float(b - 0.25 * (a - c) * off)


def envelope_peaks(t: np.ndarray, field: np.ndarray, rel_height: float = 1e-3,
                   n: int = 2) -> list[tuple[float, float]]:
    """Largest ``n`` local maxima of ``|field|`` as (time, amplitude), time-ordered."""
    amp = np.abs(field)
    inner = (amp[1:-1] >= amp[:-2]) & (amp[1:-1] > amp[2:]) & (amp[1:-1] > rel_height * amp.max())
    idx = np.nonzero(inner)[0] + 1
    idx = idx[np.argsort(amp[idx])[::-1][:n]]
    dt = t[1] - t[0]
    peaks = []
    for i in sorted(idx):
        off, h = _refine_peak(amp, int(i))
        peaks.append((float(t[i] + off * dt), h))
    return peaks


def fwhm(x: np.ndarray, y: np.ndarray) -> float:
    """Full width at half maximum of a single-peaked curve, linear interpolation."""
    y = np.asarray(y, dtype=float)
    i = int(np.argmax(y))
    half = 0.5 * y[i]
    lo = i
    while lo > 0 and y[lo] > half:
        lo -= 1
    hi = i
    while hi < y.size - 1 and y[hi] > half:
        hi += 1
    if y[lo] > half or y[hi] > half:
        raise ValueError("curve does not fall to half maximum inside the window")
    xl = x[lo] + (half - y[lo]) * (x[lo + 1] - x[lo]) / (y[lo + 1] - y[lo])
    xr = x[hi - 1] + (half - y[hi - 1]) * (x[hi] - x[hi - 1]) / (y[hi] - y[hi - 1])
    return float(xr - xl)


def nphoton_effective_field(pulse: PulseSpec, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Spectral intensity of the n-th power of the field envelope.

    Returns ``(dnu, |FT[E(t)^n]|^2)`` with the carrier offset axis in PHz.
    """
    if n < 1:
        raise ValueError("photon order must be >= 1")
    spec = to_spectrum(pulse.envelope() ** n, pulse.dt)
    return pulse.dnu, np.abs(spec) ** 2
