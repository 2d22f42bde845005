"""Spatial grids and spline-defined dissociative potential curves.

Everything here is in atomic units (bohr, hartree).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .units import UNITS


def _is_power_of_two(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic grid on [R_min, R_max) with N points.

    The right end point is excluded so that ``dR = (R_max - R_min) / N`` and
    the conjugate momentum grid has spacing ``2 pi / (N dR)``.
    """

    R_min: float = 1.0
    R_max: float = 60.0
    N: int = 2048

    def __post_init__(self):
        if not _is_power_of_two(int(self.N)):
            raise ValueError(f"grid size N={self.N} must be a power of two >= 2")
        if not self.R_max > self.R_min:
            raise ValueError("R_max must exceed R_min")

    @property
    def dR(self) -> float:
        return (self.R_max - self.R_min) / self.N

    @property
    def R(self) -> np.ndarray:
        return self.R_min + self.dR * np.arange(self.N)

    @property
    def k(self) -> np.ndarray:
        """Angular wavenumbers (= momenta, hbar = 1) in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.dR)

    @property
    def dk(self) -> float:
        return 2.0 * np.pi / (self.N * self.dR)

    def contains(self, R: float) -> bool:
        return self.R_min <= R < self.R_max


@dataclass(frozen=True)
class PotentialCurve:
    """Natural cubic spline through control points, flat beyond the last one.

    Left of the first control point the curve is continued linearly with
    the end slope, which keeps it C2 there because the natural spline has
    zero curvature at its ends.
    """

    control_R: tuple[float, ...]
    control_V: tuple[float, ...]
    _spline: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        R = np.asarray(self.control_R, dtype=float)
        V = np.asarray(self.control_V, dtype=float)
        if R.shape != V.shape or R.ndim != 1:
            raise ValueError("control R and V must be 1D sequences of equal length")
        if R.size < 4:
            raise ValueError(f"need at least 4 control points, got {R.size}")
        if np.any(np.diff(R) <= 0):
            raise ValueError("control point R values must be strictly increasing")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(V))):
            raise ValueError("control points must be finite")
        object.__setattr__(self, "_spline", CubicSpline(R, V, bc_type="natural"))

    @property
    def control_points(self) -> list[tuple[float, float]]:
        return list(zip(self.control_R, self.control_V))

    @property
    def asymptotic_value(self) -> float:
        return float(self.control_V[-1])

    def __call__(self, R) -> np.ndarray:
        R = np.asarray(R, dtype=float)
        r0, r1 = self.control_R[0], self.control_R[-1]
        inside = self._spline(np.clip(R, r0, r1))
        slope0 = self._spline(r0, 1)
        left = self.control_V[0] + slope0 * (R - r0)
        out = np.where(R < r0, left, inside)
        return np.where(R > r1, self.asymptotic_value, out)

    def derivative(self, R, order: int = 1) -> np.ndarray:
        R = np.asarray(R, dtype=float)
        r0, r1 = self.control_R[0], self.control_R[-1]
        d = self._spline(np.clip(R, r0, r1), order)
        if order == 1:
            d = np.where(R < r0, self._spline(r0, 1), d)
        else:
            d = np.where(R < r0, 0.0, d)
        return np.where(R > r1, 0.0, d)

    def shifted(self, offset: float) -> "PotentialCurve":
        return PotentialCurve(self.control_R, tuple(v + offset for v in self.control_V))


def build_spline_potential(control_points: Sequence[tuple[float, float]]) -> PotentialCurve:
    """Build a :class:`PotentialCurve` from ``(R, V)`` pairs in bohr/hartree."""
    pts = [(float(r), float(v)) for r, v in control_points]
    return PotentialCurve(tuple(p[0] for p in pts), tuple(p[1] for p in pts))


def perturb_potential(curve: PotentialCurve, seed: int, fraction: float) -> PotentialCurve:
    """Scale every control V except the first by a factor in [1-f, 1+f].

    The first control point fixes the energy origin and is left alone. The
    factors depend only on ``seed`` and the number of control points, so two
    curves with the same point count perturbed with the same seed receive
    identical factors.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"perturbation fraction must be in [0, 1), got {fraction}")
    if fraction == 0.0:
        return curve
    rng = np.random.default_rng(seed)
    factors = rng.uniform(1.0 - fraction, 1.0 + fraction, size=len(curve.control_V) - 1)
    V = np.asarray(curve.control_V, dtype=float).copy()
    V[1:] *= factors
    return PotentialCurve(curve.control_R, tuple(float(v) for v in V))


def curve_extrema(curve: PotentialCurve, n: int = 4001) -> tuple[np.ndarray, np.ndarray]:
    """Interior local minima and maxima positions within the control span."""
    R = np.linspace(curve.control_R[0], curve.control_R[-1], n)
    dV = curve.derivative(R)
    s = np.sign(dV)
    idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
    minima = R[idx[(s[idx] < 0)]]
    maxima = R[idx[(s[idx] > 0)]]
    return minima, maxima


def has_rolldown_well_barrier(curve: PotentialCurve) -> bool:
    """True for exactly one interior minimum followed by one interior maximum."""
    minima, maxima = curve_extrema(curve)
    return len(minima) == 1 and len(maxima) == 1 and minima[0] < maxima[0]


@dataclass(frozen=True)
class PotentialPair:
    """Two potential curves; ``constant_offset`` is added to the second."""

    V1: PotentialCurve
    V2: PotentialCurve
    constant_offset: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.constant_offset):
            raise ValueError("constant offset must be finite")

    def v1(self, R) -> np.ndarray:
        return self.V1(R)

    def v2(self, R) -> np.ndarray:
        return self.V2(R) + self.constant_offset

    def on_grid(self, grid: SpatialGrid) -> tuple[np.ndarray, np.ndarray]:
        R = grid.R
        return self.v1(R), self.v2(R)

    def perturbed(self, seed: int, fraction: float) -> "PotentialPair":
        # same seed for both curves keeps the pair nearly parallel
        return PotentialPair(
            perturb_potential(self.V1, seed, fraction),
            perturb_potential(self.V2, seed, fraction),
            self.constant_offset,
        )


def coulomb_energy_distance(x):
    """Coulomb relation E = 1/R in atomic units; maps energy <-> distance.

    The map is its own inverse, so the same function converts a KER in
    hartree to a distance in bohr and back.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValueError("Coulomb energy/distance must be positive and finite")
    out = 1.0 / arr
    return float(out) if np.ndim(x) == 0 else out


def coulomb_energy_ev(R_angstrom):
    """Coulomb energy (eV) of two unit charges at ``R_angstrom``."""
    R = UNITS.angstrom_to_bohr(np.asarray(R_angstrom, dtype=float))
    return UNITS.hartree_to_ev(coulomb_energy_distance(R))


def coulomb_distance_angstrom(E_ev):
    E = UNITS.ev_to_hartree(np.asarray(E_ev, dtype=float))
    return UNITS.bohr_to_angstrom(coulomb_energy_distance(E))
