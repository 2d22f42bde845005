"""Split-operator propagation of nuclear wave packets on 1D potentials.

Atomic units throughout (hbar = 1). A step is the symmetric splitting

    exp(-i V dt/2) . F^-1 exp(-i k^2 dt / 2 mu) F . exp(-i V dt/2)

optionally followed by multiplication with an absorbing edge mask. For runs
of many steps the trailing and leading half potential phases of neighbouring
steps are merged, which is exact because both are diagonal in R.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
import rocket_fft  # noqa: F401  (registers np.fft for numba)

from .potentials import PotentialCurve, PotentialPair, SpatialGrid
from .units import DEFAULT_REDUCED_MASS_ME, UNITS


class PropagationEdgeError(RuntimeError):
    """Raised when a packet reaches the grid edge with no absorber to take it."""


class ZeroOverlapError(ValueError):
    """Raised when two packets share no grid points above the density floor."""


@numba.njit(cache=True)
def _evolve(psi, half_v, full_v_mask, half_v_mask, kin, nsteps):
    out = psi * half_v
    for i in range(nsteps):
        out = np.fft.ifft(np.fft.fft(out) * kin)
        if i < nsteps - 1:
            out = out * full_v_mask
    return out * half_v_mask


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Wavefunction:
    psi: np.ndarray
    grid: SpatialGrid
    mass: float = DEFAULT_REDUCED_MASS_ME

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        psi = np.asarray(self.psi)
        if psi.shape != (self.grid.N,):
            raise ValueError(f"wavefunction has {psi.shape} points, grid has {self.grid.N}")
        object.__setattr__(self, "psi", _readonly(psi))

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    def norm(self) -> float:
        return float(np.sum(self.density) * self.grid.dR)

    def normalized(self) -> "Wavefunction":
        return Wavefunction(self.psi / np.sqrt(self.norm()), self.grid, self.mass)

    def mean_R(self) -> float:
        rho = self.density
        return float(np.sum(rho * self.grid.R) / np.sum(rho))

    def variance_R(self) -> float:
        rho = self.density
        m = np.sum(rho * self.grid.R) / np.sum(rho)
        return float(np.sum(rho * (self.grid.R - m) ** 2) / np.sum(rho))

    def mean_p(self) -> float:
        phi = np.fft.fft(self.psi)
        w = np.abs(phi) ** 2
        return float(np.sum(w * self.grid.k) / np.sum(w))

    def with_psi(self, psi: np.ndarray) -> "Wavefunction":
        return Wavefunction(psi, self.grid, self.mass)


def init_gaussian(grid: SpatialGrid, R0: float, sigma: float, p0: float = 0.0,
                  mass: float = DEFAULT_REDUCED_MASS_ME) -> Wavefunction:
    """Normalized Gaussian with position standard deviation ``sigma``."""
    if not grid.contains(R0):
        raise ValueError(f"R0={R0} lies outside the grid [{grid.R_min}, {grid.R_max})")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if mass <= 0:
        raise ValueError("mass must be positive")
    R = grid.R
    psi = np.exp(-((R - R0) ** 2) / (4.0 * sigma**2) + 1j * p0 * (R - R0))
    psi /= np.sqrt(np.sum(np.abs(psi) ** 2) * grid.dR)
    return Wavefunction(psi, grid, mass)


def absorber_mask(grid: SpatialGrid, strength: float, start_R: float | None = None) -> np.ndarray:
    """Per-step amplitude mask ``1 - strength * sin^2`` ramping over the right edge.

    With ``strength = 1`` the ramp is a cos^2 profile reaching zero at R_max.
    The default ramp covers the last 10% of the grid.
    """
    if start_R is None:
        start_R = grid.R_max - 0.1 * (grid.R_max - grid.R_min)
    if not grid.contains(start_R):
        raise ValueError("absorber start must lie inside the grid")
    if not 0.0 <= strength <= 1.0:
        raise ValueError("absorber strength must be in [0, 1]")
    s = np.clip((grid.R - start_R) / (grid.R_max - start_R), 0.0, 1.0)
    return 1.0 - strength * np.sin(0.5 * np.pi * s) ** 2


def _potential_on_grid(V, grid: SpatialGrid) -> np.ndarray:
    if isinstance(V, PotentialCurve):
        return V(grid.R)
    arr = np.asarray(V, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.N, float(arr))
    if arr.shape != (grid.N,):
        raise ValueError(f"potential has {arr.shape} points, grid has {grid.N}")
    return arr


class SplitOperator:
    """Precomputed phase factors for repeated stepping on one potential."""

    def __init__(self, grid: SpatialGrid, V, mass: float, dt: float,
                 mask: np.ndarray | None = None):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.grid = grid
        self.mass = mass
        self.dt = dt
        self.V = _potential_on_grid(V, grid)
        mask = np.ones(grid.N) if mask is None else np.asarray(mask, dtype=float)
        self.half_v = np.exp(-0.5j * dt * self.V)
        self.half_v_mask = self.half_v * mask
        self.full_v_mask = np.exp(-1j * dt * self.V) * mask
        self.kin = np.exp(-0.5j * dt * grid.k**2 / mass)

    def evolve(self, chi: Wavefunction, nsteps: int) -> Wavefunction:
        if chi.grid != self.grid:
            raise ValueError("wavefunction grid does not match propagator grid")
        if nsteps <= 0:
            return chi
        psi = _evolve(np.array(chi.psi), self.half_v, self.full_v_mask,
                      self.half_v_mask, self.kin, int(nsteps))
        return chi.with_psi(psi)


def split_operator_step(chi: Wavefunction, V, dt: float,
                        mask: np.ndarray | None = None) -> Wavefunction:
    """Advance ``chi`` by one symmetric split-operator step of length ``dt``."""
    return SplitOperator(chi.grid, V, chi.mass, dt, mask).evolve(chi, 1)


def overlap(chi1: Wavefunction, chi2: Wavefunction) -> complex:
    """Inner product <chi1|chi2> with dR weight."""
    if chi1.grid != chi2.grid:
        raise ValueError("wavefunctions live on different grids")
    return complex(np.sum(np.conj(chi1.psi) * chi2.psi) * chi1.grid.dR)


def phase_difference(chi1: Wavefunction, chi2: Wavefunction,
                     density_floor: float = 1e-4) -> np.ndarray:
    """arg(chi2 conj(chi1)) unwrapped outward from the joint density maximum.

    Points where either density is below ``density_floor`` times its own
    maximum are NaN. Unwrapping skips masked points.
    """
    if chi1.grid != chi2.grid:
        raise ValueError("wavefunctions live on different grids")
    rho1, rho2 = chi1.density, chi2.density
    valid = (rho1 >= density_floor * rho1.max()) & (rho2 >= density_floor * rho2.max())
    if rho1.max() == 0 or rho2.max() == 0 or not valid.any():
        raise ZeroOverlapError("no grid points where both densities exceed the floor")
    raw = np.angle(chi2.psi * np.conj(chi1.psi))
    idx = np.nonzero(valid)[0]
    start = idx[np.argmax((rho1 * rho2)[idx])]
    out = np.full(chi1.grid.N, np.nan)
    right = idx[idx >= start]
    left = idx[idx <= start][::-1]
    out[right] = np.unwrap(raw[right])
    out[left] = np.unwrap(raw[left])
    return out


@dataclass(frozen=True)
class PropagationParams:
    """Time stepping controls, atomic units."""

    dt: float = 0.5
    total_time: float = 4000.0
    snapshot_interval: float = 100.0
    absorber_strength: float = 0.0
    absorber_start_R: float | None = None
    edge_tolerance: float = 1e-6

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.total_time < 0:
            raise ValueError("total_time must be non-negative")
        k = self.snapshot_interval / self.dt
        if self.snapshot_interval <= 0 or abs(k - round(k)) > 1e-9 * max(1.0, k):
            raise ValueError("snapshot_interval must be a positive multiple of dt")

    @property
    def steps_per_snapshot(self) -> int:
        return int(round(self.snapshot_interval / self.dt))

    @property
    def n_snapshots(self) -> int:
        # last snapshot is at or just past total_time so the run covers it
        return int(np.ceil(self.total_time / self.snapshot_interval - 1e-9)) + 1

    @classmethod
    def from_fs(cls, dt_au: float = 0.5, total_fs: float = 100.0, snapshot_fs: float = 1.0,
                **kw) -> "PropagationParams":
        """Build params with times in fs; the snapshot interval is snapped to dt."""
        steps = max(1, int(round(UNITS.fs_to_au(snapshot_fs) / dt_au)))
        return cls(dt=dt_au, total_time=UNITS.fs_to_au(total_fs),
                   snapshot_interval=steps * dt_au, **kw)


@dataclass(frozen=True)
class TwoStateWavepacket:
    chi1: Wavefunction
    chi2: Wavefunction
    potentials: PotentialPair
    a1: complex = 1 / np.sqrt(2)
    a2: complex = 1 / np.sqrt(2)

    def __post_init__(self):
        if self.chi1.grid != self.chi2.grid:
            raise ValueError("both nuclear wavefunctions must share one grid")
        if abs(self.a1) ** 2 + abs(self.a2) ** 2 > 1.0 + 1e-12:
            raise ValueError("|a1|^2 + |a2|^2 must not exceed 1")

    @property
    def grid(self) -> SpatialGrid:
        return self.chi1.grid


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped snapshots of both nuclear wavefunctions."""

    wavepacket: TwoStateWavepacket
    params: PropagationParams
    times: np.ndarray
    chi1: np.ndarray
    chi2: np.ndarray
    _ops: tuple = field(default=(), repr=False, compare=False)

    @property
    def grid(self) -> SpatialGrid:
        return self.wavepacket.grid

    def index_of(self, t: float) -> int:
        if t < self.times[0] - 1e-9 or t > self.times[-1] + 1e-9:
            raise ValueError(
                f"t={t} outside trajectory range [{self.times[0]}, {self.times[-1]}]")
        return int(np.argmin(np.abs(self.times - t)))

    def snapshot(self, i: int) -> tuple[Wavefunction, Wavefunction]:
        wp = self.wavepacket
        return (Wavefunction(self.chi1[i], self.grid, wp.chi1.mass),
                Wavefunction(self.chi2[i], self.grid, wp.chi2.mass))

    def state_at(self, t: float) -> tuple[Wavefunction, Wavefunction]:
        """Both wavefunctions at time ``t`` (rounded to the nearest time step).

        Off-snapshot times are reached by stepping from the previous snapshot.
        """
        self.index_of(t)
        i = int(np.searchsorted(self.times, t + 1e-9) - 1)
        i = max(0, min(i, len(self.times) - 1))
        n = int(round((t - self.times[i]) / self.params.dt))
        c1, c2 = self.snapshot(i)
        if n > 0:
            op1, op2 = self._ops
            c1, c2 = op1.evolve(c1, n), op2.evolve(c2, n)
        return c1, c2

    def potentials_on_grid(self) -> tuple[np.ndarray, np.ndarray]:
        return self.wavepacket.potentials.on_grid(self.grid)


def _edge_fraction(psi: np.ndarray, grid: SpatialGrid, left: bool, right: bool) -> float:
    rho = np.abs(psi) ** 2
    total = rho.sum()
    if total == 0:
        return 0.0
    w = max(1, grid.N // 50)
    frac = 0.0
    if left:
        frac = max(frac, rho[:w].sum() / total)
    if right:
        frac = max(frac, rho[-w:].sum() / total)
    return float(frac)


def propagate_pair(wp: TwoStateWavepacket, params: PropagationParams) -> Trajectory:
    """Evolve both packets independently on their own potentials."""
    grid = wp.grid
    mask = None
    if params.absorber_strength > 0:
        mask = absorber_mask(grid, params.absorber_strength, params.absorber_start_R)
    v1, v2 = wp.potentials.on_grid(grid)
    op1 = SplitOperator(grid, v1, wp.chi1.mass, params.dt, mask)
    op2 = SplitOperator(grid, v2, wp.chi2.mass, params.dt, mask)
    n = params.n_snapshots
    k = params.steps_per_snapshot
    times = params.snapshot_interval * np.arange(n)
    out1 = np.empty((n, grid.N), dtype=complex)
    out2 = np.empty((n, grid.N), dtype=complex)
    c1, c2 = wp.chi1, wp.chi2
    out1[0], out2[0] = c1.psi, c2.psi
    for i in range(1, n):
        c1, c2 = op1.evolve(c1, k), op2.evolve(c2, k)
        for label, c in (("1", c1), ("2", c2)):
            frac = _edge_fraction(c.psi, grid, left=True, right=mask is None)
            if frac > params.edge_tolerance:
                raise PropagationEdgeError(
                    f"state {label} reached the grid edge at t={times[i]:.1f} a.u. "
                    f"(edge density fraction {frac:.2e}); enlarge the grid or enable the absorber")
        out1[i], out2[i] = c1.psi, c2.psi
    for a in (times, out1, out2):
        a.setflags(write=False)
    return Trajectory(wp, params, times, out1, out2, (op1, op2))
