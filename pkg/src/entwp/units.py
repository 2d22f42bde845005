"""Unit conversions between atomic units and lab units.

All internal computation is done in atomic units (hartree, bohr, atomic
time, electron mass, hbar = 1). Lab-facing values (eV, angstrom, fs, u,
cm^-1, PHz) are converted at the boundaries with the helpers below.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import constants as _c


@dataclass(frozen=True)
class UnitSystem:
    """CODATA conversion factors (lab unit per atomic unit)."""

    hartree_ev: float = _c.physical_constants["Hartree energy in eV"][0]
    bohr_angstrom: float = _c.physical_constants["Bohr radius"][0] * 1e10
    au_time_fs: float = _c.physical_constants["atomic unit of time"][0] * 1e15
    u_electron_mass: float = (
        _c.physical_constants["atomic mass constant"][0] / _c.m_e
    )
    # hc in eV*cm, for wavenumber <-> energy
    hc_ev_cm: float = _c.h * _c.c / _c.e * 100.0
    speed_of_light_cm_fs: float = _c.c * 100.0 * 1e-15

    def ev_to_hartree(self, x):
        return x / self.hartree_ev

    def hartree_to_ev(self, x):
        return x * self.hartree_ev

    def angstrom_to_bohr(self, x):
        return x / self.bohr_angstrom

    def bohr_to_angstrom(self, x):
        return x * self.bohr_angstrom

    def fs_to_au(self, x):
        return x / self.au_time_fs

    def au_to_fs(self, x):
        return x * self.au_time_fs

    def u_to_me(self, x):
        return x * self.u_electron_mass

    def me_to_u(self, x):
        return x / self.u_electron_mass

    def wavenumber_to_hartree(self, x):
        return self.ev_to_hartree(x * self.hc_ev_cm)

    def hartree_to_wavenumber(self, x):
        return self.hartree_to_ev(x) / self.hc_ev_cm

    def wavenumber_to_period_fs(self, x):
        """Vibrational period (fs) of a mode given in cm^-1."""
        return 1.0 / (x * self.speed_of_light_cm_fs)

    def hartree_to_angular_fs(self, x):
        """Energy (hartree) as an angular frequency in rad/fs."""
        return x / self.au_time_fs

    def phz_to_au_angular(self, nu):
        """Frequency in PHz (cycles/fs) to angular frequency in atomic units."""
        return 2.0 * math.pi * nu * self.au_time_fs


UNITS = UnitSystem()

# Ti:sapphire nominal centre wavelength and the matching photon energy.
CARRIER_WAVELENGTH_NM = 800.0
PHOTON_ENERGY_EV = _c.h * _c.c / (CARRIER_WAVELENGTH_NM * 1e-9) / _c.e
CARRIER_FREQUENCY_PHZ = _c.c / (CARRIER_WAVELENGTH_NM * 1e-9) * 1e-15

# Ground-state B3LYP modes of 1,1,1-trifluoroacetone near the observed
# covariance-yield modulation: (assignment, wavenumber cm^-1, period fs).
VIBRATIONAL_MODES = (
    ("CH3 symmetric rock", 962.0, 35.0),
    ("CH3 antisymmetric rock", 1027.0, 32.0),
    ("CF3 symmetric stretch", 1131.0, 29.0),
    ("CF3 antisymmetric stretch", 1189.0, 28.0),
)
OBSERVED_MODULATION_PERIOD_FS = 33.0
OBSERVED_MODULATION_UNCERTAINTY_FS = 5.0

# Fragment masses in u (sums of standard atomic weights, rounded).
MASS_CF3_U = 69.0
MASS_COCH3_U = 43.0
MASS_CF2_U = 50.0


def reduced_mass_u(m_a: float, m_b: float) -> float:
    return m_a * m_b / (m_a + m_b)


DEFAULT_REDUCED_MASS_ME = UNITS.u_to_me(reduced_mass_u(MASS_CF3_U, MASS_COCH3_U))
