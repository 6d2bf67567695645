"""Physical conversion constants (CODATA values from ``scipy.constants``)."""

from dataclasses import dataclass

from scipy import constants as sc

_pc = sc.physical_constants


@dataclass(frozen=True)
class UnitsRegistry:
    """Conversion factors between atomic units and laboratory units.

    Every value is read from ``scipy.constants.physical_constants`` (CODATA
    2018 in current SciPy releases); the key is given next to each field.
    """
    # 'hartree-electron volt relationship'
    hartree_to_eV: float = _pc['hartree-electron volt relationship'][0]
    # 'atomic unit of time', s -> fs
    au_time_to_fs: float = _pc['atomic unit of time'][0] * 1e15
    # 'hartree-inverse meter relationship', m^-1 -> cm^-1
    hartree_to_cm1: float = _pc['hartree-inverse meter relationship'][0] / 100.0
    # 'atomic unit of electric field'
    au_field_to_V_per_m: float = _pc['atomic unit of electric field'][0]
    # 'Planck constant in eV/Hz'
    planck_eV_s: float = _pc['Planck constant in eV/Hz'][0]
    # cycle-averaged intensity of a field of 1 a.u. amplitude, W/cm^2
    au_intensity_W_cm2: float = (0.5 * sc.c * sc.epsilon_0
                                 * _pc['atomic unit of electric field'][0] ** 2 / 1e4)

    @property
    def au_time_to_ps(self):
        return self.au_time_to_fs / 1000.0


UNITS = UnitsRegistry()


def ev_to_hartree(value):
    return value / UNITS.hartree_to_eV


def hartree_to_ev(value):
    return value * UNITS.hartree_to_eV


def ps_to_au(value):
    return value / UNITS.au_time_to_ps


def au_to_ps(value):
    return value * UNITS.au_time_to_ps


def cm1_to_hartree(value):
    return value / UNITS.hartree_to_cm1


def hartree_to_cm1(value):
    return value * UNITS.hartree_to_cm1


def tunneling_time_ps(splitting_ev):
    """Tunneling period h / dE in picoseconds."""
    return UNITS.planck_eV_s / splitting_ev * 1e12


def peak_field_au(intensity_w_cm2):
    """Peak field amplitude (a.u.) of a linearly polarized pulse of given intensity."""
    return (intensity_w_cm2 / UNITS.au_intensity_W_cm2) ** 0.5


# The 1e14 W/cm^2 ionization bound with dipole elements of order 0.1 a.u.
MAX_INTENSITY_W_CM2 = 1e14
MAX_DIPOLE_AU = 0.1
MAX_RABI_AU = MAX_DIPOLE_AU * peak_field_au(MAX_INTENSITY_W_CM2)
