"""Physical constants (CODATA values from :mod:`scipy.constants`) and unit helpers."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from scipy import constants as _sc

GAUSS = 1e-4  # tesla per gauss
US = 1e-6  # seconds per microsecond

RB85_MASS_U = 84.911789738
RB85_NUCLEAR_SPIN = 2.5
RB_D1_WAVELENGTH = 794.979e-9
G_J_5S12 = 2.00233113


@dataclass(frozen=True)
class PhysicalConstants:
    mu_B: float = _sc.physical_constants["Bohr magneton"][0]
    hbar: float = _sc.hbar
    mu_0: float = _sc.physical_constants["vacuum mag. permeability"][0]
    k_B: float = _sc.k
    m_atom: float = RB85_MASS_U * _sc.physical_constants["atomic mass constant"][0]
    lambda_signal: float = RB_D1_WAVELENGTH

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"constant {name} must be positive, got {value}")

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


CONSTANTS = PhysicalConstants()
