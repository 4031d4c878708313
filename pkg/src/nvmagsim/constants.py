"""Physical constants and default NV / P1 parameter sets.

All quantities are SI: Hz for frequencies, T for fields, s for times.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import constants as _sc

TWO_PI = 2.0 * np.pi

# Electron gyromagnetic ratio as 2*pi*28.0 GHz/T (2.8 MHz/G), rad s^-1 T^-1.
GAMMA_E = TWO_PI * 28.0e9
MU_0 = _sc.mu_0
Q_E = _sc.e

GAUSS = 1e-4  # T

# F_pro for a field normal to a {100} face projected onto any NV axis.
F_PRO_100 = 1.0 / np.sqrt(3.0)

# Unit vectors of the four NV (and P1 Jahn-Teller) <111> axes in the cube frame.
TETRAHEDRAL_AXES = np.array(
    [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
) / np.sqrt(3.0)


@dataclass(frozen=True)
class NvConstants:
    """NV- ground-state parameters for the 15NV secular model."""

    D: float = 2.870e9
    dD_dT: float = -74e3
    gamma_e: float = GAMMA_E
    A_par_15N: float = 3.0e6

    def __post_init__(self):
        vals = (self.D, self.dD_dT, self.gamma_e, self.A_par_15N)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("NV constants must be finite")
        if self.D <= 0 or self.gamma_e <= 0:
            raise ValueError("D and gamma_e must be positive")

    @property
    def gamma_e_hz(self) -> float:
        """Gyromagnetic ratio in Hz/T."""
        return self.gamma_e / TWO_PI


@dataclass(frozen=True)
class P1Constants:
    """Substitutional 15N (P1) spin Hamiltonian parameters, isotropic g."""

    A_par: float = -159.7e6
    A_perp: float = -113.83e6
    g_factor_over_h: float = 2.8e10  # Hz/T
    jt_axes: np.ndarray = field(default_factory=lambda: TETRAHEDRAL_AXES.copy())

    def __post_init__(self):
        axes = np.asarray(self.jt_axes, dtype=float)
        if axes.shape != (4, 3):
            raise ValueError("exactly four Jahn-Teller axes are required")
        if not np.allclose(np.linalg.norm(axes, axis=1), 1.0, atol=1e-12):
            raise ValueError("Jahn-Teller axes must be unit vectors")
        if self.A_par == 0 or self.A_perp == 0:
            raise ValueError("hyperfine couplings must be nonzero")
        object.__setattr__(self, "jt_axes", axes)
