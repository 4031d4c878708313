"""Closed-form sensitivity limits and figures of merit.

Sensitivities are in T s^1/2 using the rms-field, double-sided-bin convention
(eta = sigma_B sqrt(T_sample)); a single-sided convention differs by sqrt(2).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .constants import F_PRO_100, GAMMA_E
from .errors import NumericalError

SATURATION_TOL = 1e-3


@dataclass(frozen=True)
class BudgetInputs:
    delta_ms: int
    contrast: float
    T: float  # T2* (Ramsey) or T2 (Hahn), s
    tau: float
    t_init: float
    t_readout: float
    t_dead: float
    p: float = 1.0
    n_photons: float | None = None  # per measurement
    n_avg: float | None = None  # photons per NV
    n_nv: float | None = None
    f_pro: float = F_PRO_100
    envelope_contrast: float | None = None  # measured C exp(-(tau/T)^p), overrides the model
    gamma_e: float = GAMMA_E

    def __post_init__(self):
        if self.delta_ms not in (1, 2):
            raise ValueError("delta_ms must be 1 or 2")
        for name in ("tau", "t_init", "t_readout", "t_dead"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 < self.f_pro <= 1:
            raise ValueError("f_pro must lie in (0, 1]")
        if self.T <= 0 or self.p <= 0:
            raise ValueError("T and p must be positive")
        if self.n_nv is not None and self.n_avg is not None:
            product = self.n_nv * self.n_avg
            if self.n_photons is None:
                object.__setattr__(self, "n_photons", product)
            elif not np.isclose(self.n_photons, product, rtol=1e-9):
                raise ValueError("n_photons must equal n_nv * n_avg")

    @property
    def t_total(self) -> float:
        return self.t_init + self.tau + self.t_readout + self.t_dead

    @property
    def t_overhead(self) -> float:
        return self.t_init + self.t_readout + self.t_dead

    @property
    def effective_contrast(self) -> float:
        if self.envelope_contrast is not None:
            return self.envelope_contrast
        return self.contrast * float(np.exp(-((self.tau / self.T) ** self.p)))


def _prefactor(inp: BudgetInputs) -> float:
    return 1.0 / (inp.delta_ms * inp.gamma_e * inp.f_pro)


def ramsey_sensitivity_full(inp: BudgetInputs) -> float:
    """Spin-projection x dephasing x readout x overhead decomposition."""
    if inp.n_nv is None or inp.n_avg is None:
        raise ValueError("full budget needs n_nv and n_avg")
    if inp.tau <= 0:
        return float("inf")
    spin = 1.0 / np.sqrt(inp.n_nv * inp.tau)
    dephasing = np.exp((inp.tau / inp.T) ** inp.p)
    readout = np.sqrt(1.0 + 1.0 / (inp.contrast**2 * inp.n_avg))
    overhead = np.sqrt(inp.t_total / inp.tau)
    return float(_prefactor(inp) * spin * dephasing * readout * overhead)


def spin_projection_limit(inp: BudgetInputs) -> float:
    """Full budget with perfect readout (readout factor 1)."""
    if inp.n_nv is None:
        raise ValueError("spin-projection limit needs n_nv")
    if inp.tau <= 0:
        return float("inf")
    return float(
        _prefactor(inp)
        / np.sqrt(inp.n_nv * inp.tau)
        * np.exp((inp.tau / inp.T) ** inp.p)
        * np.sqrt(inp.t_total / inp.tau)
    )


def _shot_limited(inp: BudgetInputs) -> float:
    if inp.n_photons is None or inp.n_photons <= 0:
        raise ValueError("photon number must be positive")
    if inp.tau <= 0:
        return float("inf")
    c_eff = inp.effective_contrast
    if c_eff <= 0:
        return float("inf")
    return float(_prefactor(inp) / (c_eff * np.sqrt(inp.n_photons)) * np.sqrt(inp.t_total) / inp.tau)


def ramsey_sensitivity_shot(inp: BudgetInputs) -> float:
    """Photon-shot-noise-limited Ramsey sensitivity."""
    return _shot_limited(inp)


def hahn_sensitivity_shot(inp: BudgetInputs) -> float:
    """Shot-limited Hahn-echo sensitivity to a telegraph field switching at the echo.

    Same algebra as the Ramsey form with T taken as T2.
    """
    return _shot_limited(inp)


def readout_fidelity(contrast: float, n_avg: float) -> tuple[float, float]:
    """(F, sigma_R = 1/F) for contrast C and photons per NV n_avg."""
    if contrast <= 0 or n_avg <= 0:
        raise ValueError("contrast and n_avg must be positive")
    f = 1.0 / np.sqrt(1.0 + 1.0 / (contrast**2 * n_avg))
    return float(f), float(1.0 / f)


@dataclass(frozen=True)
class ContrastResult:
    contrast: float
    kappa_init: float
    saturated: bool


def contrast_and_init(s1: float, s2: float, s3: float, s4: float, tol: float = SATURATION_TOL) -> ContrastResult:
    """C = (S1-S4)/(S1+S4) and kappa_I = (S1-S4)/(S3-S4).

    ``saturated`` is False when S2 and S3 differ by more than ``tol`` (relative),
    meaning initialization had not converged by the third sequence.
    """
    if s3 <= s4:
        raise ValueError("S3 must exceed S4")
    if s1 + s4 == 0:
        raise ValueError("S1 + S4 must be nonzero")
    c = (s1 - s4) / (s1 + s4)
    k = (s1 - s4) / (s3 - s4)
    return ContrastResult(float(c), float(k), abs(s3 - s2) <= tol * abs(s3))


def tau_factor(tau, T: float, t_o: float, p: float = 1.0, delta_ms: int = 1):
    """(1/dm) exp((tau/T)^p) sqrt(tau + t_O) / tau; proportional to the shot-limited eta."""
    tau = np.asarray(tau, dtype=float)
    return np.exp((tau / T) ** p) * np.sqrt(tau + t_o) / tau / delta_ms


def optimal_tau(T: float, t_o: float, p: float = 1.0, delta_ms: int = 1) -> tuple[float, float]:
    """Minimize :func:`tau_factor` over tau in (0, 10 T]; returns (tau*, factor)."""
    if T <= 0 or t_o < 0:
        raise ValueError("T must be positive and t_O nonnegative")
    hi = 10.0 * T
    res = minimize_scalar(
        lambda x: float(tau_factor(x, T, t_o, p, delta_ms)),
        bounds=(1e-9 * T, hi),
        method="bounded",
        options={"xatol": 1e-12 * T, "maxiter": 1000},
    )
    if not res.success or res.x >= hi * (1 - 1e-6) or res.x <= 2e-9 * T:
        raise NumericalError("optimal precession time not bracketed inside (0, 10 T]")
    return float(res.x), float(res.fun)


def improvement_ratio(protocol_a, protocol_b, t_o: float, p: float = 1.0) -> float:
    """eta_a / eta_b with each protocol (delta_ms, T) at its own optimal tau."""
    (dm_a, t_a), (dm_b, t_b) = protocol_a, protocol_b
    _, fa = optimal_tau(t_a, t_o, p, dm_a)
    _, fb = optimal_tau(t_b, t_o, p, dm_b)
    return fa / fb


def gradient_tolerance(T: float, basis: str, gamma_e: float = GAMMA_E) -> float:
    """Bias spread (T) the ensemble should stay well below: 2/(gamma T) SQ, 1/(gamma T) DQ."""
    if T <= 0:
        raise ValueError("T must be positive")
    basis = str(getattr(basis, "value", basis)).lower()
    if basis == "sq":
        return 2.0 / (gamma_e * T)
    if basis == "dq":
        return 1.0 / (gamma_e * T)
    raise ValueError(f"unknown basis {basis!r}")
