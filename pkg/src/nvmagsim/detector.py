"""Integrating balanced photodetector and digitizer noise model."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict

import numpy as np

from .constants import Q_E


@dataclass(frozen=True)
class DetectorParams:
    I_sig: float = 4.8e-3  # A
    I_ref: float = 82.9e-3  # A
    C_sig: float = 6.6e-9  # F
    C_ref: float = 114e-9  # F
    gain: float = 7.69
    sigma_dig: float = 23e-6  # V rms per readout
    q: float = Q_E
    balance_tol: float = 0.05

    def __post_init__(self):
        for name in ("I_sig", "I_ref", "C_sig", "C_ref", "gain", "q"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_dig < 0:
            raise ValueError("sigma_dig must be nonnegative")


@dataclass(frozen=True)
class NoiseConfig:
    """Noise toggles for the simulated readout chain.

    ``rin_rms`` is a common-mode fractional laser intensity fluctuation per
    shot; ``mw_phase_white_rms`` / ``mw_phase_flicker_rms`` add phase noise
    (rad) to each shot; ``sq_residual`` injects single-quantum leakage with
    that fractional amplitude (DQ only).
    """

    signal_shot: bool = True
    reference_shot: bool = True
    digitizer: bool = True
    rin_rms: float = 0.0
    mw_phase_white_rms: float = 0.0
    mw_phase_flicker_rms: float = 0.0
    sq_residual: float = 0.0

    def __post_init__(self):
        for name in ("rin_rms", "mw_phase_white_rms", "mw_phase_flicker_rms", "sq_residual"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"noise parameter {name} must be finite and >= 0")

    @classmethod
    def none(cls) -> "NoiseConfig":
        return cls(signal_shot=False, reference_shot=False, digitizer=False)

    @classmethod
    def shot_only(cls) -> "NoiseConfig":
        return cls(signal_shot=True, reference_shot=False, digitizer=False)

    @property
    def is_silent(self) -> bool:
        return not (
            self.signal_shot
            or self.reference_shot
            or self.digitizer
            or self.rin_rms
            or self.mw_phase_white_rms
            or self.mw_phase_flicker_rms
        )


def photoelectron_count(current: float, t_r: float, q: float = Q_E) -> float:
    if current < 0:
        raise ValueError("photocurrent must be nonnegative")
    if t_r <= 0:
        raise ValueError("readout time must be positive")
    return current * t_r / q


def integrated_voltage(current: float, t_r: float, capacitance: float) -> float:
    if capacitance <= 0:
        raise ValueError("capacitance must be positive")
    if current < 0:
        raise ValueError("photocurrent must be nonnegative")
    return current * t_r / capacitance


def shot_sigma(current: float, t_r: float, capacitance: float, q: float = Q_E) -> float:
    """Integrated shot-noise voltage, sqrt(q I t_R) / C."""
    if capacitance <= 0:
        raise ValueError("capacitance must be positive")
    if current < 0:
        raise ValueError("photocurrent must be nonnegative")
    return float(np.sqrt(q * current * t_r) / capacitance)


def check_balance(params: DetectorParams, t_r: float) -> float:
    """Fractional mismatch |V_sig - V_ref| / V_sig; warns beyond tolerance."""
    v_sig = integrated_voltage(params.I_sig, t_r, params.C_sig)
    v_ref = integrated_voltage(params.I_ref, t_r, params.C_ref)
    mismatch = abs(v_sig - v_ref) / v_sig
    if mismatch > params.balance_tol:
        warnings.warn(f"photodetector arms unbalanced by {mismatch:.1%}", stacklevel=2)
    return mismatch


def balance_factor(params: DetectorParams) -> float:
    """Noise penalty of subtracting the reference arm (exact form)."""
    return float(
        np.sqrt(1 + params.I_ref * params.C_sig**2 / (params.I_sig * params.C_ref**2))
    )


@dataclass(frozen=True)
class ReadoutBudget:
    n_sig: float
    n_ref: float
    v_sig: float
    v_ref: float
    sigma_sig: float
    sigma_ref: float
    kappa_bal: float
    sigma_tot: float
    inflation: float  # sigma_tot / (G sigma_sig kappa_bal)
    var_signal_shot: float
    var_reference_shot: float
    var_digitizer: float

    def to_dict(self) -> dict:
        return asdict(self)


def readout_budget(params: DetectorParams, t_r: float) -> ReadoutBudget:
    check_balance(params, t_r)
    s_sig = shot_sigma(params.I_sig, t_r, params.C_sig, params.q)
    s_ref = shot_sigma(params.I_ref, t_r, params.C_ref, params.q)
    k_bal = balance_factor(params)
    g = params.gain
    var_sig = (g * s_sig) ** 2
    var_ref = var_sig * (k_bal**2 - 1)
    var_dig = params.sigma_dig**2
    total = np.sqrt(var_sig + var_ref + var_dig)
    return ReadoutBudget(
        n_sig=photoelectron_count(params.I_sig, t_r, params.q),
        n_ref=photoelectron_count(params.I_ref, t_r, params.q),
        v_sig=integrated_voltage(params.I_sig, t_r, params.C_sig),
        v_ref=integrated_voltage(params.I_ref, t_r, params.C_ref),
        sigma_sig=s_sig,
        sigma_ref=s_ref,
        kappa_bal=k_bal,
        sigma_tot=float(total),
        inflation=float(total / (g * s_sig * k_bal)),
        var_signal_shot=var_sig,
        var_reference_shot=var_ref,
        var_digitizer=var_dig,
    )


def total_readout_sigma(params: DetectorParams, t_r: float) -> float:
    """sqrt(G^2 sigma_sig^2 kappa_bal^2 + sigma_dig^2), V rms per readout."""
    return readout_budget(params, t_r).sigma_tot


def sample_readout(
    signal,
    params: DetectorParams,
    t_r: float,
    rng: np.random.Generator | None = None,
    noise: NoiseConfig = NoiseConfig(),
    rin=None,
) -> np.ndarray:
    """Digitized balanced-detector output for normalized fluorescence ``signal``.

    Mean is G (V_sig s - V_ref). The signal-arm shot variance scales with s.
    ``rin`` optionally supplies the common-mode intensity factor per shot.
    """
    s = np.asarray(signal, dtype=float)
    if np.any(s < 0):
        raise ValueError("normalized signal must be nonnegative")
    v_sig = integrated_voltage(params.I_sig, t_r, params.C_sig)
    v_ref = integrated_voltage(params.I_ref, t_r, params.C_ref)
    common = 1.0 if rin is None else np.asarray(rin, dtype=float)
    out = params.gain * (v_sig * s - v_ref) * common
    if rng is None:
        return np.asarray(out, dtype=float)

    shape = s.shape
    if noise.signal_shot:
        s_sig = shot_sigma(params.I_sig, t_r, params.C_sig, params.q)
        out = out + params.gain * s_sig * np.sqrt(s) * rng.standard_normal(shape)
    if noise.reference_shot:
        s_ref = shot_sigma(params.I_ref, t_r, params.C_ref, params.q)
        out = out + params.gain * s_ref * rng.standard_normal(shape)
    if noise.digitizer:
        out = out + params.sigma_dig * rng.standard_normal(shape)
    return np.asarray(out, dtype=float)
