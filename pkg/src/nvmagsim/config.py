"""Run configuration: YAML (or JSON) with unit-suffixed keys, validated by pydantic."""
from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .constants import F_PRO_100, GAMMA_E, NvConstants, P1Constants
from .detector import DetectorParams, NoiseConfig
from .errors import ConfigError
from .sequence import (
    ConstantField,
    EnsembleResponse,
    FieldEnvironment,
    SequenceSpec,
    SinusoidField,
    SquareField,
    build_sequence,
)
from .spin import BiasField

SCHEMA_VERSION = 1


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SpinSection(_Section):
    d_hz: float = 2.870e9
    dd_dt_hz_per_k: float = -74e3
    gamma_e_rad_per_s_per_tesla: float = GAMMA_E
    a_par_15n_hz: float = 3.0e6
    p1_a_par_hz: float = -159.7e6
    p1_a_perp_hz: float = -113.83e6
    p1_g_hz_per_tesla: float = 2.8e10
    delta_t_k: float = 0.0
    linewidths_hz: list[float] = Field(default_factory=lambda: [34e3, 46e3])


class BiasSection(_Section):
    vector_tesla: tuple[float, float, float] = (2.23e-4, 0.0, 0.0)
    p1_drive_axis: tuple[float, float, float] = (0.0, 1.0, 0.0)


class SequenceSection(_Section):
    kind: Literal["pulsed_odmr", "ramsey_fid", "ramsey", "hahn_echo", "hahn_sweep", "contrast"]
    basis: Literal["sq", "dq"] = "dq"
    t_init_s: float
    tau_s: float
    t_readout_s: float
    t_dead_s: float
    f_rep_hz: Optional[float] = None
    omega_m_rad_per_s: float = 0.0
    detunings_hz: list[float] = Field(default_factory=list)
    p1_drive_s: Optional[float] = None
    subtraction: Literal["none", "two_state", "four_state", "hahn_pm"] = "none"
    base_phase_rad: float = 0.0
    mw_tones_hz: list[float] = Field(default_factory=list)


class EnsembleSection(_Section):
    contrast: float = 0.0334
    kappa_init: float = 0.980
    decay_time_s: float
    stretch: float = 1.0
    s_mean: float = 1.0


class DetectorSection(_Section):
    i_sig_a: float = 4.8e-3
    i_ref_a: float = 82.9e-3
    c_sig_f: float = 6.6e-9
    c_ref_f: float = 114e-9
    gain: float = 7.69
    sigma_dig_v: float = 23e-6
    balance_tol: float = 0.05


class NoiseSection(_Section):
    signal_shot: bool = True
    reference_shot: bool = True
    digitizer: bool = True
    rin_rms: float = 0.0
    mw_phase_white_rad: float = 0.0
    mw_phase_flicker_rad: float = 0.0
    sq_residual: float = 0.0


class TestFieldSection(_Section):
    """``amplitude_tesla`` is rms for sinusoids and the level for constant/square fields.

    Alternatively give ``drive_v`` (rms for sinusoids) and ``kappa_tesla_per_v``.
    """

    __test__ = False

    kind: Literal["none", "constant", "sinusoid", "square"] = "none"
    amplitude_tesla: Optional[float] = None
    drive_v: Optional[float] = None
    kappa_tesla_per_v: Optional[float] = None
    frequency_hz: float = 0.0
    phase_rad: float = 0.0

    @model_validator(mode="after")
    def _one_amplitude(self):
        if self.kind == "none":
            return self
        direct = self.amplitude_tesla is not None
        driven = self.drive_v is not None
        if direct == driven:
            raise ValueError("give exactly one of amplitude_tesla or drive_v")
        if driven and self.kappa_tesla_per_v is None:
            raise ValueError("drive_v requires kappa_tesla_per_v")
        if self.kind == "sinusoid" and self.frequency_hz <= 0:
            raise ValueError("sinusoidal test field needs frequency_hz > 0")
        return self

    @property
    def level(self) -> float:
        if self.kind == "none":
            return 0.0
        if self.amplitude_tesla is not None:
            return self.amplitude_tesla
        return self.drive_v * self.kappa_tesla_per_v


class EnvironmentSection(_Section):
    gradient_tesla: float = 0.0
    f_pro: float = F_PRO_100


class RunSection(_Section):
    duration_s: float = 1.0
    acquisitions: int = Field(1, ge=1)


class AnalysisSection(_Section):
    band_hz: Union[Literal["top10", "full"], tuple[float, float]] = "top10"
    notches_hz: list[float] = Field(default_factory=list)
    notch_width_hz: float = 1.0
    test_bin_hz: Optional[float] = None
    single_acq: bool = False


class SweepSection(_Section):
    tau_start_s: float = 0.0
    tau_stop_s: float
    n_points: int
    shots_per_point: int = Field(100, ge=1)

    @field_validator("n_points")
    @classmethod
    def _fittable(cls, v):
        if v < 6:
            raise ValueError("sweep needs at least 6 points to be fitted")
        return v

    @model_validator(mode="after")
    def _ordered(self):
        if not 0 <= self.tau_start_s < self.tau_stop_s:
            raise ValueError("need 0 <= tau_start_s < tau_stop_s")
        return self


class ProtocolTiming(_Section):
    tau_s: float
    t_overhead_s: float
    envelope_contrast: Optional[float] = None
    decay_time_s: Optional[float] = None


class BudgetSection(_Section):
    n_photons: float = 3.0e11
    n_avg: Optional[float] = None
    n_nv: Optional[float] = None
    contrast: float = 0.0334
    ramsey: ProtocolTiming = ProtocolTiming(tau_s=40e-6, t_overhead_s=51e-6, envelope_contrast=0.0082)
    hahn: ProtocolTiming = ProtocolTiming(tau_s=100e-6, t_overhead_s=56e-6, envelope_contrast=0.0125)
    t2star_sq_s: float = 8.7e-6
    t2star_dq_s: float = 14.0e-6
    t2star_dq_p1_s: float = 28.6e-6
    t2_dq_s: float = 136e-6
    t2_dq_p1_s: float = 324e-6
    ramsey_overhead_s: float = 51e-6
    hahn_overhead_s: float = 56e-6
    gradient_decay_time_s: float = 30e-6
    contrast_signals: Optional[tuple[float, float, float, float]] = (0.99871, 0.99993, 1.0, 0.93416)


class CoilSection(_Section):
    radius_m: float
    turns: int
    distance_m: float
    attenuation_db: float = 20.0
    series_resistance_ohm: float = 50.0


class ReferenceSection(_Section):
    field_tesla: float
    drive_v: float
    distance_m: float


class FringeSection(_Section):
    tau_s: float
    delta_ms: Literal[1, 2] = 2
    period_v: Optional[float] = None
    omega_per_v: Optional[float] = None

    @model_validator(mode="after")
    def _one(self):
        if (self.period_v is None) == (self.omega_per_v is None):
            raise ValueError("give exactly one of period_v or omega_per_v")
        return self

    @property
    def period(self) -> float:
        return self.period_v if self.period_v is not None else 2 * np.pi / self.omega_per_v


class ScanSection(_Section):
    kappa_tesla_per_v: float
    drive_start_v: float = 0.0
    drive_stop_v: float
    n_points: int = Field(41, ge=5)
    shots_per_point: int = Field(200, ge=1)


class CalibrationSection(_Section):
    methods: list[Literal["coil", "reference", "ramsey_fringe", "hahn_fit", "scan"]] = Field(
        default_factory=lambda: ["coil", "reference", "ramsey_fringe", "hahn_fit"]
    )
    coil: Optional[CoilSection] = None
    reference: Optional[ReferenceSection] = None
    ramsey_fringe: Optional[FringeSection] = None
    hahn_fit: Optional[FringeSection] = None
    scan: Optional[ScanSection] = None


class RunConfig(_Section):
    schema_version: int
    seed: int = 0
    spin: SpinSection = SpinSection()
    bias: BiasSection = BiasSection()
    sequence: Optional[SequenceSection] = None
    ensemble: Optional[EnsembleSection] = None
    detector: DetectorSection = DetectorSection()
    noise: NoiseSection = NoiseSection()
    test_field: TestFieldSection = TestFieldSection()
    environment: EnvironmentSection = EnvironmentSection()
    run: RunSection = RunSection()
    analysis: AnalysisSection = AnalysisSection()
    sweep: Optional[SweepSection] = None
    budget: BudgetSection = BudgetSection()
    calibration: Optional[CalibrationSection] = None

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}; expected {SCHEMA_VERSION}")
        return v

    # -- domain objects -----------------------------------------------------

    def nv_constants(self) -> NvConstants:
        s = self.spin
        return NvConstants(s.d_hz, s.dd_dt_hz_per_k, s.gamma_e_rad_per_s_per_tesla, s.a_par_15n_hz)

    def p1_constants(self) -> P1Constants:
        s = self.spin
        return P1Constants(s.p1_a_par_hz, s.p1_a_perp_hz, s.p1_g_hz_per_tesla)

    def bias_field(self) -> BiasField:
        return BiasField(self.bias.vector_tesla)

    def sequence_spec(self) -> SequenceSpec:
        s = self.require("sequence")
        return build_sequence(
            s.kind,
            s.basis,
            s.t_init_s,
            s.tau_s,
            s.t_readout_s,
            s.t_dead_s,
            s.f_rep_hz,
            omega_m=s.omega_m_rad_per_s,
            detunings=s.detunings_hz,
            p1_drive=s.p1_drive_s,
            subtraction=s.subtraction,
            base_phase=s.base_phase_rad,
        )

    def response(self) -> EnsembleResponse:
        e = self.require("ensemble")
        return EnsembleResponse(e.contrast, e.decay_time_s, e.stretch, e.kappa_init, e.s_mean)

    def detector_params(self) -> DetectorParams:
        d = self.detector
        return DetectorParams(
            d.i_sig_a, d.i_ref_a, d.c_sig_f, d.c_ref_f, d.gain, d.sigma_dig_v, balance_tol=d.balance_tol
        )

    def noise_config(self) -> NoiseConfig:
        n = self.noise
        return NoiseConfig(
            n.signal_shot,
            n.reference_shot,
            n.digitizer,
            n.rin_rms,
            n.mw_phase_white_rad,
            n.mw_phase_flicker_rad,
            n.sq_residual,
        )

    def waveform(self):
        t = self.test_field
        if t.kind == "none":
            return ConstantField(0.0)
        if t.kind == "constant":
            return ConstantField(t.level)
        if t.kind == "square":
            return SquareField(t.level)
        return SinusoidField.from_rms(t.level, t.frequency_hz, t.phase_rad)

    def environment_model(self) -> FieldEnvironment:
        return FieldEnvironment(
            self.bias_field(), self.waveform(), self.environment.gradient_tesla, self.environment.f_pro
        )

    def require(self, section: str):
        value = getattr(self, section)
        if value is None:
            raise ConfigError(f"config section '{section}' is required for this command", key=section)
        return value


# ---------------------------------------------------------------- loading


class _LineLoader(yaml.SafeLoader):
    pass


def _positions(node, path=()) -> dict:
    out = {path: node.start_mark.line + 1}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            for sub, line in _positions(v, path + (key,)).items():
                out.setdefault(sub, line)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out.update(_positions(v, path + (i,)))
    return out


def _line_for(loc: tuple, positions: dict) -> int | None:
    loc = tuple(x for x in loc if not (isinstance(x, str) and x in ("function-after",)))
    for n in range(len(loc), -1, -1):
        if loc[:n] in positions:
            return positions[loc[:n]]
    return None


def git_blob_hash(data: bytes) -> str:
    """Content hash in git's blob format."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def load_config_text(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text, Loader=_LineLoader)
        raw = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{source}: cannot parse: {exc}", line=mark.line + 1 if mark else None) from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping", line=1)
    positions = _positions(node) if node is not None else {}
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        # Misspelled unit keys usually also cause a "missing" error; report the typo.
        errs = sorted(exc.errors(), key=lambda e: e["type"] != "extra_forbidden")
        err = errs[0]
        loc = tuple(err["loc"])
        key = ".".join(str(x) for x in loc) or "<root>"
        line = _line_for(loc, positions)
        more = f" (+{len(errs) - 1} more)" if len(errs) > 1 else ""
        raise ConfigError(f"{source}: {key}: {err['msg']}{more}", key=key, line=line) from None


def load_config(path) -> tuple[RunConfig, str]:
    """Parse a config file; returns the model and its content hash."""
    p = Path(path)
    data = p.read_bytes()
    return load_config_text(data.decode("utf-8"), str(p)), git_blob_hash(data)
