"""Pulse sequences, phase schedules, interferometer phase and shot simulation.

Pulses are ideal instantaneous rotations. The per-shot fluorescence model is
``s = S_mean (1 + C_eff cos(phi))`` with ``C_eff = C exp(-(tau/T)^p)``, bright
at ``phi = 0``.
"""
from __future__ import annotations

import csv
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .constants import F_PRO_100, GAMMA_E, TWO_PI
from .detector import DetectorParams, NoiseConfig, integrated_voltage, sample_readout
from .spin import BiasField

TIMING_TOL = 1e-9  # s
BLOCK_SHOTS = 1 << 16


class SequenceKind(str, Enum):
    PULSED_ODMR = "pulsed_odmr"
    RAMSEY_FID = "ramsey_fid"
    RAMSEY = "ramsey"
    HAHN_ECHO = "hahn_echo"
    HAHN_SWEEP = "hahn_sweep"
    CONTRAST = "contrast"

    @property
    def is_echo(self) -> bool:
        return self in (SequenceKind.HAHN_ECHO, SequenceKind.HAHN_SWEEP)

    @property
    def is_interferometric(self) -> bool:
        return self not in (SequenceKind.PULSED_ODMR, SequenceKind.CONTRAST)


class Basis(str, Enum):
    SQ = "sq"
    DQ = "dq"

    @property
    def delta_ms(self) -> int:
        return 1 if self is Basis.SQ else 2


class Subtraction(str, Enum):
    NONE = "none"
    TWO_STATE = "two_state"
    FOUR_STATE = "four_state"
    HAHN_PM = "hahn_pm"


@dataclass(frozen=True)
class PhaseSchedule:
    """Final-pulse phases per repetition and the weights that combine them.

    ``tone_phases[k]`` holds (upper, lower) tone phases in [0, 2pi).
    """

    period: int
    tone_phases: tuple[tuple[float, float], ...]
    weights: tuple[float, ...]

    def fringe_offsets(self, basis: Basis) -> np.ndarray:
        ph = np.array(self.tone_phases)
        if basis is Basis.DQ:
            return ph[:, 0] - ph[:, 1]
        return ph[:, 0]


def _wrap(x: float) -> float:
    return float(np.mod(x, TWO_PI))


def phase_schedule(subtraction, base_phase: float = 0.0) -> PhaseSchedule:
    sub = Subtraction(subtraction)
    phi = base_phase
    if sub is Subtraction.NONE:
        pairs, weights = [(phi, 0.0)], [1.0]
    elif sub is Subtraction.TWO_STATE:
        pairs, weights = [(phi, 0.0), (phi - np.pi, 0.0)], [1.0, -1.0]
    elif sub is Subtraction.FOUR_STATE:
        # A pi on one tone inverts the DQ fringe, pi on both restores it; each
        # single-tone term appears once with each sign and cancels.
        pairs = [(phi, 0.0), (phi + np.pi, 0.0), (phi, np.pi), (phi + np.pi, np.pi)]
        weights = [1.0, -1.0, -1.0, 1.0]
    else:
        q = np.pi / 4
        pairs, weights = [(q, -q), (-q, q)], [1.0, -1.0]
    return PhaseSchedule(
        period=len(weights),
        tone_phases=tuple((_wrap(a), _wrap(b)) for a, b in pairs),
        weights=tuple(weights),
    )


@dataclass(frozen=True)
class SequenceSpec:
    kind: SequenceKind
    basis: Basis
    t_init: float
    tau: float
    t_readout: float
    t_dead: float
    f_rep: float
    omega_m: float = 0.0  # per-tone final-pulse phase rate, rad/s
    detunings: tuple[float, ...] = ()  # Hz, (upper, lower) for DQ
    p1_drive: float | None = None  # drive duration in s, None = off
    subtraction: Subtraction = Subtraction.NONE
    base_phase: float = 0.0

    @property
    def period_s(self) -> float:
        return self.t_init + self.tau + self.t_readout + self.t_dead

    @property
    def t_overhead(self) -> float:
        return self.t_init + self.t_readout + self.t_dead

    @property
    def delta_ms(self) -> int:
        return self.basis.delta_ms

    @property
    def schedule(self) -> PhaseSchedule:
        return phase_schedule(self.subtraction, self.base_phase)

    @property
    def combined_rate(self) -> float:
        return self.f_rep / self.schedule.period

    @property
    def bandwidth(self) -> float:
        """Nyquist frequency of the combined magnetometry output."""
        return self.combined_rate / 2

    @property
    def two_photon_detuning(self) -> float:
        """Effective fringe detuning, rad/s (upper minus lower tone for DQ)."""
        det = tuple(self.detunings) + (0.0, 0.0)
        if self.basis is Basis.DQ:
            return TWO_PI * (det[0] - det[1])
        return TWO_PI * det[0]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "basis": self.basis.value,
            "t_init_s": self.t_init,
            "tau_s": self.tau,
            "t_readout_s": self.t_readout,
            "t_dead_s": self.t_dead,
            "f_rep_hz": self.f_rep,
            "omega_m_rad_per_s": self.omega_m,
            "detunings_hz": list(self.detunings),
            "p1_drive_s": self.p1_drive,
            "subtraction": self.subtraction.value,
            "base_phase_rad": self.base_phase,
        }


def build_sequence(
    kind,
    basis,
    t_init: float,
    tau: float,
    t_readout: float,
    t_dead: float,
    f_rep: float | None = None,
    **options,
) -> SequenceSpec:
    """Validate timings and return a spec with f_rep = 1 / (t_I + tau + t_R + t_D)."""
    kind, basis = SequenceKind(kind), Basis(basis)
    times = dict(t_init=t_init, tau=tau, t_readout=t_readout, t_dead=t_dead)
    for name, t in times.items():
        if not np.isfinite(t) or t < 0:
            raise ValueError(f"{name} must be finite and nonnegative")
    total = t_init + tau + t_readout + t_dead
    if total <= 0:
        raise ValueError("sequence has zero length")
    if f_rep is not None and abs(1.0 / f_rep - total) > TIMING_TOL:
        raise ValueError(
            f"timings sum to {total * 1e6:.4f} us but 1/f_rep = {1e6 / f_rep:.4f} us"
        )
    if kind.is_echo and basis is Basis.SQ:
        raise ValueError("Hahn echo is implemented for the DQ basis only")
    p1 = options.get("p1_drive")
    if p1 is not None and not (0 <= p1 <= total):
        raise ValueError("p1_drive duration must lie within the sequence")
    if "subtraction" in options:
        options["subtraction"] = Subtraction(options["subtraction"])
    if "detunings" in options:
        options["detunings"] = tuple(float(d) for d in options["detunings"])
    return SequenceSpec(kind, basis, t_init, tau, t_readout, t_dead, 1.0 / total, **options)


@dataclass(frozen=True)
class ToneCheck:
    passed: bool
    nearest: tuple[float, ...]
    candidates: tuple[tuple[float, float], ...]  # (floor, ceil) multiples per tone


def validate_tone_frequencies(tones, f_rep: float, rtol: float = 1e-6) -> ToneCheck:
    """Check each MW tone is an integer multiple of the repetition rate."""
    if f_rep <= 0:
        raise ValueError("f_rep must be positive")
    ratio = np.asarray(list(tones), dtype=float) / f_rep
    ok = np.abs(ratio - np.round(ratio)) <= rtol
    nearest = tuple(float(x) for x in np.round(ratio) * f_rep)
    cands = tuple((float(np.floor(r) * f_rep), float(np.ceil(r) * f_rep)) for r in ratio)
    return ToneCheck(bool(np.all(ok)), nearest, cands)


# ---------------------------------------------------------------- test fields


@dataclass(frozen=True)
class ConstantField:
    value: float = 0.0  # T along [100]

    def precession_integrals(self, t_start, tau):
        half = np.broadcast_to(self.value * tau / 2, np.shape(t_start)).astype(float)
        return half, half.copy()


@dataclass(frozen=True)
class SinusoidField:
    """B(t) = amplitude sin(2 pi f t + phase), amplitude in T (peak)."""

    amplitude: float
    frequency: float
    phase: float = 0.0

    @classmethod
    def from_rms(cls, rms: float, frequency: float, phase: float = 0.0) -> "SinusoidField":
        return cls(rms * np.sqrt(2.0), frequency, phase)

    def _integral(self, a, b):
        w = TWO_PI * self.frequency
        if w == 0:
            return self.amplitude * np.sin(self.phase) * (b - a)
        return self.amplitude / w * (np.cos(w * a + self.phase) - np.cos(w * b + self.phase))

    def precession_integrals(self, t_start, tau):
        t0 = np.asarray(t_start, dtype=float)
        mid = t0 + tau / 2
        return self._integral(t0, mid), self._integral(mid, t0 + tau)


@dataclass(frozen=True)
class SquareField:
    """+amplitude before the precession midpoint, -amplitude after it."""

    amplitude: float

    def precession_integrals(self, t_start, tau):
        half = np.broadcast_to(self.amplitude * tau / 2, np.shape(t_start)).astype(float)
        return half, -half


@dataclass(frozen=True)
class FieldEnvironment:
    bias: BiasField = field(default_factory=BiasField.standard)
    test_field: object = field(default_factory=ConstantField)
    gradient: float = 0.0  # T, spread of the bias across the ensemble
    f_pro: float = F_PRO_100


def accumulated_phase(
    waveform,
    spec: SequenceSpec,
    f_pro: float = F_PRO_100,
    t_start=0.0,
    schedule_phase=0.0,
    gamma_e: float = GAMMA_E,
):
    """Interferometer phase (rad) for precession windows starting at ``t_start``."""
    if not spec.kind.is_interferometric:
        raise ValueError(f"{spec.kind.value} sequences accrue no interferometer phase")
    first, second = waveform.precession_integrals(t_start, spec.tau)
    dm = spec.delta_ms
    if spec.kind.is_echo:
        field_phase = dm * gamma_e * f_pro * (first - second)
        free = dm * spec.omega_m * spec.tau
    else:
        field_phase = dm * gamma_e * f_pro * (first + second)
        free = (spec.two_photon_detuning + dm * spec.omega_m) * spec.tau
    return field_phase + free + schedule_phase


def fringe_spacing(tau: float, delta_ms: int, f_pro: float, gamma_e: float = GAMMA_E) -> float:
    """Field step (T) that advances the interferometer phase by one fringe."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return TWO_PI / (f_pro * delta_ms * gamma_e * tau)


@dataclass(frozen=True)
class EnsembleResponse:
    contrast: float
    decay_time: float  # T2* or T2 depending on protocol, s
    stretch: float = 1.0
    kappa_init: float = 1.0
    s_mean: float = 1.0

    def __post_init__(self):
        if not 0 <= self.contrast < 1:
            raise ValueError("contrast must be in [0, 1)")
        if not 0 < self.kappa_init <= 1:
            raise ValueError("kappa_init must be in (0, 1]")
        if self.decay_time <= 0 or self.stretch <= 0:
            raise ValueError("decay time and stretch exponent must be positive")

    def envelope(self, tau):
        return self.contrast * np.exp(-((np.asarray(tau) / self.decay_time) ** self.stretch))


def ideal_shot_signal(phase, response: EnsembleResponse, tau: float):
    """Noise-free normalized fluorescence S_mean (1 + C_eff cos(phase))."""
    return response.s_mean * (1.0 + response.envelope(tau) * np.cos(phase))


def contrast_sequence_signals(response: EnsembleResponse) -> tuple[float, float, float, float]:
    """Model (S1, S2, S3, S4) of the four-sequence contrast diagnostic.

    The ensemble enters S1 fully in the dark state; each initialization leaves
    a fraction (1 - kappa_I) of the remaining deficit. S4 ends with an SQ pi
    pulse. The span D is solved so that (S1 - S4) / (S1 + S4) = C, and
    signals are normalized to S3.
    """
    r = 1.0 - response.kappa_init
    c = response.contrast
    d1, d2, d3, d4 = r, r**2, r**3, 1.0 - r**4
    # (S1 - S4) / (S1 + S4) = C with S_n = 1 - d_n D is linear in D.
    span = 2 * c / ((d4 - d1) + c * (d1 + d4))
    s = np.array([1 - d1 * span, 1 - d2 * span, 1 - d3 * span, 1 - d4 * span])
    s = s / s[2]
    return tuple(float(x) for x in s)


def gradient_factor(spec: SequenceSpec, gradient: float, f_pro: float, gamma_e: float = GAMMA_E) -> float:
    """Contrast loss from a uniform bias spread; echoes refocus it."""
    if gradient == 0 or spec.kind.is_echo:
        return 1.0
    width = spec.delta_ms * gamma_e * f_pro * gradient * spec.tau
    return float(np.sinc(width / TWO_PI))


# ------------------------------------------------------------------ simulator


@dataclass
class ShotStream:
    f_rep: float
    weights: tuple[float, ...]
    time: np.ndarray
    raw: np.ndarray
    combined: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def period(self) -> int:
        return len(self.weights)

    @property
    def combined_rate(self) -> float:
        return self.f_rep / self.period

    @property
    def combined_time(self) -> np.ndarray:
        return self.time[self.period - 1 :: self.period]

    def to_csv(self, path) -> None:
        p = self.period
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["shot_index", "time_s", "raw_voltage_v", "combined_v"])
            for k in range(self.raw.size):
                comb = repr(float(self.combined[k // p])) if k % p == p - 1 else ""
                w.writerow([k, repr(float(self.time[k])), repr(float(self.raw[k])), comb])

    @classmethod
    def from_csv(cls, path) -> "ShotStream":
        idx, t, raw, comb_pos, comb = [], [], [], [], []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                idx.append(int(row["shot_index"]))
                t.append(float(row["time_s"]))
                raw.append(float(row["raw_voltage_v"]))
                if row["combined_v"] != "":
                    comb_pos.append(idx[-1])
                    comb.append(float(row["combined_v"]))
        t = np.array(t)
        if t.size < 2 or not comb:
            raise ValueError(f"{path}: too few shots to reconstruct a stream")
        period = comb_pos[0] + 1
        f_rep = 1.0 / float(np.median(np.diff(t)))
        # Weights are not stored in the CSV; only the period is recoverable.
        return cls(f_rep, (1.0,) * period, t, np.array(raw), np.array(comb), {"source": str(path)})


def _stream_seed(seed: int, stream: int, label: str, block: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(stream), zlib.crc32(label.encode()), int(block)])


def block_rng(seed: int, label: str, block: int, stream: int = 0) -> np.random.Generator:
    """Counter-based stream for one block of shots, independent of scheduling.

    ``stream`` separates acquisitions or sweep points drawn from one seed.
    """
    return np.random.Generator(np.random.Philox(_stream_seed(seed, stream, label, block)))


def _worker_count() -> int:
    env = os.environ.get("NVMAGSIM_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def _flicker(n: int, rms: float, rng: np.random.Generator) -> np.ndarray:
    if n < 2 or rms == 0:
        return np.zeros(n)
    white = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(white.size, dtype=float)
    f[0] = 1.0
    shaped = np.fft.irfft(white / np.sqrt(f), n)
    shaped -= shaped.mean()
    return shaped * (rms / shaped.std())


def simulate_run(
    spec: SequenceSpec,
    environment: FieldEnvironment,
    response: EnsembleResponse,
    noise: NoiseConfig = NoiseConfig(),
    duration: float = 1.0,
    seed: int = 0,
    detector: DetectorParams = DetectorParams(),
    t0: float = 0.0,
    workers: int | None = None,
    stream: int = 0,
) -> ShotStream:
    """Per-shot digitized voltages and the schedule-combined magnetometry series."""
    if not isinstance(noise, NoiseConfig):
        raise ValueError("noise must be a NoiseConfig")
    sched = spec.schedule
    p = sched.period
    n_shots = int(np.floor(duration * spec.f_rep + 1e-9))
    if duration < 1.0 / spec.f_rep or n_shots < p:
        raise ValueError("duration shorter than one schedule period")
    n_shots -= n_shots % p

    offsets = sched.fringe_offsets(spec.basis)
    tone = np.array(sched.tone_phases)
    c_eff = float(response.envelope(spec.tau)) * gradient_factor(
        spec, environment.gradient, environment.f_pro
    )
    flicker = _flicker(
        n_shots, noise.mw_phase_flicker_rms, block_rng(seed, "mw_flicker", 0, stream)
    )

    def run_block(b: int) -> np.ndarray:
        lo, hi = b * BLOCK_SHOTS, min((b + 1) * BLOCK_SHOTS, n_shots)
        k = np.arange(lo, hi)
        state = k % p
        t_start = t0 + k / spec.f_rep + spec.t_init
        field_free = accumulated_phase(environment.test_field, spec, environment.f_pro, t_start)
        rng = block_rng(seed, "shots", b, stream)
        phase_noise = flicker[lo:hi].copy()
        if noise.mw_phase_white_rms:
            phase_noise += noise.mw_phase_white_rms * rng.standard_normal(k.size)
        phi = field_free + offsets[state] + phase_noise
        s = 1.0 + c_eff * np.cos(phi)
        if noise.sq_residual and spec.basis is Basis.DQ:
            half = (field_free + phase_noise) / 2
            sq = np.cos(half + tone[state, 0]) + np.cos(-half + tone[state, 1])
            s = s + noise.sq_residual * c_eff * sq / 2
        s = response.s_mean * s
        rin = None
        if noise.rin_rms:
            rin = 1.0 + noise.rin_rms * rng.standard_normal(k.size)
        return sample_readout(
            s, detector, spec.t_readout, None if noise.is_silent else rng, noise, rin
        )

    n_blocks = -(-n_shots // BLOCK_SHOTS)
    n_workers = workers or _worker_count()
    if n_workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(run_block, range(n_blocks)))
    else:
        parts = [run_block(b) for b in range(n_blocks)]
    raw = np.concatenate(parts)
    combined = raw.reshape(-1, p) @ np.asarray(sched.weights)
    time = t0 + np.arange(n_shots) / spec.f_rep
    meta = {
        "seed": seed,
        "stream": stream,
        "f_rep_hz": spec.f_rep,
        "schedule_period": p,
        "weights": list(sched.weights),
        "effective_contrast": c_eff,
    }
    return ShotStream(spec.f_rep, sched.weights, time, raw, combined, meta)


def normalize_combined(values, spec: SequenceSpec, detector: DetectorParams):
    """Combined output in units of fractional fluorescence, per unit weight."""
    v_sig = integrated_voltage(detector.I_sig, spec.t_readout, detector.C_sig)
    norm = detector.gain * v_sig * sum(abs(w) for w in spec.schedule.weights)
    return np.asarray(values) / norm


@dataclass(frozen=True)
class SweepTrace:
    taus: np.ndarray
    signal: np.ndarray
    kind: SequenceKind
    basis: Basis


def simulate_sweep(
    spec: SequenceSpec,
    environment: FieldEnvironment,
    response: EnsembleResponse,
    taus,
    noise: NoiseConfig = NoiseConfig(),
    shots_per_point: int = 100,
    seed: int = 0,
    detector: DetectorParams = DetectorParams(),
) -> SweepTrace:
    """Precession-time sweep; each point averages ``shots_per_point`` schedule cycles."""
    taus = np.asarray(taus, dtype=float)
    if taus.size < 1 or np.any(taus < 0):
        raise ValueError("sweep grid must contain nonnegative precession times")
    out = np.empty_like(taus)
    for i, tau in enumerate(taus):
        point = replace(spec, tau=float(tau))
        n_cycles = shots_per_point * point.schedule.period
        stream = simulate_run(
            point,
            environment,
            response,
            noise,
            duration=n_cycles / point.f_rep,
            seed=seed,
            detector=detector,
            workers=1,
            stream=i,
        )
        out[i] = normalize_combined(stream.combined.mean(), point, detector)
    return SweepTrace(taus, out, spec.kind, spec.basis)


def simulate_fringe_scan(
    spec: SequenceSpec,
    response: EnsembleResponse,
    kappa: float,
    drives,
    noise: NoiseConfig = NoiseConfig(),
    shots_per_point: int = 1000,
    seed: int = 0,
    detector: DetectorParams = DetectorParams(),
    f_pro: float = F_PRO_100,
) -> np.ndarray:
    """Mean combined output versus test-coil drive amplitude (V), field = kappa * V.

    Echo sequences use a square wave switching at the echo, Ramsey a DC field.
    """
    drives = np.asarray(drives, dtype=float)
    out = np.empty_like(drives)
    for i, v in enumerate(drives):
        wave = SquareField(kappa * v) if spec.kind.is_echo else ConstantField(kappa * v)
        env = FieldEnvironment(test_field=wave, f_pro=f_pro)
        n = shots_per_point * spec.schedule.period
        run = simulate_run(
            spec, env, response, noise, n / spec.f_rep, seed, detector, workers=1, stream=i
        )
        out[i] = run.combined.mean()
    return out
