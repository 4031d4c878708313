"""Spectral sensitivity estimation, test-field calibration and curve fits."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import hilbert

from .constants import MU_0, TWO_PI
from .errors import CalibrationError, FitError

# Rayleigh median -> rms correction for a single double-sided acquisition.
ALPHA_MEDIAN = float(np.sqrt(4 / np.pi) * 0.5 * np.sqrt(np.pi / np.log(2)))

FIT_XTOL = 1e-8
FIT_MAX_ITER = 200
FIT_RESTARTS = 5


@dataclass(frozen=True)
class Asd:
    """Amplitude spectral density on an ascending frequency grid.

    Double-sided spectra hold negative and positive frequencies; single-sided
    spectra hold 0..Nyquist. ``excluded`` marks notched bins, which are kept in
    exports but ignored by :func:`min_sensitivity`.
    """

    freqs: np.ndarray
    values: np.ndarray
    df: float
    sided: str = "double"
    calibration: float | None = None  # output units per input unit
    notches: tuple[float, ...] = ()
    excluded: np.ndarray | None = None
    has_nyquist: bool = False  # single-sided only: last bin is an unpaired Nyquist bin

    def __post_init__(self):
        if self.sided not in ("single", "double"):
            raise ValueError("sided must be 'single' or 'double'")
        if self.excluded is None:
            object.__setattr__(self, "excluded", np.zeros(self.freqs.size, dtype=bool))

    def positive(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(freqs, values, excluded) for f > 0."""
        m = self.freqs > 0
        return self.freqs[m], self.values[m], self.excluded[m]

    def value_at(self, f: float) -> float:
        k = int(np.argmin(np.abs(self.freqs - f)))
        if abs(self.freqs[k] - f) > self.df / 2:
            raise ValueError(f"no bin at {f} Hz")
        return float(self.values[k])

    def mean_square(self) -> float:
        """Integrated power; equals the time-domain mean square for unaltered spectra."""
        return float(np.sum(self.values**2) * self.df)

    def to_single_sided(self) -> "Asd":
        if self.sided == "single":
            return self
        f, v, ex = self.freqs, self.values, self.excluded
        keep = f >= 0
        f_out, v_out, x_out = f[keep], v[keep] * np.sqrt(2.0), ex[keep]
        v_out[f_out == 0] /= np.sqrt(2.0)
        # An even-length transform has its unpaired Nyquist bin at -f_nyq.
        if f.size > 1 and f[0] < 0 and not np.any(np.isclose(f, -f[0])):
            f_out = np.append(f_out, -f[0])
            v_out = np.append(v_out, v[0])
            x_out = np.append(x_out, ex[0])
        else:
            return replace(self, freqs=f_out, values=v_out, sided="single", excluded=x_out)
        return replace(
            self, freqs=f_out, values=v_out, sided="single", excluded=x_out, has_nyquist=True
        )

    def to_double_sided(self) -> "Asd":
        if self.sided == "double":
            return self
        f, v, ex = self.freqs, self.values.copy(), self.excluded
        has_nyq = self.has_nyquist and f.size > 1
        mirrored = f[1:-1] if has_nyq else f[1:]
        partner = np.ones(f.size, dtype=bool)
        partner[0] = False
        if has_nyq:
            partner[-1] = False
        v[partner] /= np.sqrt(2.0)
        neg_f = -mirrored[::-1]
        neg_v = v[1 : 1 + mirrored.size][::-1]
        neg_x = ex[1 : 1 + mirrored.size][::-1]
        if has_nyq:
            # Nyquist lives on the negative side in the fft ordering.
            f_all = np.concatenate([[-f[-1]], neg_f, f[:-1]])
            v_all = np.concatenate([[v[-1]], neg_v, v[:-1]])
            x_all = np.concatenate([[ex[-1]], neg_x, ex[:-1]])
        else:
            f_all = np.concatenate([neg_f, f])
            v_all = np.concatenate([neg_v, v])
            x_all = np.concatenate([neg_x, ex])
        return replace(
            self, freqs=f_all, values=v_all, sided="double", excluded=x_all, has_nyquist=False
        )


def _whole_seconds(n: int, sample_rate: float) -> int:
    seconds = int(np.floor(n / sample_rate + 1e-9))
    if seconds < 1:
        return n
    return min(n, int(np.floor(seconds * sample_rate + 1e-9)))


def asd(series, sample_rate: float) -> Asd:
    """Double-sided rectangular-window ASD, normalized so sum(v^2) df = mean(x^2).

    Series are truncated (never padded) to a whole number of seconds, so bins
    fall on integer frequencies; series shorter than one second are used whole.
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty series")
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    n = _whole_seconds(x.size, sample_rate)
    x = x[:n]
    spec = np.fft.fftshift(np.fft.fft(x))
    freqs = np.fft.fftshift(np.fft.fftfreq(n, d=1.0 / sample_rate))
    values = np.abs(spec) / np.sqrt(n * sample_rate)
    return Asd(freqs, values, sample_rate / n)


def rms_average(spectra) -> Asd:
    spectra = list(spectra)
    if not spectra:
        raise ValueError("no spectra to average")
    first = spectra[0]
    for s in spectra[1:]:
        if s.sided != first.sided or s.freqs.shape != first.freqs.shape or not np.allclose(
            s.freqs, first.freqs, rtol=0, atol=1e-9 * max(1.0, first.df)
        ):
            raise ValueError("spectra are on different frequency grids")
    power = np.mean([s.values**2 for s in spectra], axis=0)
    notches = tuple(sorted(set().union(*(s.notches for s in spectra))))
    excluded = np.logical_or.reduce([s.excluded for s in spectra])
    cal = first.calibration if all(s.calibration == first.calibration for s in spectra) else None
    return replace(first, values=np.sqrt(power), notches=notches, excluded=excluded, calibration=cal)


def calibrate_asd(spectrum: Asd, test_bin_hz: float, known_rms: float) -> Asd:
    """Scale so the +/- test bins read known_rms / sqrt(2) (per sqrt of the bin width)."""
    if not known_rms > 0:
        raise CalibrationError("known test-field rms must be positive")
    k = int(np.argmin(np.abs(spectrum.freqs - test_bin_hz)))
    if abs(spectrum.freqs[k] - test_bin_hz) > spectrum.df / 2:
        raise CalibrationError(f"no spectral bin at {test_bin_hz} Hz")
    v = spectrum.values
    neighbours = [v[j] for j in (k - 1, k + 1) if 0 <= j < v.size]
    if v[k] <= 0 or any(v[k] <= nb for nb in neighbours):
        raise CalibrationError(f"test bin at {test_bin_hz} Hz is not a local maximum")
    line = v[k] * np.sqrt(spectrum.df)
    if spectrum.sided == "single":
        line /= np.sqrt(2.0)
    scale = (known_rms / np.sqrt(2.0)) / line
    return replace(spectrum, values=v * scale, calibration=float(scale) * (spectrum.calibration or 1.0))


def scale_asd(spectrum: Asd, factor: float) -> Asd:
    """Apply a known conversion, e.g. 1/slope for fringe-fit calibrated spectra."""
    if not np.isfinite(factor) or factor <= 0:
        raise CalibrationError("scale factor must be positive and finite")
    return replace(
        spectrum, values=spectrum.values * factor, calibration=factor * (spectrum.calibration or 1.0)
    )


def notch(spectrum: Asd, freqs, width_hz: float = 1.0) -> Asd:
    """Exclude bins within width/2 of each |f| from sensitivity statistics."""
    nyq = float(np.max(np.abs(spectrum.freqs)))
    excluded = spectrum.excluded.copy()
    fs = [float(f) for f in np.atleast_1d(freqs)]
    for f in fs:
        if abs(f) > nyq + spectrum.df / 2:
            raise ValueError(f"notch at {f} Hz is beyond Nyquist ({nyq} Hz)")
        hit = np.abs(np.abs(spectrum.freqs) - abs(f)) < max(width_hz, spectrum.df) / 2 + 1e-12
        excluded |= hit
    return replace(spectrum, excluded=excluded, notches=tuple(sorted(set(spectrum.notches) | set(fs))))


def lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empty band")
    return float(v[(v.size - 1) // 2])


def band_mask(spectrum: Asd, band=None) -> np.ndarray:
    """Positive-frequency bins in ``band`` (Hz, inclusive); default is the top 10%."""
    f, _, ex = spectrum.positive()
    if band is None:
        n = f.size
        keep = np.zeros(n, dtype=bool)
        keep[n - max(1, int(round(0.1 * n))) :] = True
    else:
        lo, hi = band
        if hi > f.max() + spectrum.df / 2 or lo > hi:
            raise ValueError(f"band {band} outside 0..{f.max()} Hz")
        keep = (f >= lo - 1e-12) & (f <= hi + 1e-12)
    return keep & ~ex


def min_sensitivity(spectrum: Asd, band=None, mode: str = "averaged") -> float:
    """Median of the double-sided ASD over ``band``; single_acq mode multiplies by alpha."""
    if mode not in ("averaged", "single_acq"):
        raise ValueError("mode must be 'averaged' or 'single_acq'")
    ds = spectrum.to_double_sided()
    _, v, _ = ds.positive()
    m = band_mask(ds, band)
    if not np.any(m):
        raise ValueError("empty band")
    med = lower_median(v[m])
    return med * ALPHA_MEDIAN if mode == "single_acq" else med


@dataclass(frozen=True)
class SensitivitySpectrum:
    asd: Asd
    band: tuple[float, float]
    mode: str
    min_sensitivity: float
    n_acquisitions: int

    def summary(self) -> dict:
        return {
            "min_sensitivity_t_sqrt_s": self.min_sensitivity,
            "band_hz": list(self.band),
            "mode": self.mode,
            "n_acquisitions": self.n_acquisitions,
            "notches_hz": list(self.asd.notches),
            "calibration_t_per_v": self.asd.calibration,
            "bin_width_hz": self.asd.df,
        }


def sensitivity_spectrum(
    series_list,
    sample_rate: float,
    test_bin_hz: float | None = None,
    known_rms: float | None = None,
    slope: float | None = None,
    band=None,
    notches=(),
    single_acq: bool = False,
) -> SensitivitySpectrum:
    """rms-average acquisitions, calibrate (test line or slope) and take the median."""
    spectra = [asd(s, sample_rate) for s in series_list]
    avg = rms_average(spectra)
    if test_bin_hz is not None:
        avg = calibrate_asd(avg, test_bin_hz, known_rms if known_rms is not None else 0.0)
    elif slope is not None:
        avg = scale_asd(avg, 1.0 / abs(slope))
    if test_bin_hz is not None:
        avg = notch(avg, [test_bin_hz])
    if len(notches):
        avg = notch(avg, notches)
    mode = "single_acq" if single_acq and len(spectra) == 1 else "averaged"
    eta = min_sensitivity(avg, band, mode)
    f, _, _ = avg.positive()
    m = band_mask(avg, band)
    return SensitivitySpectrum(avg, (float(f[m].min()), float(f[m].max())), mode, eta, len(spectra))


# --------------------------------------------------------------------- fits


@dataclass(frozen=True)
class FitResult:
    params: dict
    errors: dict
    residual_rms: float
    converged: bool
    model: str
    extras: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.params[key]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": dict(self.params),
            "errors": dict(self.errors),
            "residual_rms": self.residual_rms,
            "converged": self.converged,
            **self.extras,
        }


def _uncertainties(res, n_points: int) -> np.ndarray:
    jac = res.jac
    dof = max(1, n_points - jac.shape[1])
    s2 = 2 * res.cost / dof
    cov = np.linalg.pinv(jac.T @ jac) * s2
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


def _dft_peak(t, y, f_max):
    """Frequency, complex amplitude of the strongest component (works on uneven grids)."""
    span = t.max() - t.min()
    grid = np.linspace(0.0, f_max, max(64, int(8 * f_max * span)))[1:]
    basis = np.exp(-1j * TWO_PI * np.outer(grid, t))
    spec = basis @ y
    k = int(np.argmax(np.abs(spec)))
    return grid[k], spec[k] * 2 / t.size


def envelope_t2star(tau, y) -> float:
    """Quick 1/e time from the log of the Hilbert envelope (p = 1); inf if not decaying."""
    tau = np.asarray(tau, dtype=float)
    y = np.asarray(y, dtype=float)
    if tau.size < 16 or tau.size != y.size:
        raise ValueError("envelope estimate needs at least 16 points")
    env = np.abs(hilbert(y - y.mean()))
    trim = max(1, tau.size // 10)
    t, e = tau[trim:-trim], env[trim:-trim]
    if np.any(e <= 0):
        raise FitError("envelope has nonpositive values")
    slope, _ = np.polyfit(t, np.log(e), 1)
    if slope >= 0:
        return float("inf")
    return float(-1.0 / slope)


def _decay_model(x, t, free_p, p_fixed):
    a, T, f, phi, c = x[:5]
    p = x[5] if free_p else p_fixed
    return a * np.exp(-((t / T) ** p)) * np.sin(TWO_PI * f * t + phi) + c


def fit_decaying_sinusoid(tau, y, fix_p: float | None = None) -> FitResult:
    """Fit y = A exp(-(tau/T)^p) sin(2 pi f tau + phi) (+ offset).

    ``fix_p`` holds p at a value; otherwise p is fitted. Inputs are rescaled
    internally so the fit is invariant to the units of tau and y.
    """
    tau = np.asarray(tau, dtype=float)
    y = np.asarray(y, dtype=float)
    if tau.size != y.size or tau.size < 6:
        raise ValueError("need at least 6 (tau, y) points")
    order = np.argsort(tau)
    tau, y = tau[order], y[order]
    t_scale = float(np.max(np.abs(tau))) or 1.0
    y0 = y.mean()
    y_scale = float(np.std(y)) or 1.0
    t = tau / t_scale
    z = (y - y0) / y_scale

    f_nyq = 0.5 / np.median(np.diff(t))
    f0, amp = _dft_peak(t, z, f_nyq)
    phi0 = float(np.angle(amp) + np.pi / 2)
    a0 = float(np.max(np.abs(z)))
    try:
        T0 = envelope_t2star(t, z)
    except (ValueError, FitError):
        T0 = float("inf")
    if not np.isfinite(T0) or T0 <= 0:
        T0 = 0.5
    T0 = float(np.clip(T0, 1e-3, 1e3))

    free_p = fix_p is None
    p_fixed = 1.0 if free_p else float(fix_p)
    lo = [0.0, 1e-6, 0.0, -np.inf, -np.inf] + ([0.1] if free_p else [])
    hi = [np.inf, 1e6, 2 * f_nyq, np.inf, np.inf] + ([5.0] if free_p else [])

    def resid(x):
        return _decay_model(x, t, free_p, p_fixed) - z

    best = None
    for attempt in range(FIT_RESTARTS + 1):
        x0 = [a0, T0, f0, phi0 + attempt * TWO_PI / (FIT_RESTARTS + 1), 0.0] + ([1.0] if free_p else [])
        try:
            res = least_squares(
                resid, x0, bounds=(lo, hi), xtol=FIT_XTOL, ftol=FIT_XTOL, max_nfev=FIT_MAX_ITER * len(x0)
            )
        except ValueError:
            continue
        if res.status > 0 and np.all(np.isfinite(res.x)) and (best is None or res.cost < best.cost):
            best = res
        if best is not None and np.sqrt(2 * best.cost / t.size) < 1e-6 * np.std(z) + 0.05:
            break
    if best is None:
        raise FitError("decaying-sinusoid fit did not converge")

    err = _uncertainties(best, t.size)
    a, T, f, phi, c = best.x[:5]
    scales = [y_scale, t_scale, 1 / t_scale, 1.0, y_scale]
    phi = float(np.angle(np.exp(1j * phi)))
    params = {"A": a * y_scale, "T": T * t_scale, "f": f / t_scale, "phi": phi, "offset": c * y_scale + y0}
    errors = {k: float(e * s) for k, e, s in zip(("A", "T", "f", "phi", "offset"), err[:5], scales)}
    if free_p:
        params["p"], errors["p"] = float(best.x[5]), float(err[5])
    else:
        params["p"], errors["p"] = p_fixed, 0.0
    params = {k: float(v) for k, v in params.items()}
    rms = float(np.sqrt(2 * best.cost / t.size) * y_scale)
    return FitResult(params, errors, rms, True, "decaying_sinusoid", {"p_fixed": not free_p})


# ---------------------------------------------------------------- calibration


def coil_field(r: float, n_turns: int, z: float, current_rms: float) -> float:
    """On-axis rms field (T) of an N-turn loop of radius r at distance z."""
    if r <= 0:
        raise ValueError("coil radius must be positive")
    return float(MU_0 * current_rms * n_turns * r**2 / (2 * (r**2 + z**2) ** 1.5))


def coil_kappa(
    r: float, n_turns: int, z: float, attenuation_db: float = 20.0, resistance: float = 50.0
) -> float:
    """Field per drive volt (T/V) through an attenuator into a series resistor."""
    if resistance <= 0:
        raise ValueError("series resistance must be positive")
    current_per_v = 10 ** (-attenuation_db / 20) / resistance
    return coil_field(r, n_turns, z, current_per_v)


def kappa_from_reference(
    measured_field: float, drive_v: float, r: float, z_measured: float, z_target: float
) -> float:
    """Scale a reference-magnetometer reading along the coil axis to the sensor position."""
    if drive_v <= 0 or measured_field <= 0:
        raise CalibrationError("reference measurement must be positive")
    g = lambda z: r**2 / (r**2 + z**2) ** 1.5  # noqa: E731
    return measured_field / drive_v * g(z_target) / g(z_measured)


def kappa_from_fringe(fringe_spacing_t: float, period_v: float) -> float:
    """Calibration factor (T/V) from the drive-voltage period of the fringes."""
    if period_v <= 0:
        raise CalibrationError("fringe period must be positive")
    return fringe_spacing_t / period_v


@dataclass(frozen=True)
class FringeFit:
    fit: FitResult
    period_v: float
    kappa: float  # T/V
    fringe_spacing: float  # T

    @property
    def max_slope(self) -> float:
        """Peak output slope per tesla, A omega / kappa = 2 pi A / Delta B."""
        return TWO_PI * abs(self.fit["A"]) / self.fringe_spacing


def fit_fringe_scan(drives, signal, fringe_spacing_t: float) -> FringeFit:
    """Fit A sin(omega V + phi) + c and convert the period to kappa."""
    v = np.asarray(drives, dtype=float)
    s = np.asarray(signal, dtype=float)
    if v.size != s.size or v.size < 5:
        raise ValueError("need at least 5 scan points")
    order = np.argsort(v)
    v, s = v[order], s[order]
    span = v[-1] - v[0]
    if span <= 0:
        raise ValueError("scan has zero span")
    dev = s - s.mean()
    if np.ptp(s) <= 1e-12 * max(1.0, np.abs(s).max()):
        raise ValueError("fringe scan has zero amplitude")
    x = (v - v[0]) / span
    z = dev / np.std(dev)
    f0, amp = _dft_peak(x, z, 0.5 / np.median(np.diff(x)))
    if f0 < 1.0:
        raise ValueError("scan spans less than one fringe period")

    def resid(p):
        return p[0] * np.sin(TWO_PI * p[1] * x + p[2]) + p[3] - z

    best = None
    for attempt in range(FIT_RESTARTS + 1):
        x0 = [np.sqrt(2.0), f0, np.angle(amp) + np.pi / 2 + attempt * TWO_PI / (FIT_RESTARTS + 1), 0.0]
        res = least_squares(resid, x0, xtol=FIT_XTOL, ftol=FIT_XTOL, max_nfev=FIT_MAX_ITER * 4)
        if res.status > 0 and (best is None or res.cost < best.cost):
            best = res
    if best is None:
        raise FitError("fringe-scan fit did not converge")
    a, f, phi, c = best.x
    if a < 0:
        a, phi = -a, phi + np.pi
    if f * 1.0 < 1.0:
        raise ValueError("scan spans less than one fringe period")
    err = _uncertainties(best, x.size)
    sd = float(np.std(dev))
    omega = TWO_PI * f / span
    phase = float(np.angle(np.exp(1j * (phi - omega * v[0]))))
    params = {"A": a * sd, "omega": omega, "phi": phase, "offset": c * sd + s.mean()}
    errors = {"A": err[0] * sd, "omega": TWO_PI * err[1] / span, "phi": float(err[2]), "offset": err[3] * sd}
    rms = float(np.sqrt(2 * best.cost / x.size) * sd)
    period = TWO_PI / omega
    fit = FitResult({k: float(q) for k, q in params.items()}, {k: float(q) for k, q in errors.items()}, rms, True, "sinusoid_offset")
    return FringeFit(fit, period, kappa_from_fringe(fringe_spacing_t, period), fringe_spacing_t)
