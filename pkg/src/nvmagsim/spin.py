"""NV Zeeman resonances, P1 spin Hamiltonian and pulsed-ODMR line shapes."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .constants import GAUSS, TETRAHEDRAL_AXES, NvConstants, P1Constants

# Spin-1/2 operators.
_SX = np.array([[0, 1], [1, 0]], dtype=complex) / 2
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex) / 2
_SZ = np.array([[1, 0], [0, -1]], dtype=complex) / 2
_I2 = np.eye(2, dtype=complex)

# Electron (S) and nuclear (I) operators on the S (x) I product space.
S_OPS = tuple(np.kron(s, _I2) for s in (_SX, _SY, _SZ))
I_OPS = tuple(np.kron(_I2, s) for s in (_SX, _SY, _SZ))

GROUPING_TOL_HZ = 1e3
SECULAR_WARN_HZ = 10e3
ALLOWED_FRACTION = 0.1


@dataclass(frozen=True)
class BiasField:
    """Static bias field in the diamond cube frame (T)."""

    vector: tuple[float, float, float]

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float).reshape(3)
        if not np.all(np.isfinite(v)):
            raise ValueError("bias field must be finite")
        object.__setattr__(self, "vector", tuple(float(x) for x in v))

    @classmethod
    def along(cls, direction, magnitude: float) -> "BiasField":
        d = np.asarray(direction, dtype=float)
        return cls(tuple(magnitude * d / np.linalg.norm(d)))

    @classmethod
    def standard(cls) -> "BiasField":
        return cls.along([1, 0, 0], 2.23 * GAUSS)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.vector)

    @property
    def B0(self) -> float:
        return float(np.linalg.norm(self.vector))


@dataclass(frozen=True)
class Resonance:
    nv_class: int
    m_i: float  # 15N nuclear projection, +-1/2
    m_s: int  # upper level of the |0> <-> |m_s> transition
    frequency: float  # Hz

    @property
    def label(self) -> str:
        sign = "+" if self.m_s > 0 else "-"
        return f"NV{self.nv_class} mI={self.m_i:+.1f} |0>-|{sign}1>"


@dataclass(frozen=True)
class ResonanceSet:
    lines: tuple[Resonance, ...]

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([r.frequency for r in self.lines])

    def groups(self, tol: float = GROUPING_TOL_HZ) -> list[list[Resonance]]:
        """Cluster lines whose frequencies chain together within ``tol``."""
        ordered = sorted(self.lines, key=lambda r: r.frequency)
        out: list[list[Resonance]] = []
        for r in ordered:
            if out and r.frequency - out[-1][-1].frequency <= tol:
                out[-1].append(r)
            else:
                out.append([r])
        return out


def nv_axis_projections(bias: BiasField) -> np.ndarray:
    # Quantization sign per class is chosen so the projection is >= 0.
    return np.abs(TETRAHEDRAL_AXES @ bias.array)


def nv_resonances(
    consts: NvConstants,
    bias: BiasField,
    delta_t: float = 0.0,
    secular_error_hz: float = 1e6,
) -> ResonanceSet:
    """16 ground-state transitions of 15NV in the secular approximation.

    The second-order shift from the transverse field, (gamma B_perp)^2 / D,
    triggers a warning above 10 kHz and a ValueError above ``secular_error_hz``.
    """
    b_par = nv_axis_projections(bias)
    b_perp = np.sqrt(np.clip(bias.B0**2 - b_par**2, 0.0, None))
    second_order = (consts.gamma_e_hz * b_perp) ** 2 / consts.D
    worst = float(second_order.max())
    if worst > secular_error_hz:
        raise ValueError(
            f"transverse-field shift {worst:.3g} Hz exceeds secular limit {secular_error_hz:.3g} Hz"
        )
    if worst > SECULAR_WARN_HZ:
        warnings.warn(
            f"secular approximation degraded: transverse shift {worst:.3g} Hz", stacklevel=2
        )

    d = consts.D + consts.dD_dT * delta_t
    lines = []
    for k in range(4):
        zeeman = consts.gamma_e_hz * b_par[k]
        for m_s in (+1, -1):
            for m_i in (+0.5, -0.5):
                f = d + m_s * zeeman + m_s * m_i * consts.A_par_15N
                lines.append(Resonance(k + 1, m_i, m_s, float(f)))
    return ResonanceSet(tuple(lines))


def _jt_frame(axis: np.ndarray) -> np.ndarray:
    """Rotation whose rows are (x', y', z') of the Jahn-Teller frame, z' = axis."""
    z = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 1.0, 0.0]) if abs(z[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.vstack([x, y, z])


def p1_hamiltonian(consts: P1Constants, bias: BiasField, jt_axis_index: int) -> np.ndarray:
    """H/h in Hz for one Jahn-Teller orientation (1-based index), in its principal frame."""
    if jt_axis_index not in (1, 2, 3, 4):
        raise ValueError(f"jt_axis_index must be 1..4, got {jt_axis_index}")
    rot = _jt_frame(consts.jt_axes[jt_axis_index - 1])
    b = rot @ bias.array
    sx, sy, sz = S_OPS
    ix, iy, iz = I_OPS
    h = consts.g_factor_over_h * (b[0] * sx + b[1] * sy + b[2] * sz)
    h = h + consts.A_par * sz @ iz + consts.A_perp * (sx @ ix + sy @ iy)
    return (h + h.conj().T) / 2


@dataclass(frozen=True)
class P1Transition:
    frequency: float  # Hz
    weight: float  # |<i|S.d|j>|^2 normalised to the strongest line
    jt_axis: int
    levels: tuple[int, int]

    @property
    def allowed(self) -> bool:
        return self.weight >= ALLOWED_FRACTION


def p1_transitions(
    consts: P1Constants, bias: BiasField, drive_axis=(0.0, 1.0, 0.0)
) -> list[P1Transition]:
    d = np.asarray(drive_axis, dtype=float)
    if not np.isclose(np.linalg.norm(d), 1.0, atol=1e-9):
        raise ValueError("drive_axis must be a unit vector")
    raw = []
    for k in range(1, 5):
        h = p1_hamiltonian(consts, bias, k)
        energies, vecs = np.linalg.eigh(h)
        d_local = _jt_frame(consts.jt_axes[k - 1]) @ d
        s_drive = sum(d_local[i] * S_OPS[i] for i in range(3))
        for i in range(4):
            for j in range(i + 1, 4):
                m = vecs[:, i].conj() @ s_drive @ vecs[:, j]
                raw.append((energies[j] - energies[i], abs(m) ** 2, k, (i, j)))
    wmax = max(r[1] for r in raw)
    out = [P1Transition(float(f), float(w / wmax), k, ij) for f, w, k, ij in raw]
    return sorted(out, key=lambda t: t.frequency)


def group_frequencies(freqs, tol: float) -> list[float]:
    """Mean frequency of each cluster of values chained within ``tol``."""
    ordered = np.sort(np.asarray(freqs, dtype=float))
    if ordered.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(ordered) > tol) + 1
    return [float(c.mean()) for c in np.split(ordered, breaks)]


def lorentzian(f, center, fwhm):
    """Unit-peak Lorentzian."""
    hw = fwhm / 2
    return hw**2 / ((np.asarray(f) - center) ** 2 + hw**2)


def odmr_spectrum(centers, linewidths, contrasts, grid) -> np.ndarray:
    """Normalized pulsed-ODMR fluorescence, 1 - sum_i c_i L(f; f_i, Gamma_i)."""
    if isinstance(centers, ResonanceSet):
        centers = centers.frequencies
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    widths = np.broadcast_to(np.asarray(linewidths, dtype=float), centers.shape)
    depths = np.broadcast_to(np.asarray(contrasts, dtype=float), centers.shape)
    if np.any(widths <= 0):
        raise ValueError("linewidths must be positive")
    grid = np.asarray(grid, dtype=float)
    if grid.size > 1 and not (np.all(np.diff(grid) > 0) or np.all(np.diff(grid) < 0)):
        raise ValueError("frequency grid must be monotone")
    out = np.ones_like(grid)
    for f0, w, c in zip(centers, widths, depths):
        out -= c * lorentzian(grid, f0, w)
    return out


def linewidth_to_t2star(fwhm: float) -> float:
    """Lorentzian FWHM (Hz) to dephasing time, T2* = 1/(pi FWHM)."""
    if fwhm <= 0:
        raise ValueError("linewidth must be positive")
    return 1.0 / (np.pi * fwhm)
