import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvmagsim.budget import (
    BudgetInputs,
    contrast_and_init,
    gradient_tolerance,
    hahn_sensitivity_shot,
    improvement_ratio,
    optimal_tau,
    ramsey_sensitivity_full,
    ramsey_sensitivity_shot,
    readout_fidelity,
    spin_projection_limit,
    tau_factor,
)
from nvmagsim.constants import F_PRO_100, GAMMA_E
from nvmagsim.errors import NumericalError

from oracles import optimal_tau_grid, shot_sensitivity_error_propagation

RAMSEY = BudgetInputs(2, 0.0334, 28.6e-6, 40e-6, 35e-6, 10e-6, 6e-6, n_photons=3e11, envelope_contrast=0.0082)
HAHN = BudgetInputs(2, 0.0334, 136e-6, 100e-6, 39e-6, 10e-6, 7e-6, n_photons=3e11, envelope_contrast=0.0125)


def test_shot_limited_values():
    assert ramsey_sensitivity_shot(RAMSEY) == pytest.approx(261.4e-15, rel=1e-3)
    assert hahn_sensitivity_shot(HAHN) == pytest.approx(89.8e-15, rel=1e-3)


@pytest.mark.parametrize("inp", [RAMSEY, HAHN])
def test_shot_limit_matches_error_propagation(inp):
    ref = shot_sensitivity_error_propagation(
        inp.effective_contrast, inp.n_photons, inp.tau, inp.t_total, inp.delta_ms, GAMMA_E, F_PRO_100
    )
    assert ramsey_sensitivity_shot(inp) == pytest.approx(ref, rel=1e-12)


def test_effective_contrast_model():
    inp = BudgetInputs(2, 0.0334, 28.6e-6, 28.6e-6, 0, 0, 0, n_photons=1.0)
    assert inp.effective_contrast == pytest.approx(0.0334 / np.e)
    assert RAMSEY.effective_contrast == 0.0082
    assert RAMSEY.t_total == pytest.approx(91e-6)
    assert HAHN.t_overhead == pytest.approx(56e-6)


def test_full_budget_reduces_to_shot_limit_for_poor_readout():
    # With C^2 n_avg << 1 the readout factor is 1/(C sqrt(n_avg)).
    base = dict(delta_ms=2, contrast=0.03, T=20e-6, tau=20e-6, t_init=30e-6, t_readout=10e-6, t_dead=5e-6)
    inp = BudgetInputs(**base, n_nv=1e12, n_avg=0.01)
    full = ramsey_sensitivity_full(inp)
    shot = ramsey_sensitivity_shot(inp)
    assert full == pytest.approx(shot, rel=1e-4)


def test_full_budget_approaches_spin_projection_for_good_readout():
    base = dict(delta_ms=1, contrast=0.3, T=20e-6, tau=15e-6, t_init=1e-6, t_readout=1e-6, t_dead=1e-6)
    inp = BudgetInputs(**base, n_nv=1e10, n_avg=1e6)
    assert ramsey_sensitivity_full(inp) == pytest.approx(spin_projection_limit(inp), rel=1e-4)
    assert ramsey_sensitivity_full(inp) > spin_projection_limit(inp)


def test_budget_input_validation():
    with pytest.raises(ValueError):
        BudgetInputs(3, 0.03, 1e-5, 1e-5, 0, 0, 0)
    with pytest.raises(ValueError):
        BudgetInputs(1, 0.03, 1e-5, -1e-5, 0, 0, 0)
    with pytest.raises(ValueError):
        BudgetInputs(1, 0.03, 1e-5, 1e-5, 0, 0, 0, f_pro=1.5)
    with pytest.raises(ValueError):
        BudgetInputs(1, 0.03, 1e-5, 1e-5, 0, 0, 0, n_photons=5.0, n_nv=2.0, n_avg=2.0)
    assert BudgetInputs(1, 0.03, 1e-5, 1e-5, 0, 0, 0, n_nv=2.0, n_avg=3.0).n_photons == 6.0
    with pytest.raises(ValueError):
        ramsey_sensitivity_shot(BudgetInputs(1, 0.03, 1e-5, 1e-5, 0, 0, 0))
    with pytest.raises(ValueError):
        ramsey_sensitivity_full(BudgetInputs(1, 0.03, 1e-5, 1e-5, 0, 0, 0, n_photons=1.0))
    assert ramsey_sensitivity_shot(BudgetInputs(1, 0.03, 1e-5, 0.0, 1e-6, 0, 0, n_photons=1.0)) == np.inf


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e-3), st.floats(1e-6, 1e-3), st.floats(1e6, 1e14), st.floats(1.01, 4.0))
def test_shot_limit_scaling(tau, t_o, n, k):
    inp = BudgetInputs(1, 0.03, 1.0, tau, t_o, 0, 0, n_photons=n)
    base = ramsey_sensitivity_shot(inp)
    more = ramsey_sensitivity_shot(BudgetInputs(1, 0.03, 1.0, tau, t_o, 0, 0, n_photons=n * k))
    assert more == pytest.approx(base / np.sqrt(k), rel=1e-10)
    dq = ramsey_sensitivity_shot(BudgetInputs(2, 0.03, 1.0, tau, t_o, 0, 0, n_photons=n))
    assert dq == pytest.approx(base / 2, rel=1e-12)


def test_readout_fidelity():
    f, sigma_r = readout_fidelity(0.0334, 1e4)
    assert f * sigma_r == pytest.approx(1.0)
    assert f < readout_fidelity(0.0334, 1e5)[0] < 1
    with pytest.raises(ValueError):
        readout_fidelity(0.0, 1.0)


def test_contrast_and_initialization():
    r = contrast_and_init(0.99871, 0.99993, 1.0, 0.93416)
    assert round(r.contrast, 5) == pytest.approx(0.0334, abs=1e-5)
    assert r.kappa_init == pytest.approx(0.980, abs=5e-4)
    assert r.saturated
    assert not contrast_and_init(0.99871, 0.99, 1.0, 0.93416).saturated
    with pytest.raises(ValueError):
        contrast_and_init(1.0, 1.0, 0.9, 0.95)


@pytest.mark.parametrize(
    "T,t_o,dm,expected",
    [(8.7e-6, 51e-6, 1, 8.10e-6), (14e-6, 51e-6, 2, 12.61e-6), (28.6e-6, 51e-6, 2, 24.02e-6),
     (136e-6, 56e-6, 2, 93.48e-6), (324e-6, 56e-6, 2, 197.75e-6)],
)
def test_optimal_tau_values_and_grid_oracle(T, t_o, dm, expected):
    tau, fac = optimal_tau(T, t_o, 1.0, dm)
    assert tau == pytest.approx(expected, abs=0.01e-6)
    g_tau, g_fac = optimal_tau_grid(T, t_o, dm)
    assert tau == pytest.approx(g_tau, abs=1e-3 * T)
    assert fac == pytest.approx(g_fac, rel=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-6, 1e-3), st.floats(0.0, 1e-3))
def test_optimal_tau_properties(T, t_o):
    tau, fac = optimal_tau(T, t_o)
    # Stationary point of the p = 1 factor: 2 tau^2 + (2 t_O - T) tau - 2 T t_O = 0.
    b = 2 * t_o - T
    root = (-b + np.sqrt(b * b + 16 * T * t_o)) / 4
    assert tau == pytest.approx(root, rel=1e-6)
    assert T / 2 * (1 - 1e-6) <= tau <= T
    for other in (0.9 * tau, 1.1 * tau):
        assert float(tau_factor(other, T, t_o)) >= fac * (1 - 1e-9)


def test_optimal_tau_zero_overhead_is_half_t():
    tau, _ = optimal_tau(1e-5, 0.0)
    assert tau == pytest.approx(5e-6, rel=1e-6)


def test_optimal_tau_unbracketed():
    with pytest.raises(NumericalError):
        optimal_tau(1e-5, 1e-3, p=0.1)
    with pytest.raises(ValueError):
        optimal_tau(-1.0, 0.0)


def test_improvement_ratios():
    assert improvement_ratio((1, 8.7e-6), (2, 14e-6), 51e-6) == pytest.approx(3.09, abs=0.01)
    assert improvement_ratio((1, 8.7e-6), (2, 28.6e-6), 51e-6) == pytest.approx(5.77, abs=0.01)
    assert improvement_ratio((2, 136e-6), (2, 324e-6), 56e-6) == pytest.approx(1.75, abs=0.01)
    assert improvement_ratio((2, 14e-6), (2, 14e-6), 51e-6) == 1.0


def test_gradient_tolerance():
    assert gradient_tolerance(30e-6, "dq") == pytest.approx(189.5e-9, rel=1e-3)
    assert gradient_tolerance(30e-6, "sq") == pytest.approx(2 * gradient_tolerance(30e-6, "dq"))
    with pytest.raises(ValueError):
        gradient_tolerance(30e-6, "tq")
    with pytest.raises(ValueError):
        gradient_tolerance(0.0, "dq")
