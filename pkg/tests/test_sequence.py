import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from nvmagsim.analysis import asd, fit_decaying_sinusoid, scale_asd
from nvmagsim.constants import F_PRO_100, GAMMA_E, TWO_PI
from nvmagsim.detector import DetectorParams, NoiseConfig, integrated_voltage
from nvmagsim.sequence import (
    Basis,
    ConstantField,
    EnsembleResponse,
    FieldEnvironment,
    ShotStream,
    SinusoidField,
    SquareField,
    Subtraction,
    accumulated_phase,
    build_sequence,
    contrast_sequence_signals,
    fringe_spacing,
    gradient_factor,
    ideal_shot_signal,
    phase_schedule,
    simulate_run,
    simulate_sweep,
    validate_tone_frequencies,
)

from oracles import phase_by_quadrature

DET = DetectorParams()


def ramsey(**kw):
    opts = dict(subtraction="none", base_phase=np.pi / 2)
    opts.update(kw)
    return build_sequence("ramsey", "dq", 35e-6, 40e-6, 10e-6, 6e-6, **opts)


def hahn(**kw):
    return build_sequence("hahn_echo", "dq", 39e-6, 100e-6, 10e-6, 7e-6, **kw)


RESP = EnsembleResponse(0.0334, 28.6e-6)


def test_build_sequence_repetition_rates():
    assert ramsey().f_rep == pytest.approx(10989.01, abs=0.01)
    assert hahn().f_rep == pytest.approx(6410.26, abs=0.01)
    zero = build_sequence("ramsey", "dq", 35e-6, 0.0, 10e-6, 6e-6)
    assert zero.period_s == pytest.approx(51e-6)


def test_build_sequence_errors():
    with pytest.raises(ValueError, match="1/f_rep"):
        build_sequence("ramsey", "dq", 35e-6, 40e-6, 10e-6, 6e-6, f_rep=11e3)
    build_sequence("ramsey", "dq", 35e-6, 40e-6, 10e-6, 6e-6, f_rep=1 / 91.0005e-6)
    with pytest.raises(ValueError, match="DQ"):
        build_sequence("hahn_echo", "sq", 39e-6, 100e-6, 10e-6, 7e-6)
    with pytest.raises(ValueError):
        build_sequence("ramsey", "dq", -1e-6, 40e-6, 10e-6, 6e-6)
    with pytest.raises(ValueError):
        build_sequence("ramsey", "tq", 35e-6, 40e-6, 10e-6, 6e-6)


def test_tone_validation():
    ok = validate_tone_frequencies([5500.0 * 521_432, 5500.0 * 522_200], 5500.0)
    assert ok.passed
    bad = validate_tone_frequencies([5500.0 * 10 + 2750.0], 5500.0)
    assert not bad.passed
    assert bad.candidates[0] == (55000.0, 60500.0)
    assert validate_tone_frequencies([], 5500.0).passed
    with pytest.raises(ValueError):
        validate_tone_frequencies([1.0], 0.0)


def test_phase_schedules():
    two = phase_schedule("two_state", 0.0)
    assert two.period == 2 and two.weights == (1.0, -1.0)
    assert_allclose(two.fringe_offsets(Basis.DQ), [0.0, np.pi])
    hpm = phase_schedule("hahn_pm")
    assert hpm.weights == (1.0, -1.0)
    rel = np.mod(hpm.fringe_offsets(Basis.DQ), TWO_PI)
    assert_allclose(rel, [np.pi / 2, 3 * np.pi / 2])
    none = phase_schedule("none", 0.3)
    assert none.period == 1 and none.weights == (1.0,)
    with pytest.raises(ValueError):
        phase_schedule("eight_state")


@pytest.mark.parametrize("sub", list(Subtraction))
@pytest.mark.parametrize("phi", [0.0, 1.0, -2.5, 7.0])
def test_schedule_invariants(sub, phi):
    s = phase_schedule(sub, phi)
    if s.period > 1:
        assert sum(s.weights) == 0
    ph = np.array(s.tone_phases)
    assert np.all((ph >= 0) & (ph < TWO_PI))


def test_four_state_adds_dq_and_cancels_single_tone_terms():
    s = phase_schedule("four_state", 0.4)
    w = np.array(s.weights)
    ph = np.array(s.tone_phases)
    dq = np.cos(1.1 + ph[:, 0] - ph[:, 1])
    assert w @ dq == pytest.approx(4 * np.cos(1.1 + 0.4))
    for tone in (0, 1):
        assert w @ np.cos(0.7 + ph[:, tone]) == pytest.approx(0.0, abs=1e-12)
        assert w @ np.ones(4) == 0


def test_fringe_step_advances_phase_by_two_pi():
    spec = build_sequence("ramsey", "dq", 35e-6, 19.8e-6, 10e-6, 6e-6)
    step = np.sqrt(3) * 901e-9
    a = accumulated_phase(ConstantField(1e-6), spec, F_PRO_100)
    b = accumulated_phase(ConstantField(1e-6 + step), spec, F_PRO_100)
    assert (b - a) / TWO_PI == pytest.approx(1.0, rel=2e-3)


def test_echo_refocuses_constant_fields():
    spec = hahn()
    for b in (0.0, 1e-7, -3.3e-5, 0.123):
        assert accumulated_phase(ConstantField(b), spec, F_PRO_100) == 0.0


def test_echo_square_wave_phase():
    spec = hahn()
    phi = accumulated_phase(SquareField(50e-9), spec, F_PRO_100)
    assert phi == pytest.approx(2 * GAMMA_E * 50e-9 * F_PRO_100 * 100e-6, rel=1e-14)


FIELDS = st.one_of(st.just(0.0), st.floats(1e-15, 1e-4), st.floats(-1e-4, -1e-15))
TAUS = st.one_of(st.just(0.0), st.floats(1e-9, 1e-3))


@settings(max_examples=100, deadline=None)
@given(FIELDS, TAUS, st.floats(0.0, 10.0))
def test_dq_phase_is_exactly_twice_sq(b, tau, t0):
    dq = build_sequence("ramsey", "dq", 0.0, tau, 0.0, 1e-6)
    sq = build_sequence("ramsey", "sq", 0.0, tau, 0.0, 1e-6)
    for wave in (ConstantField(b), SinusoidField(b, 10.0, 0.3)):
        assert accumulated_phase(wave, dq, F_PRO_100, t0) == 2 * accumulated_phase(wave, sq, F_PRO_100, t0)


@pytest.mark.parametrize("kind", ["ramsey", "hahn_echo"])
def test_sinusoid_phase_matches_quadrature(kind):
    spec = build_sequence(kind, "dq", 35e-6, 100e-6, 10e-6, 6e-6)
    wave = SinusoidField.from_rms(10e-9, 2.3e3, 0.4)
    b_of_t = lambda t: wave.amplitude * np.sin(TWO_PI * wave.frequency * t + wave.phase)  # noqa: E731
    for t0 in (0.0, 1.2345e-4, 0.37):
        ours = accumulated_phase(wave, spec, F_PRO_100, t0)
        ref = phase_by_quadrature(b_of_t, t0, spec.tau, GAMMA_E, F_PRO_100, 2, kind == "hahn_echo")
        assert ours == pytest.approx(ref, rel=1e-9, abs=1e-15)


def test_detuning_and_modulation_terms():
    spec = build_sequence("ramsey", "dq", 0.0, 10e-6, 0.0, 0.0, omega_m=TWO_PI * 200e3, detunings=(1e3, -2e3))
    phi = accumulated_phase(ConstantField(0.0), spec)
    assert phi == pytest.approx((TWO_PI * 3e3 + 2 * TWO_PI * 200e3) * 10e-6)
    echo = build_sequence("hahn_echo", "dq", 0.0, 10e-6, 0.0, 0.0, omega_m=TWO_PI * 10e3, detunings=(1e3, -2e3))
    assert accumulated_phase(ConstantField(0.0), echo) == pytest.approx(2 * TWO_PI * 10e3 * 10e-6)


def test_contrast_sequence_has_no_phase():
    spec = build_sequence("contrast", "sq", 35e-6, 0.0, 10e-6, 6e-6)
    with pytest.raises(ValueError):
        accumulated_phase(ConstantField(0.0), spec)


def test_fringe_spacing_values():
    assert fringe_spacing(19.8e-6, 2, F_PRO_100) == pytest.approx(1561e-9, rel=5e-3)
    assert fringe_spacing(100e-6, 2, F_PRO_100) == pytest.approx(309e-9, rel=5e-3)
    assert fringe_spacing(50e-6, 2, F_PRO_100) == pytest.approx(2 * fringe_spacing(100e-6, 2, F_PRO_100))
    with pytest.raises(ValueError):
        fringe_spacing(0.0, 2, F_PRO_100)


def test_ideal_signal():
    r = EnsembleResponse(0.03, 20e-6, 1.0, 1.0, 1.0)
    assert ideal_shot_signal(0.0, r, 0.0) == pytest.approx(1.03)
    assert ideal_shot_signal(np.pi, r, 20e-6) == pytest.approx(1 - 0.03 / np.e)


def test_response_validation():
    with pytest.raises(ValueError):
        EnsembleResponse(1.2, 1e-5)
    with pytest.raises(ValueError):
        EnsembleResponse(0.03, -1e-5)
    with pytest.raises(ValueError):
        EnsembleResponse(0.03, 1e-5, kappa_init=0.0)


def test_contrast_sequence_reproduces_measured_levels():
    s = contrast_sequence_signals(EnsembleResponse(0.0334, 1e-5, kappa_init=0.980))
    assert_allclose(s, (0.99871, 0.99993, 1.0, 0.93416), atol=1e-4)
    s1, _, _, s4 = s
    assert (s1 - s4) / (s1 + s4) == pytest.approx(0.0334, rel=1e-12)


def test_contrast_sequence_limits():
    s = contrast_sequence_signals(EnsembleResponse(0.0334, 1e-5, kappa_init=1.0))
    assert s[0] == s[1] == s[2]
    s = contrast_sequence_signals(EnsembleResponse(0.0, 1e-5, kappa_init=0.9))
    assert s[3] == pytest.approx(s[2])


def test_gradient_factor():
    spec = ramsey()
    assert gradient_factor(spec, 0.0, F_PRO_100) == 1.0
    assert gradient_factor(hahn(), 1e-6, F_PRO_100) == 1.0
    assert 0 < gradient_factor(spec, 100e-9, F_PRO_100) < 1


def test_noiseless_constant_field_gives_analytic_constant():
    spec = ramsey()
    env = FieldEnvironment(test_field=ConstantField(3e-9))
    run = simulate_run(spec, env, RESP, NoiseConfig.none(), 0.05)
    phi = accumulated_phase(ConstantField(3e-9), spec) + spec.base_phase
    s = 1 + RESP.envelope(spec.tau) * np.cos(phi)
    v_sig = integrated_voltage(DET.I_sig, 10e-6, DET.C_sig)
    v_ref = integrated_voltage(DET.I_ref, 10e-6, DET.C_ref)
    assert_allclose(run.combined, DET.gain * (v_sig * s - v_ref), rtol=1e-12)


def test_determinism_and_worker_independence(monkeypatch):
    spec = ramsey(subtraction="four_state")
    env = FieldEnvironment(test_field=SinusoidField.from_rms(10e-9, 10.0))
    noise = NoiseConfig(rin_rms=1e-5, mw_phase_white_rms=1e-4, mw_phase_flicker_rms=1e-4)
    a = simulate_run(spec, env, RESP, noise, 15.0, seed=4, workers=1)
    b = simulate_run(spec, env, RESP, noise, 15.0, seed=4, workers=4)
    monkeypatch.setenv("NVMAGSIM_THREADS", "3")
    c = simulate_run(spec, env, RESP, noise, 15.0, seed=4)
    assert np.array_equal(a.raw, b.raw) and np.array_equal(a.raw, c.raw)
    d = simulate_run(spec, env, RESP, noise, 15.0, seed=5, workers=1)
    assert not np.array_equal(a.raw, d.raw)
    e = simulate_run(spec, env, RESP, noise, 15.0, seed=4, workers=1, stream=1)
    assert not np.array_equal(a.raw, e.raw)


def test_simulate_errors():
    spec = ramsey(subtraction="four_state")
    with pytest.raises(ValueError, match="schedule period"):
        simulate_run(spec, FieldEnvironment(), RESP, NoiseConfig(), 3 / spec.f_rep)
    with pytest.raises(ValueError):
        simulate_run(spec, FieldEnvironment(), RESP, {"shot": True}, 1.0)


@pytest.mark.parametrize("sub", ["two_state", "four_state", "hahn_pm"])
def test_schedule_cancels_common_mode_when_contrast_zero(sub):
    spec = hahn(subtraction=sub) if sub == "hahn_pm" else ramsey(subtraction=sub)
    flat = EnsembleResponse(0.0, 28.6e-6, s_mean=1.0)
    drifted = EnsembleResponse(0.0, 28.6e-6, s_mean=0.97)
    for r in (flat, drifted):
        run = simulate_run(spec, FieldEnvironment(), r, NoiseConfig.none(), 0.01)
        assert np.all(run.combined == 0.0)


def test_four_state_cancels_residual_single_quantum():
    env = FieldEnvironment(test_field=ConstantField(30e-9))
    leak = NoiseConfig(signal_shot=False, reference_shot=False, digitizer=False, sq_residual=0.05)
    clean = NoiseConfig.none()
    four = ramsey(subtraction="four_state")
    a = simulate_run(four, env, RESP, leak, 0.05).combined
    b = simulate_run(four, env, RESP, clean, 0.05).combined
    assert_allclose(a, b, rtol=0, atol=1e-12 * np.abs(b).max())
    two = ramsey(subtraction="two_state")
    a2 = simulate_run(two, env, RESP, leak, 0.05).combined
    b2 = simulate_run(two, env, RESP, clean, 0.05).combined
    assert np.max(np.abs(a2 - b2)) > 1e-3 * np.abs(b2).max()


def test_bandwidths():
    assert ramsey(subtraction="none").bandwidth == pytest.approx(5494.5, abs=0.1)
    assert ramsey(subtraction="two_state").bandwidth == pytest.approx(2747.25, abs=0.1)
    assert ramsey(subtraction="four_state").bandwidth == pytest.approx(1373.6, abs=0.1)
    run = simulate_run(ramsey(subtraction="four_state"), FieldEnvironment(), RESP, NoiseConfig.none(), 1.0)
    assert run.combined.size == 10988 // 4
    assert run.combined_rate == pytest.approx(10989.01 / 4, rel=1e-6)


def test_dq_fid_sweep_round_trip():
    spec = build_sequence("ramsey_fid", "dq", 35e-6, 0.0, 10e-6, 6e-6, omega_m=TWO_PI * 200e3, subtraction="four_state")
    resp = EnsembleResponse(0.0334, 14.0e-6)
    taus = np.linspace(0, 60e-6, 241)
    trace = simulate_sweep(spec, FieldEnvironment(), resp, taus, NoiseConfig(), 50, seed=1)
    fit = fit_decaying_sinusoid(trace.taus, trace.signal, fix_p=1.0)
    assert fit["T"] == pytest.approx(14.0e-6, rel=0.01)
    assert fit["f"] == pytest.approx(400e3, rel=1e-3)


def test_test_line_calibrates_to_ten_nanotesla():
    spec = ramsey()
    env = FieldEnvironment(test_field=SinusoidField.from_rms(10e-9, 10.0))
    run = simulate_run(spec, env, RESP, NoiseConfig(), 1.0, seed=2)
    v_sig = integrated_voltage(DET.I_sig, spec.t_readout, DET.C_sig)
    slope = DET.gain * v_sig * RESP.envelope(spec.tau) * 2 * GAMMA_E * F_PRO_100 * spec.tau
    spectrum = scale_asd(asd(run.combined, run.combined_rate), 1 / slope)
    assert spectrum.value_at(10.0) == pytest.approx(10e-9 / np.sqrt(2), rel=0.01)
    assert spectrum.value_at(-10.0) == pytest.approx(10e-9 / np.sqrt(2), rel=0.01)


def test_shot_stream_csv_round_trip(tmp_path):
    spec = ramsey(subtraction="four_state")
    run = simulate_run(spec, FieldEnvironment(), RESP, NoiseConfig(), 0.01, seed=9)
    path = tmp_path / "s.csv"
    run.to_csv(path)
    back = ShotStream.from_csv(path)
    assert back.period == 4
    assert np.array_equal(back.raw, run.raw)
    assert np.array_equal(back.combined, run.combined)
    assert back.f_rep == pytest.approx(run.f_rep, rel=1e-9)
    header = path.read_text().splitlines()[0]
    assert header == "shot_index,time_s,raw_voltage_v,combined_v"
