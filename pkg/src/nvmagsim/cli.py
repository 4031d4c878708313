"""Command-line front end: resonances | simulate | sweep | analyze | budget | calibrate.

Exit codes: 0 success, 1 I/O failure, 2 config error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    band_mask,
    coil_kappa,
    fit_decaying_sinusoid,
    fit_fringe_scan,
    kappa_from_fringe,
    kappa_from_reference,
    sensitivity_spectrum,
)
from .budget import (
    BudgetInputs,
    contrast_and_init,
    gradient_tolerance,
    hahn_sensitivity_shot,
    improvement_ratio,
    optimal_tau,
    ramsey_sensitivity_full,
    ramsey_sensitivity_shot,
    readout_fidelity,
)
from .config import RunConfig, load_config
from .detector import photoelectron_count, readout_budget
from .errors import ConfigError, NumericalError
from .io import check_new, dumps, read_columns, write_csv, write_json
from .sequence import (
    ShotStream,
    fringe_spacing,
    simulate_fringe_scan,
    simulate_run,
    simulate_sweep,
    validate_tone_frequencies,
)
from .spin import nv_resonances, p1_transitions

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _emit(args, report: dict, lines: list[str]) -> None:
    if args.json:
        print(dumps(report))
    else:
        print("\n".join(lines))


def _manifest(args, cfg: RunConfig, cfg_hash: str, extra: dict) -> dict:
    return {
        "command": args.command,
        "tool_version": __version__,
        "config": str(args.config),
        "config_hash": cfg_hash,
        "seed": _seed(args, cfg),
        **extra,
    }


def _seed(args, cfg: RunConfig) -> int:
    return cfg.seed if args.seed is None else args.seed


def _out(args) -> Path | None:
    return Path(args.out) if args.out else None


# ----------------------------------------------------------------- commands


def cmd_resonances(args) -> int:
    cfg, cfg_hash = load_config(args.config)
    res = nv_resonances(cfg.nv_constants(), cfg.bias_field(), cfg.spin.delta_t_k)
    groups = res.groups()
    p1 = p1_transitions(cfg.p1_constants(), cfg.bias_field(), cfg.bias.p1_drive_axis)
    report = {
        "nv_lines": [
            {"nv_class": r.nv_class, "m_i": r.m_i, "m_s": r.m_s, "frequency_hz": r.frequency}
            for r in res.lines
        ],
        "nv_groups_hz": [float(np.mean([r.frequency for r in g])) for g in groups],
        "nv_group_sizes": [len(g) for g in groups],
        "p1_transitions": [
            {"frequency_hz": t.frequency, "weight": t.weight, "jt_axis": t.jt_axis, "allowed": t.allowed}
            for t in p1
        ],
    }
    lines = ["NV resonances", f"{'class':>5} {'m_I':>5} {'transition':>11} {'freq_MHz':>14}"]
    for r in sorted(res.lines, key=lambda r: r.frequency):
        lines.append(f"{r.nv_class:>5} {r.m_i:>+5.1f} {'|0>-|' + ('+' if r.m_s > 0 else '-') + '1>':>11} {r.frequency / 1e6:>14.6f}")
    lines.append(f"{len(groups)} distinct frequencies (1 kHz grouping):")
    for f, n in zip(report["nv_groups_hz"], report["nv_group_sizes"]):
        lines.append(f"  {f / 1e6:.6f} MHz x{n}")
    lines += ["", "P1 transitions", f"{'freq_MHz':>12} {'weight':>8} {'JT':>3} {'allowed':>8}"]
    for t in p1:
        lines.append(f"{t.frequency / 1e6:>12.4f} {t.weight:>8.4f} {t.jt_axis:>3} {str(t.allowed):>8}")
    out = _out(args)
    if out:
        write_json(out / "resonances.json", {**report, "manifest": _manifest(args, cfg, cfg_hash, {})}, args.force)
    _emit(args, report, lines)
    return EXIT_OK


def _acquisition_paths(out: Path, n: int) -> list[Path]:
    return [out / f"acq_{k:03d}.csv" for k in range(n)]


def cmd_simulate(args) -> int:
    cfg, cfg_hash = load_config(args.config)
    spec = cfg.sequence_spec()
    if not spec.kind.is_interferometric:
        raise ConfigError(f"simulate needs an interferometric sequence, not {spec.kind.value}", key="sequence.kind")
    tones = validate_tone_frequencies(cfg.sequence.mw_tones_hz, spec.f_rep)
    if not tones.passed:
        warnings.warn(
            "MW tones are not integer multiples of f_rep; nearest compliant: "
            + ", ".join(f"{f:.6f}" for f in tones.nearest)
        )
    n_acq = args.acquisitions or cfg.run.acquisitions
    seed = _seed(args, cfg)
    out = _out(args) or Path(".")
    paths = _acquisition_paths(out, n_acq)
    manifest_path = out / "manifest.json"
    check_new(paths + [manifest_path], args.force)
    env, resp, noise, det = cfg.environment_model(), cfg.response(), cfg.noise_config(), cfg.detector_params()
    dur = cfg.run.duration_s
    summaries = []
    for k, path in enumerate(paths):
        stream = simulate_run(spec, env, resp, noise, dur, seed, det, t0=k * dur, stream=k)
        out.mkdir(parents=True, exist_ok=True)
        stream.to_csv(path)
        summaries.append({"file": path.name, "shots": int(stream.raw.size), "combined_std_v": float(stream.combined.std())})
    sched = spec.schedule
    extra = {
        "acquisitions": n_acq,
        "duration_s": dur,
        "f_rep_hz": spec.f_rep,
        "combined_rate_hz": spec.combined_rate,
        "bandwidth_hz": spec.bandwidth,
        "schedule": {"period": sched.period, "tone_phases_rad": [list(p) for p in sched.tone_phases], "weights": list(sched.weights)},
        "sequence": spec.to_dict(),
        "files": summaries,
        "tones_compliant": tones.passed,
    }
    manifest = _manifest(args, cfg, cfg_hash, extra)
    write_json(manifest_path, manifest, args.force)
    lines = [
        f"f_rep = {spec.f_rep:.3f} Hz, combined rate = {spec.combined_rate:.3f} Hz, bandwidth = {spec.bandwidth:.3f} Hz",
        f"wrote {n_acq} acquisition(s) of {dur} s to {out}/ (seed {seed})",
    ]
    _emit(args, manifest, lines)
    return EXIT_OK


def _band(cfg: RunConfig, rate: float):
    b = cfg.analysis.band_hz
    if b == "top10":
        return None
    if b == "full":
        return (0.0, rate / 2)
    return tuple(b)


def _closed_form_shot(cfg: RunConfig) -> float | None:
    if cfg.sequence is None or cfg.ensemble is None:
        return None
    spec, resp, det = cfg.sequence_spec(), cfg.response(), cfg.detector_params()
    inp = BudgetInputs(
        spec.delta_ms,
        resp.contrast,
        resp.decay_time,
        spec.tau,
        spec.t_init,
        spec.t_readout,
        spec.t_dead,
        p=resp.stretch,
        n_photons=photoelectron_count(det.I_sig, spec.t_readout, det.q),
        f_pro=cfg.environment.f_pro,
        gamma_e=cfg.spin.gamma_e_rad_per_s_per_tesla,
    )
    return ramsey_sensitivity_shot(inp)


def cmd_analyze(args) -> int:
    cfg, cfg_hash = load_config(args.config)
    if not args.files:
        raise ConfigError("analyze needs at least one acquisition file")
    streams = [ShotStream.from_csv(f) for f in args.files]
    spec = cfg.sequence_spec() if cfg.sequence is not None else None
    if spec is not None:
        rate = spec.combined_rate
        if any(s.period != spec.schedule.period for s in streams):
            raise ConfigError("acquisition schedule period does not match the config sequence")
    else:
        rate = streams[0].combined_rate
    single = args.single_acq or cfg.analysis.single_acq
    if single and len(streams) != 1:
        raise ConfigError("single-acquisition mode takes exactly one file")

    slope = None
    fringe = None
    if args.scan:
        if spec is None:
            raise ConfigError("fringe-scan calibration needs the sequence section", key="sequence")
        drives, signal = read_columns(args.scan, "drive_v", "signal_v")
        spacing = fringe_spacing(spec.tau, spec.delta_ms, cfg.environment.f_pro, cfg.spin.gamma_e_rad_per_s_per_tesla)
        fringe = fit_fringe_scan(drives, signal, spacing)
        slope = fringe.max_slope
    test_bin = None if args.scan else cfg.analysis.test_bin_hz
    known = cfg.test_field.level if test_bin is not None else None
    result = sensitivity_spectrum(
        [s.combined for s in streams],
        rate,
        test_bin_hz=test_bin,
        known_rms=known,
        slope=slope,
        band=_band(cfg, rate),
        notches=cfg.analysis.notches_hz,
        single_acq=single,
    )
    report = result.summary()
    report["calibrated"] = test_bin is not None or slope is not None
    shot = _closed_form_shot(cfg)
    if shot is not None and report["calibrated"]:
        report["closed_form_shot_t_sqrt_s"] = shot
        report["ratio_to_shot_limit"] = result.min_sensitivity / shot
    if fringe is not None:
        report["fringe_fit"] = {**fringe.fit.to_dict(), "kappa_t_per_v": fringe.kappa, "period_v": fringe.period_v}
    unit = "T s^1/2" if report["calibrated"] else "V s^1/2"
    lines = [
        f"acquisitions: {len(streams)} ({result.mode})",
        f"band: {result.band[0]:.1f} .. {result.band[1]:.1f} Hz",
        f"minimum sensitivity: {result.min_sensitivity:.6g} {unit}",
    ]
    if "closed_form_shot_t_sqrt_s" in report:
        lines.append(f"closed-form shot limit: {shot:.6g} T s^1/2 (ratio {report['ratio_to_shot_limit']:.4f})")
    out = _out(args)
    if out:
        spec_path, json_path = out / "spectrum.csv", out / "sensitivity.json"
        check_new([spec_path, json_path], args.force)
        asd = result.asd
        mask = np.zeros(asd.freqs.size, dtype=bool)
        pos = asd.freqs > 0
        mask[pos] = band_mask(asd, _band(cfg, rate))
        write_csv(spec_path, ["frequency_hz", "value", "in_band"], zip(asd.freqs, asd.values, mask.astype(int)), args.force)
        write_json(json_path, {**report, "manifest": _manifest(args, cfg, cfg_hash, {"files": [str(f) for f in args.files]})}, args.force)
    _emit(args, report, lines)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, cfg_hash = load_config(args.config)
    sw = cfg.require("sweep")
    spec = cfg.sequence_spec()
    if not spec.kind.is_interferometric:
        raise ConfigError("sweep needs an FID, Ramsey or Hahn sequence", key="sequence.kind")
    taus = np.linspace(sw.tau_start_s, sw.tau_stop_s, sw.n_points)
    seed = _seed(args, cfg)
    out = _out(args)
    if out:
        check_new([out / "trace.csv", out / "fits.json"], args.force)
    trace = simulate_sweep(
        spec, cfg.environment_model(), cfg.response(), taus, cfg.noise_config(), sw.shots_per_point, seed, cfg.detector_params()
    )
    fits = {}
    failures = {}
    for name, fix in (("fixed_p", 1.0), ("free_p", None)):
        try:
            fits[name] = fit_decaying_sinusoid(trace.taus, trace.signal, fix_p=fix).to_dict()
        except NumericalError as exc:
            failures[name] = str(exc)
    report = {"fits": fits, "failures": failures, "n_points": int(taus.size), "kind": spec.kind.value, "basis": spec.basis.value}
    lines = [f"{spec.kind.value} {spec.basis.value} sweep, {taus.size} points"]
    for name, f in fits.items():
        p, e = f["params"], f["errors"]
        lines.append(
            f"  {name:8s} T = {p['T'] * 1e6:.4f}({e['T'] * 1e6:.4f}) us  p = {p['p']:.4f}  f = {p['f'] / 1e3:.4f} kHz  A = {p['A']:.5g}"
        )
    for name, msg in failures.items():
        lines.append(f"  {name:8s} failed: {msg}")
    if out:
        write_csv(out / "trace.csv", ["tau_s", "signal"], zip(trace.taus, trace.signal), args.force)
        write_json(out / "fits.json", {**report, "manifest": _manifest(args, cfg, cfg_hash, {"sequence": spec.to_dict()})}, args.force)
    _emit(args, report, lines)
    return EXIT_NUMERIC if failures else EXIT_OK


def _protocol_inputs(b, timing, dm, decay, contrast, gamma) -> BudgetInputs:
    return BudgetInputs(
        dm,
        contrast,
        timing.decay_time_s or decay,
        timing.tau_s,
        timing.t_overhead_s,
        0.0,
        0.0,
        n_photons=b.n_photons,
        n_avg=b.n_avg,
        n_nv=b.n_nv,
        envelope_contrast=timing.envelope_contrast,
        gamma_e=gamma,
    )


def cmd_budget(args) -> int:
    cfg, cfg_hash = load_config(args.config)
    b = cfg.budget
    gamma = cfg.spin.gamma_e_rad_per_s_per_tesla
    det = cfg.detector_params()
    t_r = cfg.sequence.t_readout_s if cfg.sequence else 10e-6
    ram = _protocol_inputs(b, b.ramsey, 2, b.t2star_dq_p1_s, b.contrast, gamma)
    hahn = _protocol_inputs(b, b.hahn, 2, b.t2_dq_s, b.contrast, gamma)
    report: dict = {"readout": readout_budget(det, t_r).to_dict()}
    report["eta_ramsey_shot_t_sqrt_s"] = ramsey_sensitivity_shot(ram)
    report["eta_hahn_shot_t_sqrt_s"] = hahn_sensitivity_shot(hahn)
    if b.n_avg is not None:
        f, sig = readout_fidelity(b.contrast, b.n_avg)
        report["readout_fidelity"] = {"F": f, "sigma_R": sig}
        if b.n_nv is not None:
            report["eta_ramsey_full_t_sqrt_s"] = ramsey_sensitivity_full(ram)
    t_o = b.ramsey_overhead_s
    sq, dq, dqp1 = (1, b.t2star_sq_s), (2, b.t2star_dq_s), (2, b.t2star_dq_p1_s)
    report["optimal_tau_s"] = {
        "sq": optimal_tau(sq[1], t_o, 1.0, 1)[0],
        "dq": optimal_tau(dq[1], t_o, 1.0, 2)[0],
        "dq_p1": optimal_tau(dqp1[1], t_o, 1.0, 2)[0],
        "hahn_dq": optimal_tau(b.t2_dq_s, b.hahn_overhead_s, 1.0, 2)[0],
        "hahn_dq_p1": optimal_tau(b.t2_dq_p1_s, b.hahn_overhead_s, 1.0, 2)[0],
    }
    report["improvement"] = {
        "sq_to_dq": improvement_ratio(sq, dq, t_o),
        "sq_to_dq_p1": improvement_ratio(sq, dqp1, t_o),
        "hahn_dq_to_dq_p1": improvement_ratio((2, b.t2_dq_s), (2, b.t2_dq_p1_s), b.hahn_overhead_s),
    }
    report["gradient_tolerance_t"] = {
        "sq": gradient_tolerance(b.gradient_decay_time_s, "sq", gamma),
        "dq": gradient_tolerance(b.gradient_decay_time_s, "dq", gamma),
        "decay_time_s": b.gradient_decay_time_s,
    }
    if b.contrast_signals is not None:
        c = contrast_and_init(*b.contrast_signals)
        report["contrast"] = {"C": c.contrast, "kappa_init": c.kappa_init, "saturated": c.saturated}
    r = report["readout"]
    lines = [
        f"readout: sigma_sig = {r['sigma_sig'] * 1e6:.3f} uV, kappa_bal = {r['kappa_bal']:.4f}, "
        f"sigma_tot = {r['sigma_tot'] * 1e3:.5f} mV, inflation = {r['inflation']:.4f}",
        f"eta_Ramsey (shot) = {report['eta_ramsey_shot_t_sqrt_s'] * 1e15:.2f} fT s^1/2",
        f"eta_Hahn (shot)   = {report['eta_hahn_shot_t_sqrt_s'] * 1e15:.2f} fT s^1/2",
    ]
    if "eta_ramsey_full_t_sqrt_s" in report:
        lines.append(f"eta_Ramsey (full) = {report['eta_ramsey_full_t_sqrt_s'] * 1e15:.2f} fT s^1/2")
    if "readout_fidelity" in report:
        lines.append(f"readout fidelity F = {report['readout_fidelity']['F']:.5f}")
    lines.append("optimal tau: " + ", ".join(f"{k} {v * 1e6:.2f} us" for k, v in report["optimal_tau_s"].items()))
    lines.append("improvement: " + ", ".join(f"{k} {v:.3f}x" for k, v in report["improvement"].items()))
    g = report["gradient_tolerance_t"]
    lines.append(f"gradient tolerance at T = {g['decay_time_s'] * 1e6:.1f} us: SQ {g['sq'] * 1e9:.1f} nT, DQ {g['dq'] * 1e9:.1f} nT")
    if "contrast" in report:
        c = report["contrast"]
        lines.append(f"contrast C = {c['C']:.4f}, kappa_I = {c['kappa_init']:.4f}, saturated = {c['saturated']}")
    out = _out(args)
    if out:
        write_json(out / "budget.json", {**report, "manifest": _manifest(args, cfg, cfg_hash, {})}, args.force)
    _emit(args, report, lines)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg, cfg_hash = load_config(args.config)
    cal = cfg.require("calibration")
    f_pro = cfg.environment.f_pro
    gamma = cfg.spin.gamma_e_rad_per_s_per_tesla
    rows = []

    def need(name):
        section = getattr(cal, name)
        if section is None:
            raise ConfigError(f"calibration method '{name}' requested but calibration.{name} is missing", key=f"calibration.{name}")
        return section

    out = _out(args)
    scan_rows = None
    for method in cal.methods:
        if method == "coil":
            c = need("coil")
            k = coil_kappa(c.radius_m, c.turns, c.distance_m, c.attenuation_db, c.series_resistance_ohm)
            rows.append({"method": "coil", "kappa_t_per_v": k})
        elif method == "reference":
            r, c = need("reference"), need("coil")
            k = kappa_from_reference(r.field_tesla, r.drive_v, c.radius_m, r.distance_m, c.distance_m)
            rows.append({"method": "reference", "kappa_t_per_v": k})
        elif method in ("ramsey_fringe", "hahn_fit"):
            fr = need(method)
            spacing = fringe_spacing(fr.tau_s, fr.delta_ms, f_pro, gamma)
            rows.append(
                {"method": method, "kappa_t_per_v": kappa_from_fringe(spacing, fr.period), "fringe_spacing_t": spacing, "period_v": fr.period}
            )
        elif method == "scan":
            sc = need("scan")
            spec = cfg.sequence_spec()
            drives = np.linspace(sc.drive_start_v, sc.drive_stop_v, sc.n_points)
            signal = simulate_fringe_scan(
                spec, cfg.response(), sc.kappa_tesla_per_v, drives, cfg.noise_config(), sc.shots_per_point, _seed(args, cfg), cfg.detector_params(), f_pro
            )
            spacing = fringe_spacing(spec.tau, spec.delta_ms, f_pro, gamma)
            fit = fit_fringe_scan(drives, signal, spacing)
            rows.append(
                {
                    "method": "scan",
                    "kappa_t_per_v": fit.kappa,
                    "configured_kappa_t_per_v": sc.kappa_tesla_per_v,
                    "fringe_spacing_t": spacing,
                    "period_v": fit.period_v,
                    "fit": fit.fit.to_dict(),
                }
            )
            scan_rows = list(zip(drives, signal))
    report = {"methods": rows}
    lines = [f"{'method':<14} {'kappa_nT_per_V':>15} {'fringe_nT':>10} {'period_V':>9}"]
    for r in rows:
        sp = f"{r['fringe_spacing_t'] * 1e9:10.1f}" if "fringe_spacing_t" in r else f"{'':>10}"
        per = f"{r['period_v']:9.4f}" if "period_v" in r else f"{'':>9}"
        lines.append(f"{r['method']:<14} {r['kappa_t_per_v'] * 1e9:15.2f} {sp} {per}")
    if out:
        targets = [out / "calibration.json"] + ([out / "scan.csv"] if scan_rows else [])
        check_new(targets, args.force)
        if scan_rows:
            write_csv(out / "scan.csv", ["drive_v", "signal_v"], scan_rows, args.force)
        write_json(out / "calibration.json", {**report, "manifest": _manifest(args, cfg, cfg_hash, {})}, args.force)
    _emit(args, report, lines)
    return EXIT_OK


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML or JSON run config")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--json", action="store_true", help="print the report as JSON")
    common.add_argument("--force", action="store_true", help="allow overwriting existing outputs")

    parser = argparse.ArgumentParser(prog="nvmagsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("resonances", parents=[common], help="NV and P1 resonance tables").set_defaults(func=cmd_resonances)
    p = sub.add_parser("simulate", parents=[common], help="simulate shot streams")
    p.add_argument("--acquisitions", type=int, default=None, help="number of acquisitions")
    p.set_defaults(func=cmd_simulate)
    sub.add_parser("sweep", parents=[common], help="precession-time sweep and decay fits").set_defaults(func=cmd_sweep)
    p = sub.add_parser("analyze", parents=[common], help="sensitivity spectrum from acquisitions")
    p.add_argument("files", nargs="*", help="acquisition CSV files")
    p.add_argument("--single-acq", action="store_true", help="apply the single-acquisition median correction")
    p.add_argument("--scan", default=None, help="fringe-scan CSV (drive_v, signal_v) for slope calibration")
    p.set_defaults(func=cmd_analyze)
    sub.add_parser("budget", parents=[common], help="closed-form sensitivity budget").set_defaults(func=cmd_budget)
    sub.add_parser("calibrate", parents=[common], help="test-field calibration factors").set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "acquisitions", None) is not None and args.acquisitions < 1:
        parser.error("--acquisitions must be >= 1")
    try:
        return args.func(args)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
