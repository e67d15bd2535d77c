"""
reskit command line: synth, fitone, sweep, nonlin, kinetic, xrd.

Exit codes: 0 success (flagged fits included), 2 input error, 3 numerical failure.
"""
import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import io as rio
from . import kinetic, ladder, nonlin, powersweep, respipe, xrd
from .numcore import FitInputError
from .sigmodel import GridSpec, ResonatorParams, beta_for_a_n0, synth_trace

log = logging.getLogger("reskit")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class NumericalFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------

_UNIT_KEYS = {"alpha": "alpha_rad", "phi": "phi_rad", "f_r0": "f_r0_hz", "tau": "tau_s"}


def fit_to_json(fit: respipe.FullFitResult):
    out = {}
    for k in respipe.PARAM_NAMES:
        out[_UNIT_KEYS.get(k, k)] = getattr(fit, k)
    out["tau_s"] = fit.tau
    out["standard_errors"] = {_UNIT_KEYS.get(k, k): v for k, v in fit.standard_errors.items()}
    out.update({
        "dof": fit.dof, "q_i": fit.q_i, "q_i_se": fit.q_i_se, "q_i_ci95": list(fit.q_i_ci),
        "q_c_corrected": fit.q_c_corrected, "converged": fit.converged, "residual_rms": fit.residual_rms,
        "a_n0": fit.a_n0, "flags": list(fit.flags),
    })
    d = fit.diagnostics or {}
    if d:
        c = d["circle"]
        out["diagnostics"] = {
            "snr_db": d["snr_db"], "unwrap_mode": d["unwrap_mode"],
            "tau_linear_s": d["tau"].get("tau_linear", d["tau"]["tau"]),
            "n_background": d["tau"]["n_background"],
            "circle": {"xc": c.xc, "yc": c.yc, "radius": c.radius, "rms_residual": c.rms_residual},
            "phi_geometric_rad": d["phi_geometric"],
        }
    return out


def provenance(cfg, seed):
    return {"config_sha256": rio.config_hash(cfg), "seed": seed, "toolkit_version": __version__}


def _emit(obj, output_dir, name):
    text = rio.canonical_json(obj)
    if output_dir:
        rio.atomic_write_text(Path(output_dir) / name, text)
    sys.stdout.write(text)


def _pipeline_config(cfg):
    keys = set(respipe.PipelineConfig.__dataclass_fields__)
    pc = {k: v for k, v in cfg.get("pipeline", {}).items() if k in keys}
    unknown = set(cfg.get("pipeline", {})) - keys
    if unknown:
        raise rio.InputError(f"unknown pipeline options: {sorted(unknown)}")
    if "exclude_window" in pc and pc["exclude_window"] is not None:
        pc["exclude_window"] = tuple(pc["exclude_window"])
    return respipe.PipelineConfig(**pc)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _resonator_from_cfg(r):
    r = dict(r)
    a_n0 = r.pop("a_n0", None)
    try:
        params = ResonatorParams(**{k: float(v) for k, v in r.items()})
    except TypeError as exc:
        raise rio.InputError(f"resonator config: {exc}") from None
    if a_n0 is not None:
        params = params.with_(beta=beta_for_a_n0(float(a_n0), params.a, params.q_l, params.q_c))
    return params


def cmd_synth(args, cfg):
    out = Path(args.output or ".")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    kind = cfg.get("kind", "trace")
    if kind == "ladder":
        spec_kw = dict(cfg.get("ladder", {}))
        if "powers_dbm" in spec_kw:
            spec_kw["powers_dbm"] = tuple(spec_kw["powers_dbm"])
        spec_kw["seed"] = seed
        if args.atten_db is not None:
            spec_kw["attenuation_db"] = args.atten_db
        if args.temp_k is not None:
            spec_kw["temperature_k"] = args.temp_k
        try:
            spec = ladder.LadderSpec(**spec_kw)
        except TypeError as exc:
            raise rio.InputError(f"ladder config: {exc}") from None
        if spec.n_points < 10:
            raise rio.InputError("grid needs at least 10 points")
        lad = ladder.build_ladder(spec)
        entries = []
        for i, sw in enumerate(lad.sweeps):
            name = f"trace_{i:03d}.csv"
            rio.write_trace(out / name, sw)
            entries.append(rio.ManifestEntry(out / name, sw.source_power_dbm, sw.sweep_direction))
        man = rio.SweepManifest(entries, spec.attenuation_db, spec.temperature_k,
                                resonator_meta=cfg.get("resonator_meta", {}))
        rio.write_json(out / "manifest.json", man.to_json(relative_to=out))
        rio.write_json(out / "truth.json", {"spec": spec.to_dict(), "points": lad.truth_table(),
                                            "provenance": provenance(cfg, seed)})
        sys.stdout.write(rio.canonical_json({"manifest": str(out / "manifest.json"), "n_traces": len(entries)}))
        return EXIT_OK
    if kind != "trace":
        raise rio.InputError(f"unknown synth kind {kind!r}")
    if "resonator" not in cfg:
        raise rio.InputError("synth config needs a 'resonator' section")
    params = _resonator_from_cfg(cfg["resonator"])
    g = cfg.get("grid", {})
    try:
        grid = GridSpec(**g)
    except TypeError as exc:
        raise rio.InputError(f"grid config: {exc}") from None
    if grid.n_points < 1:
        raise rio.InputError("grid needs at least one point")
    try:
        sw = synth_trace(params, grid, noise_sigma=float(cfg.get("noise_sigma", 0.0)), seed=seed,
                         direction=cfg.get("direction", "up"),
                         source_power_dbm=float(cfg.get("source_power_dbm", 0.0)),
                         attenuation_db=args.atten_db if args.atten_db is not None else float(cfg.get("attenuation_db", -75.0)),
                         temperature_k=args.temp_k if args.temp_k is not None else float(cfg.get("temperature_k", 0.015)))
    except ValueError as exc:
        raise rio.InputError(str(exc)) from None
    name = cfg.get("name", "trace") + ".csv"
    rio.write_trace(out / name, sw)
    man = rio.SweepManifest([rio.ManifestEntry(out / name, sw.source_power_dbm, sw.sweep_direction)],
                            sw.attenuation_db, sw.temperature_k, resonator_meta=cfg.get("resonator_meta", {}))
    rio.write_json(out / "manifest.json", man.to_json(relative_to=out))
    truth = {k: getattr(params, k) for k in ("a", "alpha", "tau", "phi", "q_l", "q_c", "f_r0", "beta")}
    truth.update({"q_i": params.q_i, "a_n0": params.a_n0})
    rio.write_json(out / "truth.json", {"params": truth, "provenance": provenance(cfg, seed)})
    sys.stdout.write(rio.canonical_json({"trace": str(out / name), "n_points": len(sw)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# fitone
# ---------------------------------------------------------------------------

def _fit_sweep(sweep, pconf):
    try:
        return respipe.full_pipeline(sweep, pconf)
    except respipe.PipelineError as exc:
        if exc.stage == "input":
            raise rio.InputError(str(exc)) from None
        raise NumericalFailure(str(exc)) from None


def cmd_fitone(args, cfg):
    sweep = rio.read_trace(args.trace, args.power_dbm,
                           args.atten_db if args.atten_db is not None else -75.0,
                           args.temp_k if args.temp_k is not None else 0.015, args.direction)
    fit = _fit_sweep(sweep, _pipeline_config(cfg))
    res = {"schema": "reskit/fitone/v1", "trace": str(args.trace), "source_power_dbm": sweep.source_power_dbm,
           "p_g_w": sweep.p_g_w, "fit": fit_to_json(fit), "provenance": provenance(cfg, args.seed)}
    if args.output:
        z = respipe.remove_delay(sweep, fit.tau)
        model = respipe.z_model_measured(fit.params_vector(), sweep.freqs_hz, z)
        rio.write_csv(Path(args.output) / "curve.csv", ("freq_hz", "z_re", "z_im", "model_re", "model_im"),
                      zip(sweep.freqs_hz, z.real, z.imag, model.real, model.imag))
    _emit(res, args.output, "fit.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep / nonlin
# ---------------------------------------------------------------------------

def _fit_entry(payload):
    man, i, pconf = payload
    sweep = man.load_sweep(i)
    try:
        fit = respipe.full_pipeline(sweep, pconf)
    except respipe.PipelineError as exc:
        return i, None, str(exc)
    return i, fit, None


def _fit_manifest(man, pconf, jobs):
    tasks = [(man, i, pconf) for i in range(len(man.entries))]
    for i in range(len(man.entries)):
        man.load_sweep(i)  # surface malformed input before any fitting
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_fit_entry, tasks))
    else:
        results = [_fit_entry(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    return results


def _records(man, results, threshold):
    recs, failures = [], []
    for i, fit, err in results:
        e = man.entries[i]
        if fit is None:
            failures.append({"index": i, "trace": str(e.trace_path), "error": err})
            continue
        rec = powersweep.TraceFitRecord.build(fit, e.source_power_dbm, man.attenuation_db,
                                              threshold=threshold, z0=man.z0_ohm, zr=man.zr_ohm)
        rec.entry_index = i
        recs.append(rec)
    return recs, failures


def cmd_sweep(args, cfg):
    man = rio.load_manifest(args.manifest)
    if args.atten_db is not None:
        man.attenuation_db = args.atten_db
    temp = args.temp_k if args.temp_k is not None else man.temperature_k
    if len(man.entries) < 2:
        raise rio.InputError("a power sweep needs at least 2 powers")
    results = _fit_manifest(man, _pipeline_config(cfg), args.jobs)
    recs, failures = _records(man, results, args.regime_threshold)
    lin, non = powersweep.split_regimes(recs, args.regime_threshold)
    report = {"schema": "reskit/sweep/v1", "manifest": str(args.manifest),
              "resonator_meta": man.resonator_meta, "failures": failures,
              "regime_threshold": args.regime_threshold, "eval_power_dbm": args.eval_power_dbm,
              "provenance": provenance(cfg, args.seed)}
    report["traces"] = [{"source_power_dbm": r.source_power_dbm, "p_g_w": r.p_g, "n_bar": r.n_bar,
                         "a_n0": r.a_n0, "regime": r.regime, "fit": fit_to_json(r.fit)} for r in recs]
    tls = pl = None
    notes = []
    try:
        tls = powersweep.fit_tls(lin, temperature_k=temp)
        report["tls"] = {"q_tls0": tls.q_tls0, "n_c": tls.n_c, "alpha_tls": tls.alpha_tls, "q_other": tls.q_other,
                         "se": tls.se, "ci95": {k: list(v) for k, v in tls.ci.items()},
                         "temperature_k": tls.temperature_k, "f_r0_hz": tls.f_r0_hz, "dof": tls.dof,
                         "converged": tls.converged, "low_confidence": tls.low_confidence,
                         "quality_ok": powersweep.quality_filter(tls)}
    except (FitInputError, ValueError) as exc:
        notes.append(f"TLS fit unavailable: {exc}")
        report["tls"] = None
    try:
        pl = powersweep.fit_powerlaw(non)
        report["powerlaw"] = {"k": pl.k, "b": pl.b, "c": pl.c, "se": pl.se, "converged": pl.converged,
                              "n_support": list(pl.n_support)}
    except (FitInputError, ValueError) as exc:
        notes.append(f"power-law fit unavailable: {exc}")
        report["powerlaw"] = None
    if tls is not None:
        lb = powersweep.loss_budget(tls, pl, args.eval_power_dbm)
        report["loss_budget"] = {"delta_tls": lb.delta_tls, "delta_other": lb.delta_other,
                                 "delta_power": lb.delta_power, "eval_power_dbm": lb.eval_power_dbm,
                                 "n_bar_eval": lb.n_bar_eval, "extrapolated": lb.extrapolated,
                                 "warnings": lb.warnings}
    else:
        report["loss_budget"] = None
    report["notes"] = notes
    if args.output:
        out = Path(args.output)
        if report["loss_budget"]:
            b = report["loss_budget"]
            rio.write_csv(out / "loss_budget.csv", ("component", "loss"),
                          [("delta_tls", b["delta_tls"]), ("delta_other", b["delta_other"]),
                           ("delta_power", b["delta_power"])])
        rows = []
        for r in recs:
            tls_q = float(tls.q_i(r.n_bar)) if tls is not None else float("nan")
            pl_q = float(pl.q_i(r.n_bar)) if pl is not None and r.n_bar > 1 else float("nan")
            rows.append((r.source_power_dbm, r.n_bar, r.q_i, r.fit.q_i_ci[0], r.fit.q_i_ci[1], r.regime, tls_q, pl_q))
        rio.write_csv(out / "qi_vs_n.csv", ("source_power_dbm", "n_bar", "q_i", "q_i_ci_lo", "q_i_ci_hi", "regime",
                                            "q_i_tls_model", "q_i_powerlaw"), rows)
    _emit(report, args.output, "report.json")
    return EXIT_OK


def cmd_nonlin(args, cfg):
    man = rio.load_manifest(args.manifest)
    if args.atten_db is not None:
        man.attenuation_db = args.atten_db
    results = _fit_manifest(man, _pipeline_config(cfg), args.jobs)
    recs, failures = _records(man, results, args.regime_threshold)
    seed = args.seed if args.seed is not None else 0
    per = []
    for r in recs:
        if r.regime != powersweep.NONLINEAR:
            continue
        sweep = man.load_sweep(r.entry_index)
        z = respipe.remove_delay(sweep, r.fit.tau)
        ex = nonlin.extract_nonlinearity(r.fit, r.p_g, sweep.freqs_hz, z, iterations=args.iterations,
                                         seed=[seed, r.entry_index], jobs=args.jobs)
        per.append({"source_power_dbm": r.source_power_dbm, "p_g_w": r.p_g, "available": ex.available,
                    "e_star_j": ex.e_star, "e_star_ci95_j": list(ex.e_star_ci), "a_n0": ex.a_n0,
                    "a_n0_ci95": list(ex.a_n0_ci), "e_star_per_photon": ex.e_star_per_photon,
                    "note": ex.note})
    report = {"schema": "reskit/nonlin/v1", "manifest": str(args.manifest), "iterations": args.iterations,
              "per_power": per, "failures": failures, "provenance": provenance(cfg, seed)}
    usable = [p for p in per if p["available"] and all(np.isfinite(p["e_star_ci95_j"]))]
    if usable:
        w = nonlin.weighted_e_star([p["e_star_j"] for p in usable],
                                   [p["e_star_ci95_j"][1] - p["e_star_ci95_j"][0] for p in usable])
        report["weighted_e_star_j"] = w["e_star"]
        report["weighted_e_star_ci_width_j"] = w["ci_width"]
    else:
        report["weighted_e_star_j"] = None
        report["weighted_e_star_ci_width_j"] = None
    cond = cfg.get("condensation")
    if cond:
        try:
            ec = nonlin.condensation_energy(nonlin.CondensationInputs(
                float(cond["n0_per_um3_ev"]), float(cond["t_c_k"]), float(cond["volume_um3"])))
        except (KeyError, ValueError) as exc:
            raise rio.InputError(f"condensation config: {exc}") from None
        report["condensation_energy_j"] = ec
        if report["weighted_e_star_j"] is not None:
            report["e_star_over_e_cond"] = report["weighted_e_star_j"] / ec
    _emit(report, args.output, "nonlin.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# kinetic / xrd
# ---------------------------------------------------------------------------

def cmd_kinetic(args, cfg):
    path = Path(args.points)
    if not path.is_file():
        raise rio.InputError(f"{path}: no such file")
    pts = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"width_um", "f_meas_hz", "f_design_hz", "end_type"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise rio.InputError(f"{path}:1: header must contain {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                pts.append(kinetic.WidthFrequencyPoint(float(row["width_um"]), float(row["f_meas_hz"]),
                                                       float(row["f_design_hz"]), row["end_type"].strip()))
            except (ValueError, TypeError) as exc:
                raise rio.InputError(f"{path}:{lineno}: {exc}") from None
    if not pts:
        raise rio.InputError(f"{path}: no data rows")
    try:
        groups = kinetic.fit_inverse_alpha_vs_width(pts)
    except ValueError as exc:
        raise rio.InputError(str(exc)) from None
    res = {"schema": "reskit/kinetic/v1", "groups": groups,
           "points": [{"width_um": p.width_um, "end_type": p.end_type, "alpha_l": p.alpha_l} for p in pts],
           "provenance": provenance(cfg, args.seed)}
    _emit(res, args.output, "kinetic.json")
    return EXIT_OK


_LAMBDA = {"ka1": xrd.CU_KA1_NM, "ka2": xrd.CU_KA2_NM}


def _wavelength(v):
    if v is None:
        return xrd.CU_KA1_NM
    if isinstance(v, str):
        try:
            return _LAMBDA[v.lower()]
        except KeyError:
            raise rio.InputError(f"unknown wavelength {v!r}; use ka1, ka2 or a value in nm") from None
    return float(v)


def cmd_xrd(args, cfg):
    peaks_cfg = cfg.get("peaks")
    if not peaks_cfg:
        raise rio.InputError("xrd config needs a non-empty 'peaks' list")
    fitted = [None] * len(peaks_cfg)
    if args.diffractogram:
        try:
            tt, counts = xrd.read_diffractogram(args.diffractogram)
        except (OSError, ValueError) as exc:
            raise rio.InputError(str(exc)) from None
        init = [xrd.PseudoVoigtPeak(float(p.get("amplitude", 1.0)), float(p["center_2theta"]),
                                    float(p.get("fwhm", 0.2)), float(p.get("eta", 0.5))) for p in peaks_cfg]
        try:
            fitted = xrd.fit_peaks(tt, counts, init, background=cfg.get("background", "linear"))
        except FitInputError as exc:
            raise rio.InputError(str(exc)) from None
    rows = []
    for p, fp in zip(peaks_cfg, fitted):
        center = fp.center_2theta if fp is not None else float(p["center_2theta"])
        lam = _wavelength(p.get("wavelength"))
        d = xrd.bragg_spacing(center, lam)
        row = {"label": p.get("label", ""), "two_theta_deg": center, "wavelength_nm": lam, "d_hkl_nm": d}
        if fp is not None:
            row.update({"eta": fp.eta, "fwhm_deg": fp.fwhm, "amplitude_counts": fp.amplitude,
                        "r_squared": fp.r_squared, "converged": fp.converged})
        l_index = p.get("l_index")
        if l_index is not None:
            c = xrd.c_lattice(d, int(l_index))
            row["c_nm"] = c
            bulk = p.get("d_bulk_nm", {2: xrd.BULK_D002_NM, 4: xrd.BULK_D004_NM}.get(int(l_index)))
            if bulk is not None:
                row["strain_zz"] = xrd.out_of_plane_strain(d, float(bulk))
        rows.append(row)
    _emit({"schema": "reskit/xrd/v1", "peaks": rows, "provenance": provenance(cfg, args.seed)},
          args.output, "xrd.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="reskit", description="Superconducting resonator trace analysis.")
    ap.add_argument("--version", action="version", version=f"reskit {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--output", help="output directory")
    common.add_argument("--atten-db", type=float, default=None)
    common.add_argument("--temp-k", type=float, default=None)
    common.add_argument("--regime-threshold", type=float, default=powersweep.REGIME_THRESHOLD)
    common.add_argument("--eval-power-dbm", type=float, default=10.0)
    common.add_argument("--iterations", type=int, default=100_000)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write synthetic traces and a manifest")
    p = sub.add_parser("fitone", parents=[common], help="fit a single trace")
    p.add_argument("trace")
    p.add_argument("--power-dbm", type=float, default=0.0)
    p.add_argument("--direction", choices=("up", "down"), default="up")
    p = sub.add_parser("sweep", parents=[common], help="power-sweep loss analysis")
    p.add_argument("manifest")
    p = sub.add_parser("nonlin", parents=[common], help="scaling energy and nonlinearity parameter")
    p.add_argument("manifest")
    p = sub.add_parser("kinetic", parents=[common], help="kinetic-inductance fraction vs width")
    p.add_argument("points")
    p = sub.add_parser("xrd", parents=[common], help="diffraction peaks and lattice parameters")
    p.add_argument("diffractogram", nargs="?")
    return ap


COMMANDS = {"synth": cmd_synth, "fitone": cmd_fitone, "sweep": cmd_sweep, "nonlin": cmd_nonlin,
            "kinetic": cmd_kinetic, "xrd": cmd_xrd}


def _setup_logging():
    level = os.environ.get("RESKIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.jobs < 1:
            raise rio.InputError("--jobs must be >= 1")
        if args.iterations < 0:
            raise rio.InputError("--iterations must be >= 0")
        cfg = rio.load_json_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (rio.InputError, FitInputError) as exc:
        print(f"reskit: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"reskit: I/O error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalFailure, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"reskit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
