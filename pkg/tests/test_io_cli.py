import json
import os
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from reskit import cli
from reskit import io as rio
from reskit.sigmodel import FrequencySweep

SMALL_LADDER = {"kind": "ladder", "ladder": {"powers_dbm": [-80, -70, -60, -50, -40, -30, -4, 2, 5, 8, 10]}}


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_cfg(path, obj):
    path.write_text(json.dumps(obj))
    return path


def validate(doc, name):
    jsonschema.validate(doc, rio.schema(name))


@pytest.fixture
def synth_trace_dir(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "cfg.json", {
        "resonator": {"a": 0.95, "alpha": 0.4, "tau": 35e-9, "phi": 0.12, "q_l": 6e4, "q_c": 9e4, "f_r0": 5.5e9},
        "grid": {"n_points": 401, "span_linewidths": 10},
    })
    code, _, _ = run(["synth", "--config", cfg, "--seed", 1, "--output", tmp_path / "out"], capsys)
    assert code == 0
    return tmp_path / "out"


@pytest.fixture(scope="module")
def ladder_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("ladder")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps(SMALL_LADDER))
    assert cli.main(["synth", "--config", str(cfg), "--seed", "3", "--output", str(d / "out")]) == 0
    return d / "out"


# -- canonical JSON and files -------------------------------------------------------

def test_canonical_json_format():
    text = rio.canonical_json({"b": 0.1, "a": [1, float("nan"), np.float64(1 / 3)], "c": None})
    assert text == '{"a":[1,null,0.33333333333333331],"b":0.10000000000000001,"c":null}\n'


def test_config_hash_ignores_key_order():
    assert rio.config_hash({"a": 1, "b": 2}) == rio.config_hash({"b": 2, "a": 1})


def test_trace_round_trip(tmp_path):
    f = np.linspace(5e9, 5.001e9, 11)
    sw = FrequencySweep(f, np.exp(1j * f / 1e6) * 0.9)
    rio.write_trace(tmp_path / "t.csv", sw)
    back = rio.read_trace(tmp_path / "t.csv")
    assert np.array_equal(back.freqs_hz, sw.freqs_hz)
    assert np.array_equal(back.s21, sw.s21)


@pytest.mark.parametrize("body,needle", [
    ("freq_hz,s21_re,s21_im\n1,0,0\n2,0\n", ":3:"),
    ("freq_hz,s21_re,s21_im\n1,0,0\n2,x,0\n", ":3:"),
    ("freq_hz,s21_re,s21_im\n2,0,0\n1,0,0\n", ":3:"),
    ("f,re,im\n1,0,0\n", ":1:"),
    ("freq_hz,s21_re,s21_im\n1,nan,0\n", ":2:"),
])
def test_read_trace_diagnostics(tmp_path, body, needle):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(rio.InputError, match=needle):
        rio.read_trace(p)


def test_manifest_duplicate_power(tmp_path):
    for n in ("a.csv", "b.csv"):
        (tmp_path / n).write_text("freq_hz,s21_re,s21_im\n1,1,0\n")
    man = {"entries": [{"trace_path": "a.csv", "source_power_dbm": -20},
                       {"trace_path": "b.csv", "source_power_dbm": -20}]}
    (tmp_path / "m.json").write_text(json.dumps(man))
    with pytest.raises(rio.InputError, match="duplicate"):
        rio.load_manifest(tmp_path / "m.json")


def test_manifest_rejects_positive_attenuation(tmp_path):
    (tmp_path / "a.csv").write_text("freq_hz,s21_re,s21_im\n1,1,0\n")
    man = {"entries": [{"trace_path": "a.csv", "source_power_dbm": -20}], "shared": {"attenuation_db": 3}}
    (tmp_path / "m.json").write_text(json.dumps(man))
    with pytest.raises(rio.InputError):
        rio.load_manifest(tmp_path / "m.json")


# -- synth / fitone --------------------------------------------------------------------

def test_synth_fitone_round_trip(synth_trace_dir, capsys):
    code, out, _ = run(["fitone", synth_trace_dir / "trace.csv"], capsys)
    assert code == 0
    doc = json.loads(out)
    validate(doc, "fitone")
    validate(doc["fit"], "fit")
    truth = json.loads((synth_trace_dir / "truth.json").read_text())["params"]
    assert abs(doc["fit"]["q_i"] / truth["q_i"] - 1) < 0.01
    lo, hi = doc["fit"]["q_i_ci95"]
    assert lo < doc["fit"]["q_i"] < hi


def test_synth_manifest_validates(synth_trace_dir):
    validate(json.loads((synth_trace_dir / "manifest.json").read_text()), "manifest")


def test_synth_is_byte_identical(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "cfg.json", {"resonator": {"a": 1, "alpha": 0, "tau": 1e-8, "phi": 0, "q_l": 1e4,
                                                          "q_c": 2e4, "f_r0": 6e9}, "noise_sigma": 0.01})
    for d in ("x", "y"):
        assert run(["synth", "--config", cfg, "--seed", 9, "--output", tmp_path / d], capsys)[0] == 0
    for name in ("trace.csv", "manifest.json", "truth.json"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def test_synth_zero_point_grid(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "cfg.json", {"resonator": {"a": 1, "alpha": 0, "tau": 0, "phi": 0, "q_l": 1e4,
                                                          "q_c": 2e4, "f_r0": 6e9}, "grid": {"n_points": 0}})
    code, _, err = run(["synth", "--config", cfg, "--output", tmp_path], capsys)
    assert code == 2
    assert "point" in err


def test_fitone_outputs_byte_identical(synth_trace_dir, tmp_path, capsys):
    for d in ("r1", "r2"):
        assert run(["fitone", synth_trace_dir / "trace.csv", "--output", tmp_path / d], capsys)[0] == 0
    for name in ("fit.json", "curve.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_fitone_missing_file(tmp_path, capsys):
    code, _, err = run(["fitone", tmp_path / "nope.csv"], capsys)
    assert code == 2
    assert "no such file" in err


def test_fitone_non_monotonic(tmp_path, capsys):
    p = tmp_path / "t.csv"
    p.write_text("freq_hz,s21_re,s21_im\n1,1,0\n3,1,0\n2,1,0\n")
    code, _, err = run(["fitone", p], capsys)
    assert code == 2
    assert ":4:" in err


def test_fitone_non_convergence_is_not_an_error(tmp_path, capsys):
    f = np.linspace(5e9, 5.01e9, 50)
    rio.write_trace(tmp_path / "flat.csv", FrequencySweep(f, np.full(f.size, 0.5 + 0.0j)))
    with np.errstate(all="ignore"):
        code, out, _ = run(["fitone", tmp_path / "flat.csv"], capsys)
    assert code == 0
    assert json.loads(out)["fit"]["converged"] is False


def test_fitone_numerical_failure(tmp_path, capsys):
    f = np.linspace(5e9, 5.01e9, 50)
    rio.write_trace(tmp_path / "zero.csv", FrequencySweep(f, np.zeros(f.size, complex)))
    code, _, err = run(["fitone", tmp_path / "zero.csv"], capsys)
    assert code == 3
    assert "numerical failure" in err


def test_bad_jobs_flag(synth_trace_dir, capsys):
    assert run(["fitone", synth_trace_dir / "trace.csv", "--jobs", 0], capsys)[0] == 2


# -- sweep -----------------------------------------------------------------------------------

def test_sweep_report(ladder_dir, tmp_path, capsys):
    code, out, _ = run(["sweep", ladder_dir / "manifest.json", "--output", tmp_path], capsys)
    assert code == 0
    doc = json.loads(out)
    validate(doc, "sweep")
    assert doc["tls"]["quality_ok"]
    assert doc["powerlaw"] is not None
    assert doc["loss_budget"]["delta_power"] >= 0
    truth = json.loads((ladder_dir / "truth.json").read_text())["spec"]
    assert abs(doc["loss_budget"]["delta_tls"] * truth["q_tls0"] - 1) < 0.05
    assert abs(doc["loss_budget"]["delta_other"] * truth["q_other"] - 1) < 0.05
    assert (tmp_path / "loss_budget.csv").read_text().startswith("component,loss\n")
    assert (tmp_path / "qi_vs_n.csv").is_file()


def test_sweep_all_linear(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "cfg.json", {"kind": "ladder", "ladder": {"powers_dbm": [-80, -70, -60, -50, -40, -30]}})
    assert run(["synth", "--config", cfg, "--output", tmp_path / "lad"], capsys)[0] == 0
    code, out, _ = run(["sweep", tmp_path / "lad" / "manifest.json"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["powerlaw"] is None
    assert any("power-law" in n for n in doc["notes"])


def test_sweep_needs_two_powers(synth_trace_dir, capsys):
    code, _, err = run(["sweep", synth_trace_dir / "manifest.json"], capsys)
    assert code == 2
    assert "2 powers" in err


def test_sweep_duplicate_powers(ladder_dir, tmp_path, capsys):
    man = json.loads((ladder_dir / "manifest.json").read_text())
    man["entries"][1]["source_power_dbm"] = man["entries"][0]["source_power_dbm"]
    for e in man["entries"]:
        e["trace_path"] = str(ladder_dir / e["trace_path"])
    (tmp_path / "m.json").write_text(json.dumps(man))
    code, _, err = run(["sweep", tmp_path / "m.json"], capsys)
    assert code == 2
    assert "duplicate" in err


# -- nonlin -------------------------------------------------------------------------------------------

def test_nonlin_point_estimates_only(ladder_dir, capsys):
    code, out, _ = run(["nonlin", ladder_dir / "manifest.json", "--iterations", 0], capsys)
    assert code == 0
    doc = json.loads(out)
    validate(doc, "nonlin")
    assert doc["per_power"]
    for p in doc["per_power"]:
        assert p["e_star_j"] > 0
        assert p["e_star_ci95_j"] == [None, None]
    assert doc["weighted_e_star_j"] is None


def test_nonlin_reproducible_across_jobs(ladder_dir, tmp_path, capsys):
    outs = []
    for jobs in (1, 2):
        code, out, _ = run(["nonlin", ladder_dir / "manifest.json", "--iterations", 3000, "--seed", 5,
                            "--jobs", jobs], capsys)
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1]
    doc = json.loads(outs[0])
    truth = json.loads((ladder_dir / "truth.json").read_text())["spec"]["e_star"]
    assert abs(doc["weighted_e_star_j"] / truth - 1) < 0.05


def test_nonlin_condensation_section(ladder_dir, tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", {"condensation": {"n0_per_um3_ev": 2.678e10, "t_c_k": 1.0,
                                                           "volume_um3": 16900}})
    code, out, _ = run(["nonlin", ladder_dir / "manifest.json", "--iterations", 0, "--config", cfg], capsys)
    assert code == 0
    assert json.loads(out)["condensation_energy_j"] == pytest.approx(8.245e-13, rel=1e-3)


# -- kinetic / xrd ---------------------------------------------------------------------------------------

def test_kinetic_cli(tmp_path, capsys):
    rows = ["width_um,f_meas_hz,f_design_hz,end_type"]
    for w in (2, 4, 6, 10, 15):
        alpha = 1 / (1 + 0.05 * w)
        rows.append(f"{w},{float(6e9 * np.sqrt(1 - alpha))!r},6e9,open")
    (tmp_path / "k.csv").write_text("\n".join(rows) + "\n")
    code, out, _ = run(["kinetic", tmp_path / "k.csv"], capsys)
    assert code == 0
    doc = json.loads(out)
    validate(doc, "kinetic")
    assert doc["groups"]["open"]["r_squared"] >= 0.999999


def test_kinetic_empty_csv(tmp_path, capsys):
    (tmp_path / "k.csv").write_text("width_um,f_meas_hz,f_design_hz,end_type\n")
    assert run(["kinetic", tmp_path / "k.csv"], capsys)[0] == 2


TABLE_PEAKS = [
    {"label": "b-Ta 221", "center_2theta": 30.1273, "d": 0.2964},
    {"label": "b-Ta 002", "center_2theta": 33.4045, "d": 0.2680, "l_index": 2},
    {"label": "c-TaN 220", "center_2theta": 61.9634, "d": 0.1496},
    {"label": "c-TiN 220", "center_2theta": 62.2340, "d": 0.1491},
    {"label": "b-Ta 004 Ka1", "center_2theta": 69.3937, "d": 0.1353, "l_index": 4},
    {"label": "b-Ta 004 Ka2", "center_2theta": 69.5885, "d": 0.1353, "l_index": 4, "wavelength": "ka2"},
]


def test_xrd_table_rows(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "x.json", {"peaks": [{k: v for k, v in p.items() if k != "d"} for p in TABLE_PEAKS]})
    code, out, _ = run(["xrd", "--config", cfg], capsys)
    assert code == 0
    doc = json.loads(out)
    validate(doc, "xrd")
    for row, want in zip(doc["peaks"], TABLE_PEAKS):
        assert round(row["d_hkl_nm"], 4) == want["d"], row["label"]
    # 2 x the unrounded Bragg spacing; the tabulated 0.2680 gives 0.5360 exactly
    assert doc["peaks"][1]["c_nm"] == pytest.approx(0.5360, abs=1e-4)


def test_xrd_fits_diffractogram(tmp_path, capsys):
    from reskit import xrd
    x = np.linspace(30, 37, 701)
    y = xrd.pseudo_voigt_eval(xrd.PseudoVoigtPeak(900.0, 33.4045, 0.3, 0.2823), x) + 20
    (tmp_path / "d.csv").write_text("two_theta_deg,counts\n" + "".join(f"{a!r},{b!r}\n" for a, b in zip(x.tolist(), y.tolist())))
    cfg = write_cfg(tmp_path / "x.json", {"peaks": [{"center_2theta": 33.3, "fwhm": 0.25, "amplitude": 800,
                                                     "l_index": 2}]})
    code, out, _ = run(["xrd", tmp_path / "d.csv", "--config", cfg], capsys)
    assert code == 0
    row = json.loads(out)["peaks"][0]
    assert row["two_theta_deg"] == pytest.approx(33.4045, abs=1e-6)
    assert row["eta"] == pytest.approx(0.2823, abs=1e-6)


def test_xrd_needs_peaks(capsys):
    assert run(["xrd"], capsys)[0] == 2


# -- backend switch ------------------------------------------------------------------------------------------

def test_env_disables_numba():
    env = dict(os.environ, RESKIT_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from reskit import _accel; print(_accel.USE_NUMBA)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
