"""End-to-end checks of the command-line pipeline.

Everything runs in-process through main(argv) for speed; one subprocess
test covers the argparse usage-error path.
"""

import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from xiloss.calibrate import Calibration, PowerLawFit
from xiloss.cli import main
from xiloss.inference import LossModel, sample_p1
from xiloss.io import load_qdataset, read_spectrum_csv, save_calibration, save_qdataset
from xiloss.spectra import QDataset
from xiloss.stack import StackSpec


def _law(a, b):
    return PowerLawFit(a, b, 0.01, 0.01, 0.999, 4)


@pytest.fixture(scope="module")
def toy_inputs(tmp_path_factory):
    """Calibration file plus a sampled dataset with known truth."""
    root = tmp_path_factory.mktemp("toy")
    cal = Calibration(
        mu_law=_law(5.9, -0.22),
        s_law=_law(0.4, -0.59),
        dn_law=_law(0.22, -0.55),
        reference=StackSpec(sample_length_um=100.0),
        xi_over_l_grid=(0.03, 0.06, 0.12, 0.24),
        realizations=400,
        q_realizations=60,
        master_seed=0,
        wavelength_nm=950.0,
        lambda_range_nm=(940.0, 960.0),
    )
    cal_path = root / "cal.json"
    save_calibration(cal_path, cal)
    q = sample_p1(80, 0.1, LossModel.single(500.0), cal, seed=5)
    ds = QDataset(
        tuple((float(v), float(0.01 * v)) for v in q),
        0.1, (940.0, 960.0), 100.0,
    )
    ds_path = root / "ds.json"
    save_qdataset(ds_path, ds)
    return str(cal_path), str(ds_path)


def _read_tree(path):
    out = {}
    for name in sorted(os.listdir(path)):
        with open(os.path.join(path, name), "rb") as fh:
            out[name] = fh.read()
    return out


SIM_ARGS = [
    "--realizations", "2", "--points", "16", "--sample-length-um", "20",
    "--delta-n", "0.2", "--seed", "3",
]


def test_simulate_reruns_are_byte_identical(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["simulate", "--out", a, *SIM_ARGS]) == 0
    assert main(["simulate", "--out", b, *SIM_ARGS]) == 0
    ta, tb = _read_tree(a), _read_tree(b)
    assert sorted(ta) == ["manifest.json", "scan_0000.csv", "scan_0001.csv"]
    assert ta == tb


def test_simulate_workers_do_not_change_bytes(tmp_path):
    a, b = str(tmp_path / "w1"), str(tmp_path / "w8")
    assert main(["simulate", "--out", a, "--workers", "1", *SIM_ARGS]) == 0
    assert main(["simulate", "--out", b, "--workers", "8", *SIM_ARGS]) == 0
    assert _read_tree(a) == _read_tree(b)


def test_simulate_zero_realizations_is_usage_error(tmp_path, capsys):
    code = main(["simulate", "--out", str(tmp_path), "--realizations", "0"])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ParameterDomainError"
    assert err["exit_code"] == 2


def test_simulate_ldos_observable(tmp_path):
    out = str(tmp_path)
    assert main([
        "simulate", "--out", out, "--observable", "ldos",
        "--realizations", "1", "--points", "8", "--sample-length-um", "15",
        "--delta-n", "0.2",
    ]) == 0
    scan = read_spectrum_csv(os.path.join(out, "scan_0000.csv"), kind="ldos")
    assert scan.values.shape == (8,)
    assert np.all(scan.values > 0)


def test_manifest_echoes_effective_config(tmp_path):
    out = str(tmp_path)
    main(["simulate", "--out", out, *SIM_ARGS])
    doc = json.load(open(os.path.join(out, "manifest.json")))
    assert doc["subcommand"] == "simulate"
    assert doc["realizations"] == 2
    assert doc["delta_n"] == 0.2
    assert doc["toolkit"] == "xiloss"
    assert "timestamp" not in " ".join(doc)


def test_config_file_flags_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "realizations = 2\npoints = 16\ndelta_n = 0.2\n"
        "sample_length_um = 20\nunrelated_key = 7\n"
    )
    out = str(tmp_path / "o")
    assert main([
        "simulate", "--out", out, "--config", str(cfg), "--points", "12",
    ]) == 0
    doc = json.load(open(os.path.join(out, "manifest.json")))
    assert doc["points"] == 12  # flag beats config file
    assert doc["realizations"] == 2  # config beats default
    assert "unrelated_key" not in doc


def test_output_dir_from_environment(tmp_path, monkeypatch):
    target = tmp_path / "envout"
    monkeypatch.setenv("XILOSS_OUT", str(target))
    assert main(["simulate", *SIM_ARGS]) == 0
    assert (target / "manifest.json").exists()


def test_calibrate_rejects_short_grid(tmp_path, capsys):
    code = main([
        "calibrate", "--out", str(tmp_path), "--grid", "0.1,0.2",
    ])
    assert code == 2
    assert json.loads(capsys.readouterr().err)["error"] == "ParameterDomainError"


def test_synth_writes_truth_and_scans(tmp_path):
    out = str(tmp_path)
    assert main([
        "synth", "--out", out, "--mode-count", "3", "--seed", "11",
        "--q-min", "300", "--q-max", "1500", "--sample-length-um", "15",
        "--z-step-um", "5",
    ]) == 0
    truth = json.load(open(os.path.join(out, "truth.json")))
    assert len(truth["modes"]) == 3
    assert all(300 <= m["q"] <= 1500 for m in truth["modes"])
    with open(os.path.join(out, "scans.csv")) as fh:
        assert fh.readline() == "position_um,wavelength_nm,counts\n"


def test_synth_then_extract_recovers_modes(tmp_path):
    synth_out = str(tmp_path / "s")
    ext_out = str(tmp_path / "e")
    args = [
        "synth", "--out", synth_out, "--mode-count", "3", "--seed", "11",
        "--q-min", "300", "--q-max", "1500", "--sample-length-um", "15",
        "--z-step-um", "5", "--noise-rms", "0.01",
    ]
    assert main(args) == 0
    assert main([
        "extract", os.path.join(synth_out, "scans.csv"), "--out", ext_out,
        "--irf-fwhm-nm", "0.05", "--delta-label", "0.1",
        "--sample-length-um", "15",
    ]) == 0
    ds = load_qdataset(os.path.join(ext_out, "qdataset.json"))
    truth = json.load(open(os.path.join(synth_out, "truth.json")))
    extracted = sorted(q for q, _ in ds.q_values)
    # every true mode has an extracted Q within 25 percent
    for mode in truth["modes"]:
        rel = min(abs(q - mode["q"]) / mode["q"] for q in extracted)
        assert rel < 0.25
    doc = json.load(open(os.path.join(ext_out, "manifest.json")))
    assert doc["mode_count"] == len(ds.q_values)
    assert doc["excluded_resolution_limited"] >= 0
    with open(os.path.join(ext_out, "modes.csv")) as fh:
        assert fh.readline() == "center_nm,q,z_m_um,member_count\n"
        assert len(fh.readlines()) == len(ds.q_values)


def test_extract_malformed_csv_names_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("position_um,wavelength_nm,counts\n0,940,oops\n")
    code = main(["extract", str(bad), "--out", str(tmp_path / "o")])
    assert code == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "DataError"
    assert "bad.csv:2" in err["message"]


def test_infer_prints_map_line_and_writes_files(tmp_path, capsys, toy_inputs):
    cal_path, ds_path = toy_inputs
    out = str(tmp_path)
    assert main([
        "infer", "--dataset", ds_path, "--calibration", cal_path,
        "--out", out, "--xi-grid", "5,20,32", "--l-grid", "250,1000,32",
    ]) == 0
    line = capsys.readouterr().out.strip()
    doc = json.loads(line)
    assert doc["variant"] == "single"
    assert 5.0 <= doc["xi_um"] <= 20.0
    with open(os.path.join(out, "map.json")) as fh:
        assert fh.read() == line + "\n"
    for name in ("posterior.json", "posterior_slices.csv", "manifest.json"):
        assert os.path.exists(os.path.join(out, name))


def test_infer_permuted_dataset_same_map(tmp_path, toy_inputs):
    cal_path, ds_path = toy_inputs
    ds = load_qdataset(ds_path)
    shuffled = QDataset(
        tuple(reversed(ds.q_values)), ds.delta_label,
        ds.lambda_range_nm, ds.sample_length_um,
    )
    ds2_path = tmp_path / "shuffled.json"
    save_qdataset(ds2_path, shuffled)
    grids = ["--xi-grid", "5,20,24", "--l-grid", "250,1000,24"]
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    main(["infer", "--dataset", ds_path, "--calibration", cal_path,
          "--out", a, *grids])
    main(["infer", "--dataset", str(ds2_path), "--calibration", cal_path,
          "--out", b, *grids])
    with open(os.path.join(a, "map.json"), "rb") as fa:
        with open(os.path.join(b, "map.json"), "rb") as fb:
            assert fa.read() == fb.read()


def test_infer_distributed_writes_loss_table(tmp_path, capsys, toy_inputs):
    cal_path, ds_path = toy_inputs
    out = str(tmp_path)
    assert main([
        "infer", "--dataset", ds_path, "--calibration", cal_path,
        "--out", out, "--model", "distributed",
        "--xi-grid", "5,20,16", "--mu-l-grid", "250,1000,12",
        "--s-l-grid", "0.05,1.0,8", "--nodes", "48",
    ]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["variant"] == "distributed"
    assert doc["mean_loss_um"] > 0
    table = os.path.join(out, "loss_distribution.csv")
    with open(table) as fh:
        assert fh.readline().startswith("# mean_loss_um =")


def test_intensity_from_map_and_overrides(tmp_path, toy_inputs):
    cal_path, ds_path = toy_inputs
    inf_out = str(tmp_path / "inf")
    main(["infer", "--dataset", ds_path, "--calibration", cal_path,
          "--out", inf_out, "--xi-grid", "5,20,16", "--l-grid",
          "250,1000,16"])
    out = str(tmp_path / "int")
    assert main([
        "intensity", "--map", os.path.join(inf_out, "map.json"),
        "--calibration", cal_path, "--out", out,
        "--realizations", "2", "--wavelength-points", "16",
        "--sample-length-um", "25", "--z-step-um", "1.0", "--bins", "12",
        "--svg",
    ]) == 0
    for name in ("intensity_hist.csv", "ldos_hist.csv", "survival.csv",
                 "fluctuations.svg", "manifest.json"):
        assert os.path.exists(os.path.join(out, name))
    doc = json.load(open(os.path.join(out, "manifest.json")))
    # delta_n derived through the calibration law from the MAP xi
    xi = json.loads(open(os.path.join(inf_out, "map.json")).readline())["xi_um"]
    expected = 0.22 * (xi / 25.0) ** -0.55
    assert math.isclose(doc["derived_delta_n"], expected, rel_tol=1e-12)
    with open(os.path.join(out, "survival.csv")) as fh:
        assert fh.readline() == "kind,abscissa,survival\n"
        assert len(fh.readlines()) == 6


def test_intensity_free_space_override(tmp_path, toy_inputs):
    cal_path, ds_path = toy_inputs
    inf_out = str(tmp_path / "inf")
    main(["infer", "--dataset", ds_path, "--calibration", cal_path,
          "--out", inf_out, "--xi-grid", "5,20,8", "--l-grid",
          "250,1000,8"])
    out = str(tmp_path / "int")
    # index-matched lossless stack: every normalized sample is exactly 1
    assert main([
        "intensity", "--map", os.path.join(inf_out, "map.json"),
        "--calibration", cal_path, "--out", out,
        "--mean-index", "1.0", "--delta-n", "0", "--loss-length-um", "inf",
        "--surround-index", "1.0",
        "--realizations", "2", "--wavelength-points", "16",
        "--sample-length-um", "20", "--z-step-um", "2.0", "--bins", "12",
        "--lambda-min-nm", "949.9", "--lambda-max-nm", "950.1",
    ]) == 0
    rows = []
    with open(os.path.join(out, "intensity_hist.csv")) as fh:
        fh.readline()
        for line in fh:
            left, right, density = (float(p) for p in line.split(","))
            if density > 0:
                rows.append((left, right))
    assert 1 <= len(rows) <= 2
    for left, right in rows:
        assert left <= 1.0 + 1e-3 and right >= 1.0 - 1e-3


def test_unknown_subcommand_usage_error():
    proc = subprocess.run(
        [sys.executable, "-m", "xiloss.cli", "bogus"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2


def test_version_flag():
    proc = subprocess.run(
        [sys.executable, "-m", "xiloss.cli", "--version"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.strip() == "0.1.0"
