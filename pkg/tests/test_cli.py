"""Command-line exit codes and outputs."""

import json
import subprocess
import sys

from rhsim.cli import EXIT_CONFIG, EXIT_INSECURE, EXIT_OK, main


def test_verify_secure(tmp_path, capsys):
    out = tmp_path / "v.json"
    assert main(["verify", "--mechanism", "Ideal", "--hc-first", "2000", "--out", str(out)]) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["secure"] and rep["max_exposure"] == 1999


def test_verify_insecure(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"mechanism_params": {"PARA": {"p": 0.001}}}))
    code = main(["verify", "--mechanism", "PARA", "--hc-first", "200", "--trials", "50",
                 "--target", "0", "--config", str(cfg), "--out", str(tmp_path / "v.json")])
    assert code == EXIT_INSECURE


def test_config_errors(tmp_path, capsys):
    assert main(["verify", "--mechanism", "TWiCe", "--hc-first", "128"]) == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": True}))
    assert main(["sweep", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["characterize", "--profile", "no-such-profile"]) == EXIT_CONFIG
    assert main(["simulate", str(tmp_path / "missing.trace")]) == EXIT_CONFIG


def test_gen_trace_and_simulate(tmp_path):
    t = tmp_path / "t.trace.gz"
    assert main(["gen-trace", "--mpki", "50", "--length", "20000", "--out", str(t)]) == EXIT_OK
    a = tmp_path / "a.trace"
    assert main(["gen-trace", "--attack", "double_sided", "--victim", "500", "--length", "3000",
                 "--out", str(a)]) == EXIT_OK
    out = tmp_path / "s.json"
    assert main(["simulate", str(t), str(a), "--mechanism", "Ideal", "--hc-first", "1024",
                 "--out", str(out)]) == EXIT_OK
    res = json.loads(out.read_text())
    assert len(res["cores"]) == 2 and res["controller"]["mitigation_ref"] >= 4


def test_gen_profile_and_characterize(tmp_path):
    p = tmp_path / "p.json"
    assert main(["gen-profile", "--hc-first-min", "7000", "--hc-star", "42000", "--rows", "128",
                 "--worst-pattern", "RS0", "--out", str(p)]) == EXIT_OK
    out = tmp_path / "c.json"
    assert main(["characterize", "--profile", str(p), "--step", "100", "--coverage",
                 "--out", str(out)]) == EXIT_OK
    res = json.loads(out.read_text())
    assert 7000 <= res["hc_first"] < 7100 and abs(sum(res["spatial_histogram"].values()) - 1) < 1e-9


def test_sweep_writes_reports(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"mechanisms": ["Ideal"], "hc_first": [1024],
                               "workload": {"mixes": 1, "cores": 2, "instructions": 2000,
                                            "warmup": 200}}))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o"), "--long"]) == EXIT_OK
    assert {p.name for p in (tmp_path / "o").iterdir()} == {"sweep.csv", "sweep_long.csv",
                                                             "sweep_meta.json"}


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "rhsim", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "verify" in r.stdout
