import json

import pytest

from oscenergy import __version__
from oscenergy.cli import main, parse_sweep, ConfigError
from oscenergy.sysdata import builtin_system_path, file_digest


def run(*args):
    return main([str(a) for a in args])


def test_analyze_outputs(tmp_path):
    assert run("analyze", "kundur_4mc.json", "--model", "simplified", "--out", tmp_path) == 0
    for f in ("modes.csv", "energy_report.csv", "energy_report.json", "balance_summary.csv",
              "distribution_mode1.csv", "manifest.json"):
        assert (tmp_path / f).exists(), f
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["version"] == __version__
    assert man["input"]["sha256"] == file_digest(builtin_system_path("kundur_4mc"))
    assert man["summary"]["passed"]
    step = next(s for s in man["steps"] if s["name"].endswith("Hz") and "balance" in s["name"])
    assert {"residual", "threshold", "status", "seconds"} <= set(step)
    assert not list(tmp_path.glob(".manifest-*"))


def test_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("analyze", "nyne_16mc", "--out", d, "--dump-matrices") == 0
    for f in a.glob("*.csv"):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name
    assert (a / "matrices" / "A.txt").read_bytes() == (b / "matrices" / "A.txt").read_bytes()


def test_lossy_file_rejected(tmp_path, capsys):
    doc = json.loads(builtin_system_path("kundur_4mc").read_text())
    doc["branches"][0]["r"] = 0.002
    p = tmp_path / "lossy.json"
    p.write_text(json.dumps(doc))
    assert run("analyze", p, "--out", tmp_path / "o") != 0
    assert "lossless network required" in capsys.readouterr().err
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["steps"][-1]["status"] == "ERROR"


def test_env_var_sets_output(tmp_path, monkeypatch):
    monkeypatch.setenv("OSCENERGY_OUT", str(tmp_path / "env_out"))
    assert run("analyze", "kundur_4mc") == 0
    assert (tmp_path / "env_out" / "manifest.json").exists()


def test_verify_simplified_passes(tmp_path):
    assert run("verify", "kundur_4mc", "--out", tmp_path, "--fd") == 0
    text = (tmp_path / "identities.csv").read_text()
    assert "claim1" in text and "FAIL" not in text


def test_verify_load_sweep(tmp_path):
    assert run("verify", "nyne_16mc", "--sweep", "load", "0.9:1.1:5", "--out", tmp_path) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    points = {s["name"].split("]")[0] for s in man["steps"] if s["name"].startswith("[")}
    assert len(points) == 6  # nominal plus five sweep points


def test_verify_refuses_detailed(tmp_path, capsys):
    assert run("verify", "kundur_4mc", "--model", "detailed", "--out", tmp_path) == 2
    assert "simplified model only" in capsys.readouterr().err


def test_verify_negative_control(tmp_path):
    assert run("verify", "kundur_4mc", "--inject-resistance", "0.01", "--out", tmp_path) == 1
    man = json.loads((tmp_path / "manifest.json").read_text())
    failed = [s["name"] for s in man["steps"] if s["status"] == "FAIL"]
    assert any("claim1" in n for n in failed) and any("claim2" in n for n in failed)


def test_single_point_sweep_matches_analyze(tmp_path):
    assert run("analyze", "nyne_16mc", "--out", tmp_path / "a") == 0
    assert run("sweep", "nyne_16mc", "--sweep", "load:1:1:1", "--out", tmp_path / "s") == 0
    a = (tmp_path / "a" / "energy_report.csv").read_bytes()
    s = (tmp_path / "s" / "points" / "point000_energy_report.csv").read_bytes()
    assert a == s


def test_tie_sweep_plot_data(tmp_path):
    args = ["sweep", "kundur_4mc", "--sweep", "tie:433:0:4", "--sending", "1,2", "--receiving", "3,4",
            "--tie", "7,8", "--out", tmp_path, "--workers", "2"]
    assert run(*args) == 0
    pm = json.loads((tmp_path / "plot_manifest.json").read_text())
    assert set(pm) == {"plot_balance.csv", "plot_ratios.csv", "plot_distribution.csv"}
    rows = (tmp_path / "plot_ratios.csv").read_text().splitlines()
    assert len(rows) == 5


@pytest.mark.parametrize("args", [
    ["analyze", "kundur_4mc", "--mode-freq", "3:1"],
    ["analyze", "kundur_4mc", "--tol-balance", "-1"],
    ["analyze", "no_such_system"],
    ["sweep", "kundur_4mc", "--sweep", "tie:1:0:3"],
    ["simulate", "kundur_4mc", "--disturbance", "fault:8:-0.5"],
    ["simulate", "kundur_4mc", "--disturbance", "pulse:all", "--reference", "G9"],
])
def test_config_errors(tmp_path, args):
    assert run(*args, "--out", tmp_path) == 2


def test_simulate_pulse(tmp_path):
    code = run("simulate", "kundur_4mc", "--model", "detailed", "--disturbance", "pulse:all:0.5:0.2:0.01",
               "--t-end", "20", "--out", tmp_path)
    # measured swing torque halves the damping power, so the measured balance check fails
    assert code == 1
    for f in ("trajectory.csv", "trajectory.npz", "mode_estimate.csv", "energy_comparison.csv"):
        assert (tmp_path / f).exists(), f
    man = json.loads((tmp_path / "manifest.json").read_text())
    est = next(s for s in man["steps"] if s["name"] == "mode estimate vs small-signal")
    assert est["status"] == "PASS"


def test_parse_sweep():
    assert parse_sweep("load:0.9:1.1:3").values == pytest.approx((0.9, 1.0, 1.1))
    with pytest.raises(ConfigError):
        parse_sweep("foo:1:2:3")
