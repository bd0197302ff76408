import json
import subprocess
import sys

import pytest

from homlab import cli
from homlab.config import ConfigError, RunConfig
from homlab.optics import Topology
from homlab.tags import TagStream, read_ttag, write_ttag


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_config_defaults_and_tuning():
    cfg = RunConfig.from_dict({})
    assert cfg.optics.topology is Topology.SETUP_B
    assert cfg.optics.mean_photons_per_pulse == pytest.approx(0.1209, rel=1e-3)
    assert [s.label for s in cfg.specs] == ["cross_D1D2", "self_D1"]
    c = RunConfig.from_dict({"interferometer": {"topology": "SETUP_C", "dwell_block_pulses": 5000}})
    assert c.dwell_block_pulses == 5000
    assert [s.label for s in c.specs] == ["peak", "dip"]
    assert c.optics.mean_photons_per_pulse == pytest.approx(0.0602, rel=1e-2)


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"sauce": {}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"detector": {"efficency": 0.4}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"coincidence_specs": [{"channel_a": 0, "channel_b": 1, "delay_ps": 5, "win": 3}]})


def test_config_file(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(
        "source: {mean_photons_per_pulse: 0.2}\n"
        "analyzer: {theta2_deg: -45}\n"
        "detector: {dark_rate_hz: 0}\n"
        "coincidence_specs:\n"
        "  - {channel_a: 0, channel_b: 1, delay_ps: 50000, window_ps: 2000, label: x}\n"
    )
    cfg = RunConfig.load(p)
    assert cfg.optics.mean_photons_per_pulse == 0.2
    assert cfg.optics.theta2_deg == -45
    assert cfg.detector.dark_rate_hz == 0
    assert cfg.specs[0].label == "x" and cfg.specs[0].window_ps == 2000
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        RunConfig.load(p)


def test_oracle_example(capsys):
    code, out, _ = run(capsys, "oracle", "--theta1", 45, "--theta2", 45, "--gamma", 1, "--pairing", "cross")
    assert code == 0
    d = json.loads(out)
    assert d["probability_normalized"] == pytest.approx(0.5, abs=1e-9)
    assert set(d) == {"theta1_deg", "theta2_deg", "gamma", "pairing", "probability_normalized"}


def test_analyze_empty_file(tmp_path, capsys):
    path = tmp_path / "e.ttag"
    write_ttag(TagStream.empty(), path)
    code, out, _ = run(capsys, "analyze", "--tags", path, "--ch-a", 0, "--ch-b", 1,
                       "--delay-ps", 50000, "--window-ps", 2000)
    assert code == 0
    assert json.loads(out)["count"] == 0


def test_simulate_analyze_histogram(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("interferometer: {topology: SETUP_C}\n")
    tags = tmp_path / "c.ttag"
    code, out, _ = run(capsys, "simulate", "--config", cfg, "--dx-mm", 0, "--pulses", 500_000,
                       "--seed", 3, "--out", tags)
    assert code == 0
    info = json.loads(out)
    assert info["duration_ps"] == 500_000 * 50_000
    stream = read_ttag(tags)
    assert len(stream) == info["tags"]["0"]

    code, out, _ = run(capsys, "analyze", "--tags", tags, "--ch-a", 0, "--delay-ps", 125_000,
                       "--window-ps", 4000, "--self", "--duration-ps", info["duration_ps"])
    d = json.loads(out)
    assert code == 0 and d["count"] > 0
    assert d["rate_hz"] == pytest.approx(d["count"] / 0.025)

    code, out, _ = run(capsys, "histogram", "--tags", tags, "--ch-a", 0, "--self", "--bin-ps", 25_000,
                       "--range-ps", 250_000, "--start-ps", 12_500)
    rows = out.strip().splitlines()
    assert rows[0] == "bin_start_ps,count"
    assert len(rows) == 11
    # bin centred on the 25 ns slot spacing is blanked by the dead time
    assert rows[1] == "12500,0"
    assert int(rows[2].split(",")[1]) > 0


def test_scan_fit_round_trip(tmp_path, capsys):
    csv_path = tmp_path / "f.csv"
    code, out, _ = run(capsys, "scan", "--points", 9, "--dx-min", -1.5, "--dx-max", 1.5,
                       "--pulses-per-point", 300_000, "--seed", 2, "--out", csv_path)
    assert code == 0
    assert csv_path.read_text().splitlines()[0] == "label,dx_mm,count,duration_ps"
    code, out, _ = run(capsys, "fit", "--fringe", csv_path, "--label", "cross_D1D2")
    assert code == 0
    d = json.loads(out)
    assert d["label"] == "cross_D1D2" and "visibility" in d


def test_usage_errors_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 2 and "usage" in err
    code, _, err = run(capsys, "oracle", "--theta1", "x", "--gamma", "1", "--error-json")
    assert code == 2 and json.loads(err)["error"] == "UsageError"
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense: {}\n")
    code, _, err = run(capsys, "scan", "--config", bad, "--out", tmp_path / "o.csv", "--error-json")
    assert code == 2
    assert json.loads(err)["error"] == "ConfigError"


def test_runtime_errors_exit_1(tmp_path, capsys):
    junk = tmp_path / "junk.ttag"
    junk.write_bytes(b"NOPE" + bytes(28))
    code, _, err = run(capsys, "analyze", "--tags", junk, "--delay-ps", 1, "--error-json")
    assert code == 1
    assert json.loads(err)["error"] == "BadMagicError"
    code, _, err = run(capsys, "analyze", "--tags", tmp_path / "missing.ttag", "--delay-ps", 1)
    assert code == 1 and "error" in err


def test_threads_env_fallback(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("HOMLAB_THREADS", "3")
    outs = []
    for extra in ([], ["--threads", "1"]):
        path = tmp_path / f"t{len(outs)}.ttag"
        code, _, _ = run(capsys, "simulate", "--dx-mm", 0.1, "--pulses", 200_000, "--seed", 9,
                         "--out", path, *extra)
        assert code == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    monkeypatch.setenv("HOMLAB_THREADS", "many")
    code, _, _ = run(capsys, "simulate", "--dx-mm", 0, "--pulses", 10, "--out", tmp_path / "x.ttag")
    assert code == 2


def test_selftest_passes(capsys):
    code, out, _ = run(capsys, "selftest")
    assert code == 0
    assert out.count("PASS") == 2


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "homlab.cli", "oracle", "--theta1", "45", "--gamma", "1", "--pairing", "self"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["probability_normalized"] == pytest.approx(1.5, abs=1e-9)
