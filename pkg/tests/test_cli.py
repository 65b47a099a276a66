import json
import subprocess
import sys

import numpy as np
import pytest

from mouest import cli
from mouest.errors import ConfigError, FormatError
from mouest.synth import TimeSeries


def _run(argv):
    return cli.run(cli.parse_args(argv))


def test_parse_args_simulate(tmp_path):
    c = tmp_path / "c.toml"
    c.write_text("m = 4\n")
    rc = cli.parse_args(["simulate", "--config", str(c), "--out", str(tmp_path / "out"), "--seed", "7"])
    assert (rc.command, rc.seed, rc.workers) == ("simulate", 7, 1)


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.parse_args(["--help"])
    assert exc.value.code == 0
    assert "sweep-nodes" in capsys.readouterr().out


def test_missing_config_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.parse_args(["sweep-nodes", "--out", str(tmp_path)])
    assert exc.value.code != 0


def test_unknown_flag_rejected(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.parse_args(["simulate", "--config", "x", "--out", str(tmp_path), "--bogus"])
    assert exc.value.code != 0


def test_unreadable_config_is_io_error(tmp_path):
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == cli.EXIT_IO


def test_out_from_environment(tmp_path, monkeypatch):
    c = tmp_path / "c.toml"
    c.write_text("m = 3\nn = 20\n")
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
    assert cli.main(["simulate", "--config", str(c)]) == 0
    assert (tmp_path / "envout" / "series.csv").is_file()


def test_config_errors_exit_2(tmp_path):
    c = tmp_path / "c.toml"
    c.write_text("bogus = 1\n")
    assert _run(["simulate", "--config", str(c), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    c.write_text("m = [\n")
    assert _run(["simulate", "--config", str(c), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    c.write_text("m = 1\n")
    assert _run(["simulate", "--config", str(c), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_numerical_failure_exits_3(tmp_path):
    c = tmp_path / "c.toml"
    # Euler step too coarse for J = -1: the simulation explodes
    c.write_text("m = 2\nn = 5000\neuler_dt = 2.5\nsample_interval = 2.5\ndensity = 0.01\n")
    assert _run(["simulate", "--config", str(c), "--out", str(tmp_path / "o")]) == cli.EXIT_NUMERIC


def test_simulate_estimate_roundtrip(tmp_path):
    c = tmp_path / "sim.toml"
    c.write_text("m = 6\nn = 2000\ndensity = 0.4\n")
    sim = tmp_path / "sim"
    assert _run(["simulate", "--config", str(c), "--out", str(sim), "--seed", "3"]) == 0
    man = json.loads((sim / "manifest.json").read_text())
    assert man["sample_interval"] == 1.0 and man["seed"] == 3 and man["version"]
    X = TimeSeries.from_csv(sim / "series.csv", 1.0)
    assert X.data.shape == (6, 2000)

    e = tmp_path / "est.toml"
    e.write_text('methods = ["bayesian", "lyapunov"]\nmax_iters = 2000\n')
    out = tmp_path / "est"
    assert _run(["estimate", "--config", str(e), "--input", str(sim / "series.csv"), "--truth", str(sim), "--out", str(out)]) == 0
    lines = (out / "estimate.csv").read_text().splitlines()
    assert lines[0].split(",")[:4] == ["method", "m", "accuracy_c", "accuracy_sigma"]
    for line in lines[1:]:
        assert float(line.split(",")[2]) > 0.7


def test_estimate_without_interval_is_format_error(tmp_path):
    TimeSeries(np.random.default_rng(0).normal(size=(3, 50))).to_csv(tmp_path / "s.csv")
    c = tmp_path / "c.toml"
    c.write_text('methods = ["bayesian"]\n')
    base = ["estimate", "--config", str(c), "--input", str(tmp_path / "s.csv"), "--out", str(tmp_path / "o")]
    assert _run(base) == cli.EXIT_IO
    assert _run(base + ["--dt", "1.0"]) == 0


def test_load_timeseries(tmp_path):
    X = TimeSeries(np.random.default_rng(0).normal(size=(3, 20)), 2.0)
    X.to_csv(tmp_path / "s.csv")
    Y = cli.load_timeseries(tmp_path / "s.csv", 2.0)
    assert np.max(np.abs(X.data - Y.data)) <= 1e-12
    (tmp_path / "bad.csv").write_text("node_0\nnan\n1.0\n")
    with pytest.raises(FormatError, match="row 2"):
        cli.load_timeseries(tmp_path / "bad.csv", 1.0)
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(FormatError):
        cli.load_timeseries(tmp_path / "empty.csv", 1.0)
    with pytest.raises(FormatError, match="interval"):
        cli.load_timeseries(tmp_path / "s.csv")


def _bodies(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


@pytest.mark.parametrize("command,body", [
    ("sweep-nodes", "m_values = [5, 6]\nn = 120\nrepeats = 2\nmax_iters = 300\n"),
    ("sweep-samples", "n_values = [100, 150]\nm = 5\nrepeats = 2\nmax_iters = 300\n"),
    ("diagnose", "m_values = [5, 8]\nn = 200\nrepeats = 2\n"),
    ("classify", 'subjects = 3\nsessions = 3\nm = 5\nn = 150\nrepetitions = 3\nmax_iters = 300\n'),
])
def test_rerun_and_manifest_replay_are_byte_identical(tmp_path, command, body):
    c = tmp_path / "c.toml"
    c.write_text(body)
    a, b, r = tmp_path / "a", tmp_path / "b", tmp_path / "r"
    assert _run([command, "--config", str(c), "--out", str(a), "--seed", "11"]) == 0
    assert _run([command, "--config", str(c), "--out", str(b), "--seed", "11"]) == 0
    assert _run([command, "--config", str(a / "manifest.json"), "--out", str(r)]) == 0
    assert _bodies(a) and _bodies(a) == _bodies(b) == _bodies(r)
    # nothing is written outside the output directory
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a", "b", "c.toml", "r"]


def test_csv_headers(tmp_path):
    c = tmp_path / "c.toml"
    c.write_text("m_values = [5]\nn = 100\nrepeats = 1\nmax_iters = 100\n")
    assert _run(["sweep-nodes", "--config", str(c), "--out", str(tmp_path / "o")]) == 0
    head = (tmp_path / "o" / "sweep_nodes.csv").read_text().splitlines()[0]
    assert head == "m,n,method,seed,accuracy_c,accuracy_sigma,imag_ratio,wall_time_ms"
    c.write_text("m_values = [5]\nn = 100\nrepeats = 1\n")
    assert _run(["diagnose", "--config", str(c), "--out", str(tmp_path / "d")]) == 0
    head = (tmp_path / "d" / "diagnose.csv").read_text().splitlines()[0]
    assert head == "m,seed,corr_precision,corr_lagged,corr_lambda,corr_logm,corr_c,imag_ratio"


def test_classify_writes_one_table_per_method(tmp_path):
    c = tmp_path / "c.toml"
    c.write_text('subjects = 3\nsessions = 3\nm = 5\nn = 150\nrepetitions = 4\nmax_iters = 300\n')
    assert _run(["classify", "--config", str(c), "--out", str(tmp_path / "o")]) == 0
    for method in ("lyapunov", "bayesian"):
        lines = (tmp_path / "o" / f"classify_{method}.csv").read_text().splitlines()
        assert lines[0] == "method,repetition,accuracy" and len(lines) == 5


def test_manifest_command_mismatch(tmp_path):
    m = tmp_path / "manifest.json"
    m.write_text(json.dumps({"command": "simulate", "config": {}, "seed": 1}))
    with pytest.raises(ConfigError):
        cli.load_config("diagnose", m)


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "mouest", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "classify" in r.stdout
