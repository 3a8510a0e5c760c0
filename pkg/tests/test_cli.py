import json

import pytest
from click.testing import CliRunner

from hawkes_cpd.cli import cli
from hawkes_cpd.events import load_events

ARGS = ["--window-length", "2000", "--workers", "1"]


def _run(*args):
    return CliRunner().invoke(cli, [str(a) for a in args], catch_exceptions=False)


@pytest.fixture(scope="module")
def pipeline_out(regime_csv, tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    res = _run("pipeline", regime_csv, out, *ARGS, "--emit-intermediate")
    return res, out


def test_pipeline_reports_changes_with_exit_2(pipeline_out):
    res, out = pipeline_out
    assert res.exit_code == 2, res.output
    assert "change at window 15" in res.output
    payload = json.loads((out / "changes.json").read_text())
    assert payload["changes"] == [15] and payload["seed"] == 0
    assert payload["config"]["window"] == {"length": 2000.0, "stride": 2000.0, "origin": 0.0}


def test_rerun_from_artifact_is_byte_identical(pipeline_out, regime_csv, tmp_path):
    _, out = pipeline_out
    res = _run("pipeline", regime_csv, tmp_path, "--config", out / "changes.json")
    assert res.exit_code == 2
    assert (tmp_path / "changes.json").read_bytes() == (out / "changes.json").read_bytes()


def test_detect_from_snapshots(pipeline_out, tmp_path):
    _, out = pipeline_out
    res = _run("detect", out / "snapshots.json", tmp_path)
    assert res.exit_code == 2
    assert json.loads((tmp_path / "changes.json").read_text())["changes"] == [15]


def test_detect_on_events_runs_pipeline(regime_csv, tmp_path):
    res = _run("detect", regime_csv, tmp_path, *ARGS)
    assert res.exit_code == 2
    assert (tmp_path / "events_per_window.tsv").exists()


def test_no_change_exits_0(tmp_path):
    events = tmp_path / "poisson.csv"
    params = tmp_path / "params.json"
    seg = {"duration": 20000.0, "mu": [0.5, 0.5], "alpha": [[0.0, 0.0], [0.0, 0.0]], "beta": 1.0}
    params.write_text(json.dumps({"segments": [seg]}))
    assert _run("simulate", events, "--params", params, "--seed", 3).exit_code == 0
    res = _run("pipeline", events, tmp_path / "out", "--window-length", "1000", "--W", "1.0")
    assert res.exit_code == 0, res.output
    assert "no change detected" in res.output


def test_simulate_sidecar(tmp_path):
    out = tmp_path / "sim.jsonl"
    res = _run("simulate", out, "--dim", 3, "--segments", 2, "--segment-length", 500, "--seed", 1)
    assert res.exit_code == 0
    meta = json.loads((tmp_path / "sim.jsonl.meta.json").read_text())
    assert meta["change_times"] == [500.0] and meta["dim"] == 3 and meta["horizon"] == 1000.0
    stream = load_events(out)
    assert stream.n_events == meta["n_events"]
    again = tmp_path / "again.jsonl"
    _run("simulate", again, "--dim", 3, "--segments", 2, "--segment-length", 500, "--seed", 1)
    assert again.read_bytes() == out.read_bytes()


def test_toml_config_with_flag_override(regime_csv, tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text('seed = 4\nW = 1.5\n[window]\nlength = 2000\nstride = 2000\n[cp]\nalpha = 0.01\nbootstrap_samples = 200\n')
    res = _run("pipeline", regime_csv, tmp_path / "out", "--config", cfg, "--alpha", "0.1", "--workers", "1")
    assert res.exit_code in (0, 2), res.output
    config = json.loads((tmp_path / "out" / "changes.json").read_text())["config"]
    assert config["cp"]["alpha"] == 0.1 and config["cp"]["bootstrap_samples"] == 200
    assert config["seed"] == 4 and config["W"] == 1.5


def test_estimate(regime_csv, tmp_path):
    out = tmp_path / "cum.json"
    res = _run("estimate", regime_csv, out, "--window-length", "6000", "--W", "2.0")
    assert res.exit_code == 0
    data = json.loads(out.read_text())
    assert len(data["windows"]) == 10 and data["config"]["W"] == 2.0
    assert {"lambda", "C", "Kc", "W", "T", "window_index"} <= set(data["windows"][0])


def test_ingest_prices(price_fixture, tmp_path):
    out = tmp_path / "ev.csv"
    res = _run("ingest-prices", price_fixture, out, "--threshold", "0.005")
    assert res.exit_code == 0
    assert res.output.splitlines() == ["0\tAAA\t109", "1\tBBB\t106", "2\tCCC\t121"]
    assert load_events(out).counts.tolist() == [109, 106, 121]


@pytest.mark.parametrize(
    "args",
    [
        ["pipeline", "{events}", "{out}"],  # no window length
        ["pipeline", "{events}", "{out}", "--window-length", "2000", "--bogus"],
        ["pipeline", "{events}", "{out}", "--window-length", "2000", "--alpha", "2"],
        ["pipeline", "{events}", "{out}", "--window-length", "1e6"],  # longer than the recording
        ["pipeline", "{missing}", "{out}", "--window-length", "2000"],
        ["frobnicate"],
    ],
)
def test_errors_exit_1(args, regime_csv, tmp_path):
    fill = {"events": regime_csv, "out": tmp_path / "out", "missing": tmp_path / "none.csv"}
    res = _run(*[a.format(**fill) for a in args])
    assert res.exit_code == 1, res.output


def test_malformed_events_exit_1(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("subject,time\n0,2.0\n0,1.0\n")
    res = _run("pipeline", bad, tmp_path / "out", "--window-length", "1")
    assert res.exit_code == 1
    assert "line 3" in res.output
