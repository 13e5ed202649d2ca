#!/usr/bin/env python3
"""Tests for the command line: JSON on stdout, artifacts on disk, exit codes."""
import json
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import pytest  # noqa: E402

from microtrap.cli import main  # noqa: E402
from microtrap.records import read_json, read_record  # noqa: E402

EXPERIMENT = {
    "steps": [
        {"op": "doppler_cool", "duration_us": 2000.0},
        {"op": "optical_pump"},
        {"op": "spec_pulse", "detuning_kHz": 0.0, "duration_us": 1.0, "omega0_kHz": 100.0},
        {"op": "detect"},
    ],
    "scan": {"variable": "duration", "values": [1.0, 2.0, 3.0, 4.0]},
    "shots": 20,
}


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "flop.json").write_text(json.dumps(EXPERIMENT))
    config = {"seed": 5, "sequence_file": "flop.json", "output_dir": "out", "grid": {"field_model": "analytic"}}
    (tmp_path / "run.json").write_text(json.dumps(config))
    return tmp_path


def _stdout_json(capsys):
    return json.loads(capsys.readouterr().out)


def test_run_writes_record(workspace, capsys):
    """run prints a summary and writes the record with its header."""
    assert main(["run", "--config", str(workspace / "run.json")]) == 0
    doc = _stdout_json(capsys)
    assert doc["rows"] == 4
    assert doc["seed"] == 5
    assert doc["variable"] == "duration"
    frame, meta = read_record(doc["record"])
    assert len(frame) == 4
    assert meta["config_hash"] == doc["config_hash"]


def test_run_is_reproducible(workspace, capsys):
    """Same config and seed give byte-identical records; --seed changes them."""
    cfg = str(workspace / "run.json")
    main(["run", "--config", cfg, "--name", "a"])
    main(["run", "--config", cfg, "--name", "b"])
    capsys.readouterr()
    out = workspace / "out"
    assert (out / "a.csv").read_bytes() == (out / "b.csv").read_bytes()
    main(["run", "--config", cfg, "--name", "c", "--seed", "6"])
    assert _stdout_json(capsys)["seed"] == 6


def test_fit_and_report(workspace, capsys):
    """fit writes a report next to the record; report lists both."""
    cfg = str(workspace / "run.json")
    main(["run", "--config", cfg])
    record = _stdout_json(capsys)["record"]
    assert main(["fit", record, "--model", "linear"]) == 0
    fit = _stdout_json(capsys)
    assert fit["model"] == "linear"
    assert fit["config_hash"]
    assert os.path.exists(os.path.join(os.path.dirname(record), "flop.linear.fit.json"))
    assert main(["report", "--config", cfg]) == 0
    summary = _stdout_json(capsys)
    assert [r["file"] for r in summary["records"]] == ["flop.csv"]
    assert summary["fits"] == ["flop.linear.fit.json"]


def test_fit_mismatch_exit_code(workspace, capsys):
    """A heating fit of a duration scan is a FitError (exit 5)."""
    main(["run", "--config", str(workspace / "run.json")])
    record = _stdout_json(capsys)["record"]
    assert main(["fit", record, "--model", "heating"]) == 5
    err = capsys.readouterr().err
    assert "error:" in err


def test_bad_config_exit_code(tmp_path, capsys):
    """Invalid configuration exits with 2 and nothing on stdout."""
    path = tmp_path / "run.json"
    path.write_text('{"grid": {"spacing_um": 0}}')
    assert main(["run", "--config", str(path)]) == 2
    captured = capsys.readouterr()
    assert captured.out == ""
    assert "grid.spacing_um" in captured.err


def test_bad_experiment_exit_code(workspace, tmp_path, capsys):
    """An invalid experiment file exits with 2."""
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"steps": [{"op": "detect"}, {"op": "optical_pump"}]}))
    assert main(["run", "--config", str(workspace / "run.json"), "--sequence", str(bad)]) == 2


def test_waveform_command(workspace, capsys):
    """waveform writes CSV and sidecar with the analytic basis."""
    code = main(
        [
            "waveform",
            "--config",
            str(workspace / "run.json"),
            "--start",
            "21",
            "--end",
            "21",
            "--samples",
            "4",
            "--omega-ax-MHz",
            "0.3",
        ]
    )
    assert code == 0
    doc = _stdout_json(capsys)
    assert doc["samples"] == 4
    assert doc["basis"] == "analytic"
    side = read_json(doc["sidecar"])
    assert side["config_hash"]
    assert side["seed"] == 5


def test_waveform_infeasible_exit_code(workspace, capsys):
    """An unreachable axial frequency exits with 4."""
    args = ["waveform", "--config", str(workspace / "run.json"), "--start", "4", "--end", "4"]
    assert main(args + ["--omega-ax-MHz", "10"]) == 4
    assert "unreachable" in capsys.readouterr().err


def test_waveform_needs_request(workspace):
    """Without a transport request or --start/--end the command is a ConfigError."""
    assert main(["waveform", "--config", str(workspace / "run.json")]) == 2
