"""Command-line interface: exit codes, artifacts, determinism."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from skillstream.cli import main
from skillstream.trajectory_store import load_suite

SMALL = ["--objects", "2", "--base", "2", "--lifelong", "2", "--demos", "4"]


@pytest.fixture(scope="module")
def small_suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    assert main(["generate", "--out", str(out), "--seed", "0"] + SMALL) == 0
    return str(out / "suite.json")


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, small_suite):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "cfg.json"
    cfg.write_text(json.dumps({"episodes": 2}))
    code = main(
        ["run", "--config", str(cfg), "--suite", small_suite, "--out", str(out)]
    )
    assert code == 0
    return str(out)


# ---------------------------------------------------------------------------
# generate


def test_generate_suite_loads(small_suite):
    suite = load_suite(small_suite)
    assert len(suite.tasks) == 4
    assert sum(len(t.demos) for t in suite.tasks) == 16


def test_generate_prints_manifest(small_suite, capsys):
    assert small_suite.endswith("suite.json")
    assert os.path.isfile(small_suite)


# ---------------------------------------------------------------------------
# run


def test_run_writes_artifacts(run_dir):
    for name in ("matrix.json", "metrics.json", "log.jsonl", "config.json"):
        assert os.path.isfile(os.path.join(run_dir, name)), name
    assert os.path.isdir(os.path.join(run_dir, "state"))
    with open(os.path.join(run_dir, "metrics.json")) as fh:
        metrics = json.load(fh)
    for key in ("fwt", "nbt", "auc"):
        assert key in metrics


def test_run_repeats_identically(small_suite, run_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"episodes": 2}))
    again = tmp_path / "again"
    assert main(["run", "--config", str(cfg), "--suite", small_suite, "--out", str(again)]) == 0
    for name in ("matrix.json", "metrics.json"):
        with open(os.path.join(run_dir, name)) as fh:
            a = fh.read()
        with open(again / name) as fh:
            b = fh.read()
        assert a == b, name


def test_run_threads_flag_reproduces(small_suite, run_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"episodes": 2}))
    threaded = tmp_path / "threaded"
    code = main(
        ["run", "--config", str(cfg), "--suite", small_suite,
         "--out", str(threaded), "--threads", "3"]
    )
    assert code == 0
    for name in ("matrix.json", "metrics.json"):
        with open(os.path.join(run_dir, name)) as fh:
            a = fh.read()
        with open(threaded / name) as fh:
            b = fh.read()
        assert a == b, name


def test_run_unknown_config_key_exit_1(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"episodes": 2, "wat": 1}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_run_malformed_config_exit_1(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_run_missing_suite_exit_2(tmp_path):
    code = main(
        ["run", "--suite", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]
    )
    assert code == 2


def test_run_extreme_threshold_creates_per_segment_skills(small_suite, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"episodes": 1, "sil_threshold": 1.5}))
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--suite", small_suite, "--out", str(out)]) == 0
    with open(out / "log.jsonl") as fh:
        records = [json.loads(line) for line in fh]
    prev = records[0]["k_current"]
    for rec in records[1:]:
        # above the silhouette ceiling every incoming segment opens a new skill
        assert rec["k_current"] - prev == len(rec["silhouettes"])
        prev = rec["k_current"]


# ---------------------------------------------------------------------------
# eval


def test_eval_saved_run(run_dir, capsys):
    suite_task = "base_pick_1"
    assert main(["eval", "--run", run_dir, "--task", suite_task, "--episodes", "2"]) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["task_id"] == suite_task
    assert 0.0 <= out["success_rate"] <= 1.0


def test_eval_unknown_task_nonzero(run_dir):
    assert main(["eval", "--run", run_dir, "--task", "nope"]) != 0


# ---------------------------------------------------------------------------
# report


def test_report_artifacts(run_dir, capsys):
    assert main(["report", "--run", run_dir]) == 0
    rep = os.path.join(run_dir, "report")
    for name in ("skill_usage.csv", "success_matrix.csv", "metrics_summary.json"):
        assert os.path.isfile(os.path.join(rep, name)), name
    with open(os.path.join(rep, "metrics_summary.json")) as fh:
        summary = json.load(fh)
    assert "auc_over_steps" in summary


def test_report_plot(run_dir):
    pytest.importorskip("matplotlib")
    assert main(["report", "--run", run_dir, "--plot"]) == 0
    assert os.path.isfile(os.path.join(run_dir, "report", "auc_curve.svg"))


def test_report_incomplete_run_exit_3(tmp_path):
    assert main(["report", "--run", str(tmp_path)]) == 3


# ---------------------------------------------------------------------------
# metrics


def test_metrics_from_saved_matrix(run_dir, capsys):
    matrix = os.path.join(run_dir, "matrix.json")
    assert main(["metrics", "--matrix", matrix]) == 0
    base = json.loads(capsys.readouterr().out)
    assert main(["metrics", "--matrix", matrix, "--percent"]) == 0
    pct = json.loads(capsys.readouterr().out)
    assert pct["auc"] == pytest.approx(100 * base["auc"], abs=1e-9)


def test_metrics_nbt_convention_flag(run_dir, capsys):
    matrix = os.path.join(run_dir, "matrix.json")
    assert main(["metrics", "--matrix", matrix]) == 0
    with_final = json.loads(capsys.readouterr().out)
    assert main(["metrics", "--matrix", matrix, "--nbt-exclude-final"]) == 0
    without = json.loads(capsys.readouterr().out)
    assert np.isfinite(with_final["nbt"]) and np.isfinite(without["nbt"])


def test_metrics_missing_matrix_exit_2(tmp_path):
    assert main(["metrics", "--matrix", str(tmp_path / "nope.json")]) == 2


# ---------------------------------------------------------------------------
# console script


def test_console_script_help():
    proc = subprocess.run(["skillstream", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("generate", "run", "eval", "report", "metrics"):
        assert sub in proc.stdout
