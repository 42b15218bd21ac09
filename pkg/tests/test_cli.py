"""CLI behavior: stage commands, exit codes, error reporting."""

import json
import shutil

import numpy as np
import pytest
from click.testing import CliRunner

from confguide.cli import main
from tests.conftest import E2E10, SWEEP19_THRESHOLDS, write_dataset_files


@pytest.fixture()
def runner():
    return CliRunner()


def write_run_config(directory, **extra):
    body = {
        "scores": "scores.csv",
        "labels": "labels.csv",
        "schema": "schema.json",
        "manifest": "manifest.json",
        "out_dir": "out",
        "image_root": ".",
        "alpha": 0.45,
    }
    body.update(extra)
    path = directory / "run.json"
    path.write_text(json.dumps(body), encoding="utf-8")
    return path


@pytest.fixture()
def hand3_config(tmp_path):
    """Three single-positive calibration cases with a 5-point lambda grid."""
    scores = [[0.9, 0.1], [0.6, 0.1], [0.3, 0.1]]
    labels = [[1, 0], [1, 0], [1, 0]]
    write_dataset_files(
        tmp_path,
        scores,
        labels,
        ("A", "B"),
        splits=["calibration"] * 3,
        with_images=False,
    )
    return write_run_config(tmp_path, alpha=0.5, lambda_grid_size=5)


@pytest.fixture()
def sweep19_config(tmp_path):
    n = len(SWEEP19_THRESHOLDS)
    scores = np.zeros((n, 3))
    labels = np.zeros((n, 3), dtype=np.int64)
    for i, t in enumerate(SWEEP19_THRESHOLDS):
        scores[i, 0] = round(1.0 - t, 6)
        labels[i, 0] = 1
    write_dataset_files(
        tmp_path,
        scores,
        labels,
        ("A", "B", "C"),
        splits=["calibration"] * n,
        with_images=False,
    )
    return write_run_config(tmp_path)


@pytest.fixture()
def e2e_config(tmp_path):
    data = tmp_path / "data"
    shutil.copytree(E2E10, data)
    return write_run_config(data, seed=7)


class TestCalibrate:
    def test_hand_case(self, runner, hand3_config):
        result = runner.invoke(main, ["calibrate", "--config", str(hand3_config)])
        assert result.exit_code == 0, result.output
        assert "lambda_hat=0.5" in result.output
        assert "vacuous=False" in result.output

    def test_alpha_override(self, runner, hand3_config):
        result = runner.invoke(
            main, ["calibrate", "--config", str(hand3_config), "--alpha", "1.0"]
        )
        assert result.exit_code == 0
        assert "lambda_hat=0.0" in result.output

    def test_strict_flag_fails_on_vacuous(self, runner, hand3_config):
        # n = 3, so alpha below 1/4 cannot be certified
        result = runner.invoke(
            main,
            ["calibrate", "--config", str(hand3_config), "--alpha", "0.2", "--strict"],
        )
        assert result.exit_code == 1
        assert "vacuous" in result.output

    def test_vacuous_without_strict_succeeds(self, runner, hand3_config):
        result = runner.invoke(
            main, ["calibrate", "--config", str(hand3_config), "--alpha", "0.2"]
        )
        assert result.exit_code == 0
        assert "vacuous=True" in result.output

    def test_missing_dataset_file_fails_with_path(self, runner, tmp_path):
        config = write_run_config(tmp_path)
        result = runner.invoke(main, ["calibrate", "--config", str(config)])
        assert result.exit_code == 1
        assert "scores.csv" in result.output

    def test_missing_config_file_fails(self, runner, tmp_path):
        result = runner.invoke(
            main, ["calibrate", "--config", str(tmp_path / "absent.json")]
        )
        assert result.exit_code == 1
        assert "absent.json" in result.output


class TestSweep:
    def test_alpha_star_selected(self, runner, sweep19_config):
        result = runner.invoke(main, ["sweep", "--config", str(sweep19_config)])
        assert result.exit_code == 0, result.output
        assert "alpha_star=0.45" in result.output
        sweep_csv = sweep19_config.parent / "out" / "sweep.csv"
        selected = [
            line for line in sweep_csv.read_text(encoding="utf-8").splitlines()
            if line.endswith(",1")
        ]
        assert len(selected) == 1
        assert selected[0].startswith("0.45,")

    def test_single_alpha_grid(self, runner, tmp_path, hand3_config):
        body = json.loads(hand3_config.read_text(encoding="utf-8"))
        body["alpha_grid"] = [0.5]
        hand3_config.write_text(json.dumps(body), encoding="utf-8")
        result = runner.invoke(main, ["sweep", "--config", str(hand3_config)])
        assert result.exit_code == 0
        assert "alpha_star=0.5" in result.output

    def test_empty_alpha_grid_fails(self, runner, hand3_config):
        body = json.loads(hand3_config.read_text(encoding="utf-8"))
        body["alpha_grid"] = []
        hand3_config.write_text(json.dumps(body), encoding="utf-8")
        result = runner.invoke(main, ["sweep", "--config", str(hand3_config)])
        assert result.exit_code == 1
        assert "EmptyGrid" in result.output


class TestFullPipeline:
    def test_all_stages_in_order(self, runner, e2e_config):
        for command in ("calibrate", "sweep", "predict", "guide", "simulate", "evaluate"):
            result = runner.invoke(main, [command, "--config", str(e2e_config)])
            assert result.exit_code == 0, f"{command}: {result.output}"
        out = e2e_config.parent / "out"
        for name in (
            "calibration.json",
            "sweep.csv",
            "plateaus.json",
            "sets_crc.jsonl",
            "sets_standard.jsonl",
            "guidance.jsonl",
            "decisions.jsonl",
            "report.json",
            "report.md",
        ):
            assert (out / name).exists(), name

    def test_stage_order_enforced(self, runner, e2e_config):
        result = runner.invoke(main, ["predict", "--config", str(e2e_config)])
        assert result.exit_code == 1
        assert "MissingArtifact" in result.output
        assert "calibrate" in result.output

    def test_guide_second_run_reports_zero_calls(self, runner, e2e_config):
        for command in ("calibrate", "predict"):
            assert runner.invoke(main, [command, "--config", str(e2e_config)]).exit_code == 0
        first = runner.invoke(main, ["guide", "--config", str(e2e_config)])
        assert first.exit_code == 0
        assert "(0 endpoint calls)" not in first.output
        second = runner.invoke(main, ["guide", "--config", str(e2e_config)])
        assert second.exit_code == 0
        assert "(0 endpoint calls)" in second.output

    def test_simulate_and_evaluate_subset(self, runner, e2e_config):
        for command in ("calibrate", "predict", "guide"):
            assert runner.invoke(main, [command, "--config", str(e2e_config)]).exit_code == 0
        sim = runner.invoke(
            main,
            ["simulate", "--config", str(e2e_config), "--configs", "standard,crc"],
        )
        assert sim.exit_code == 0
        assert "(10 new records)" in sim.output
        ev = runner.invoke(
            main,
            ["evaluate", "--config", str(e2e_config), "--configs", "standard,crc"],
        )
        assert ev.exit_code == 0
        report = json.loads(
            (e2e_config.parent / "out" / "report.json").read_text(encoding="utf-8")
        )
        assert [r["config"] for r in report["reports"]] == ["standard", "crc"]

    def test_unknown_config_name_fails(self, runner, e2e_config):
        result = runner.invoke(
            main, ["simulate", "--config", str(e2e_config), "--configs", "bogus"]
        )
        assert result.exit_code == 1
        assert "RangeError" in result.output

    def test_stale_then_force(self, runner, e2e_config):
        for command in ("calibrate", "predict"):
            assert runner.invoke(main, [command, "--config", str(e2e_config)]).exit_code == 0
        scores = e2e_config.parent / "scores.csv"
        text = scores.read_text(encoding="utf-8")
        scores.write_text(text.replace("0.5", "0.4", 1), encoding="utf-8")
        stale = runner.invoke(main, ["predict", "--config", str(e2e_config)])
        assert stale.exit_code == 1
        assert "StaleArtifact" in stale.output
        forced = runner.invoke(main, ["predict", "--config", str(e2e_config), "--force"])
        assert forced.exit_code == 0


class TestHelp:
    def test_group_lists_commands(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for name in ("calibrate", "sweep", "predict", "guide", "simulate", "evaluate", "serve"):
            assert name in result.output

    def test_config_is_required(self, runner):
        result = runner.invoke(main, ["calibrate"])
        assert result.exit_code == 2
        assert "--config" in result.output
