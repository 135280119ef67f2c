import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import examiner as ex
from examiner.harness import (
    ExperimentConfig,
    TrainConfig,
    examine_experiment,
    load_targets,
    run_examination_grid,
    train_experiment,
    weakness_study,
    write_examination,
)
from examiner.reports import read_csv_rows, read_trace_file


def landscape_config(**over):
    base = {
        "target": {"type": "landscape", "name": "three-bump"},
        "examiner": {"kind": "random"},
        "T": 20,
        "seeds": [0, 1],
    }
    base.update(over)
    return ExperimentConfig.from_dict(base)


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory):
    out = tmp_path_factory.mktemp("clf")
    cfg = TrainConfig(m=2, epochs=60, instances_per_class=2)
    clf, metrics = train_experiment(cfg)
    clf.save(out / "classifier.json")
    (out / "metrics.json").write_text(json.dumps({k: v for k, v in metrics.items() if k != "loss_curve"}))
    return out / "classifier.json"


@pytest.fixture(scope="module")
def restricted_checkpoint(tmp_path_factory):
    out = tmp_path_factory.mktemp("clf_r")
    cfg = TrainConfig(
        m=2,
        epochs=60,
        instances_per_class=2,
        restrict={"factor": "foreground_brightness", "lower": 0.6, "upper": 1.0},
    )
    clf, _ = train_experiment(cfg)
    clf.save(out / "classifier.json")
    return out / "classifier.json"


class TestConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ex.InvalidConfigError):
            ExperimentConfig.from_dict({"target": {}, "examiner": {"kind": "rl"}, "Tee": 5})

    def test_bad_examiner_kind(self):
        with pytest.raises(ex.InvalidConfigError):
            landscape_config(examiner={"kind": "annealing"})

    def test_empty_seeds(self):
        with pytest.raises(ex.InvalidConfigError):
            landscape_config(seeds=[])

    def test_bad_rl_option(self):
        cfg = landscape_config(examiner={"kind": "rl", "learnig_rate": 0.1})
        targets = load_targets(cfg.target)
        with pytest.raises(ex.InvalidConfigError):
            run_examination_grid(targets, cfg)


class TestExamineExperiment:
    def test_cells_and_report(self):
        cells, report = examine_experiment(landscape_config())
        assert len(cells) == 2  # 1 instance x 2 seeds
        assert report["n_cells"] == 2
        assert len(report["curve_mean_loss"]) == 20
        recomputed = np.mean([c["trace"].final_loss for c in cells])
        assert report["metrics"]["final_loss_mean"] == pytest.approx(recomputed)

    def test_workers_do_not_change_results(self):
        a = examine_experiment(landscape_config(workers=1))
        b = examine_experiment(landscape_config(workers=2))
        for ca, cb in zip(a[0], b[0]):
            assert np.array_equal(ca["trace"].scenarios, cb["trace"].scenarios)
        assert a[1] == b[1]

    def test_random_examiner_is_standard_metric_stepwise(self):
        # a random examination is exactly N uniform draws evaluated in order
        cfg = landscape_config(T=50, seeds=[3])
        [target] = load_targets(cfg.target)
        cells, _ = examine_experiment(cfg)
        tr = cells[0]["trace"]
        rng = ex.rng_stream(3, "examiner", target.instance_id)
        expect = target.space.uniform(rng, 50)
        assert np.allclose(tr.scenarios, expect, atol=1e-12)
        assert np.array_equal(tr.losses, target.evaluate_batch(tr.scenarios))

    def test_t_checkpoints_table(self):
        cfg = landscape_config(T=30, t_checkpoints=[0, 10, 30])
        _, report = examine_experiment(cfg)
        table = {row["T"]: row for row in report["t_checkpoints"]}
        assert set(table) == {0, 10, 30}
        assert "p_true" in table[0]
        # best-so-far p_true is non-increasing in T under weakness
        assert table[10]["p_true_best"] >= table[30]["p_true_best"] - 1e-15

    def test_prefix_slicing_equals_short_run(self):
        # BO and random (and RL with fixed batch size) are prefix-stable
        for kind, opts in (
            ("random", {}),
            ("bo", {"candidates": 50, "refine_iters": 3}),
            ("rl", {"batch_size": 8, "learning_rate": 0.05}),
        ):
            long_cfg = landscape_config(T=40, seeds=[5], examiner={"kind": kind, **opts})
            short_cfg = landscape_config(T=16, seeds=[5], examiner={"kind": kind, **opts})
            long_cells, _ = examine_experiment(long_cfg)
            short_cells, _ = examine_experiment(short_cfg)
            a = long_cells[0]["trace"].prefix(16)
            b = short_cells[0]["trace"]
            assert np.array_equal(a.scenarios, b.scenarios), kind
            assert np.array_equal(a.losses, b.losses), kind

    def test_shapes_target_traces_carry_correctness(self, tiny_checkpoint):
        cfg = ExperimentConfig.from_dict(
            {
                "target": {"type": "shapes", "checkpoint": str(tiny_checkpoint), "classes": ["disk"]},
                "examiner": {"kind": "random"},
                "T": 5,
                "seeds": [0],
            }
        )
        cells, _ = examine_experiment(cfg)
        assert cells[0]["trace"].correct is not None

    def test_strength_direction_report(self, tiny_checkpoint):
        cfg = ExperimentConfig.from_dict(
            {
                "target": {"type": "shapes", "checkpoint": str(tiny_checkpoint), "classes": ["disk", "bar"]},
                "examiner": {"kind": "random"},
                "T": 10,
                "seeds": [0],
                "direction": "strength",
            }
        )
        cells, report = examine_experiment(cfg)
        assert "final_scenarios" in report
        for c in cells:
            tr = c["trace"]
            assert tr.best_loss == tr.losses.min()
            curve = 1.0 - tr.best_so_far()
            assert np.all(np.diff(curve) >= 0)  # best p_true rises


class TestWeaknessStudy:
    def test_recovery_reported(self, restricted_checkpoint):
        cfg = ExperimentConfig.from_dict(
            {
                "target": {"type": "shapes", "checkpoint": str(restricted_checkpoint), "classes": ["disk"]},
                "examiner": {"kind": "random"},
                "T": 60,
                "seeds": [0, 1],
            }
        )
        _, report = weakness_study(cfg)
        rec = report["recovery"]
        assert rec["status"] == "ok"
        assert rec["excluded_volume_fraction"] == pytest.approx(0.5)
        assert 0.0 <= rec["rate_mean"] <= 1.0

    def test_missing_restriction_is_config_error(self, tiny_checkpoint):
        cfg = ExperimentConfig.from_dict(
            {
                "target": {"type": "shapes", "checkpoint": str(tiny_checkpoint)},
                "examiner": {"kind": "random"},
                "T": 5,
                "seeds": [0],
            }
        )
        with pytest.raises(ex.InvalidConfigError):
            weakness_study(cfg)


class TestArtifacts:
    def test_write_examination_bundle(self, tmp_path):
        cfg = landscape_config(T=8, seeds=[0])
        cells, report = examine_experiment(cfg)
        write_examination(tmp_path, "examine", cfg, cells, report)
        assert (tmp_path / "report.json").is_file()
        assert (tmp_path / "traces" / "three-bump__seed0.jsonl").is_file()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["command"] == "examine"
        assert "traces/three-bump__seed0.jsonl" in manifest["outputs"]

    def test_trace_files_reload(self, tmp_path):
        cfg = landscape_config(T=8, seeds=[0])
        cells, report = examine_experiment(cfg)
        write_examination(tmp_path, "examine", cfg, cells, report)
        tr = read_trace_file(tmp_path / "traces" / "three-bump__seed0.jsonl")
        assert np.array_equal(tr.losses, cells[0]["trace"].losses)

    def test_csv_aggregates_match_report(self, tmp_path):
        cfg = landscape_config(T=12, seeds=[0, 1])
        cells, report = examine_experiment(cfg)
        write_examination(tmp_path, "examine", cfg, cells, report)
        rows = read_csv_rows(tmp_path / "curves.csv")
        assert rows[0].keys() == {"instance", "t", "loss", "p_true"}
        finals = [float(r["loss"]) for r in rows if int(r["t"]) == 12]
        assert np.mean(finals) == pytest.approx(report["metrics"]["final_loss_mean"], abs=1e-9)
        per_class = read_csv_rows(tmp_path / "per_class.csv")
        assert float(per_class[0]["best_loss_mean"]) == pytest.approx(
            report["per_class"]["three-bump"]["best_p_true_mean"] * -1 + 1, abs=1e-9
        )

    def test_scenario_matrix_has_last_k(self, tmp_path):
        cfg = landscape_config(T=12, seeds=[0])
        cells, report = examine_experiment(cfg)
        write_examination(tmp_path, "examine", cfg, cells, report)
        rows = read_csv_rows(tmp_path / "scenarios.csv")
        assert len(rows) == 12  # T < K keeps the whole trace
        assert "angle" in rows[0]


class TestCli:
    def run_cli(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "examiner.cli", *args],
            capture_output=True,
            text=True,
        )

    def test_examine_landscape_roundtrip(self, tmp_path):
        out = tmp_path / "run"
        out.mkdir()
        res = self.run_cli(
            "examine",
            "--landscape", "single-bump",
            "--examiner", "random",
            "--T", "10",
            "--seed", "0,1",
            "--out", str(out),
        )
        assert res.returncode == 0, res.stderr
        assert (out / "report.json").is_file()

    def test_missing_out_dir_exits_2_cannot_write(self, tmp_path):
        res = self.run_cli(
            "examine",
            "--landscape", "single-bump",
            "--examiner", "random",
            "--T", "5",
            "--seed", "0",
            "--out", str(tmp_path / "nope"),
        )
        assert res.returncode == 2
        assert "cannot write" in res.stderr

    def test_usage_error_exit_2(self):
        res = self.run_cli("examine", "--examiner", "random", "--T", "5")
        assert res.returncode == 2

    def test_train_and_examine_shapes(self, tmp_path):
        train_out = tmp_path / "train"
        train_out.mkdir()
        res = self.run_cli(
            "train",
            "--m", "2",
            "--epochs", "40",
            "--config", str(self._train_cfg(tmp_path)),
            "--out", str(train_out),
        )
        assert res.returncode == 0, res.stderr
        exam_out = tmp_path / "exam"
        exam_out.mkdir()
        res = self.run_cli(
            "examine",
            "--checkpoint", str(train_out / "classifier.json"),
            "--examiner", "random",
            "--T", "6",
            "--seed", "0",
            "--out", str(exam_out),
        )
        assert res.returncode == 0, res.stderr
        report = json.loads((exam_out / "report.json").read_text())
        assert report["n_cells"] == 6

    def _train_cfg(self, tmp_path):
        p = tmp_path / "train_cfg.json"
        p.write_text(json.dumps({"instances_per_class": 2}))
        return p

    def test_report_command(self, tmp_path):
        run_dir = tmp_path / "run"
        run_dir.mkdir()
        res = self.run_cli(
            "examine",
            "--landscape", "ridge",
            "--examiner", "random",
            "--T", "7",
            "--seed", "0",
            "--out", str(run_dir),
        )
        assert res.returncode == 0, res.stderr
        rep_dir = tmp_path / "rep"
        rep_dir.mkdir()
        trace = run_dir / "traces" / "ridge__seed0.jsonl"
        res = self.run_cli("report", str(trace), "--out", str(rep_dir))
        assert res.returncode == 0, res.stderr
        assert (rep_dir / "curves.csv").is_file()

    def test_report_corrupt_trace_names_file_and_line(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"instance": "x", "t": 1, "scenario": [0.1], "loss": 0.5}\nnot json\n')
        rep_dir = tmp_path / "rep"
        rep_dir.mkdir()
        res = self.run_cli("report", str(bad), "--out", str(rep_dir))
        assert res.returncode == 1
        assert "bad.jsonl" in res.stderr and "line 2" in res.stderr

    def test_byte_identical_reruns(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            out.mkdir()
            res = self.run_cli(
                "examine",
                "--landscape", "three-bump",
                "--examiner", "bo",
                "--T", "8",
                "--seed", "0",
                "--out", str(out),
            )
            assert res.returncode == 0, res.stderr
            outs.append(out)
        for rel in ("report.json", "manifest.json", "traces/three-bump__seed0.jsonl", "curves.csv"):
            assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel
