"""CLI tests: subcommands, exit codes, determinism, and file outputs."""

import hashlib

import numpy as np
import pytest
from click.testing import CliRunner

from bevbeam.cli import main

TINY_MODEL = [
    "--set", "grid_h=16", "--set", "grid_w=16", "--set", "cam_size=32",
    "--set", "c_bev=16", "--set", "c_back=32", "--set", "attn_layers=1",
    "--set", "temporal_layers=1", "--set", "head_hidden=16",
    "--set", "gps_mlp_hidden=8",
]
TINY_DATA = [
    "--set", "scenarios=2", "--set", "lidar_points=64",
    "--set", "radar_antennas=4", "--set", "radar_chirps=4", "--set", "radar_ranges=8",
]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def dataset_dir(workdir):
    runner = CliRunner()
    result = runner.invoke(main, [
        "generate", "--out", str(workdir / "data"), "--sequences", "24",
        "--beams", "8", "--seed", "3", "--grid-h", "16", "--grid-w", "16",
        "--cam-size", "32", *TINY_DATA,
    ])
    assert result.exit_code == 0, result.output
    return workdir / "data"


@pytest.fixture(scope="module")
def run_dir(workdir, dataset_dir):
    runner = CliRunner()
    result = runner.invoke(main, [
        "train", "--data", str(dataset_dir), "--out", str(workdir / "run"),
        *TINY_MODEL, "--epochs", "3", "--lr", "1e-3", "--batch-size", "4",
    ])
    assert result.exit_code == 0, result.output
    return workdir / "run"


class TestGenerate:
    def test_prints_summary(self, dataset_dir):
        assert (dataset_dir / "index.csv").exists()

    def test_zero_sequences_exit_2(self, workdir):
        result = CliRunner().invoke(main, [
            "generate", "--out", str(workdir / "bad"), "--sequences", "0"])
        assert result.exit_code == 2
        assert "error" in result.output

    def test_rerun_same_flags_identical_index(self, workdir):
        runner = CliRunner()
        digests = []
        for name in ("r1", "r2"):
            result = runner.invoke(main, [
                "generate", "--out", str(workdir / name), "--sequences", "10",
                "--beams", "8", "--seed", "9", "--grid-h", "16", "--grid-w", "16",
                "--cam-size", "32", *TINY_DATA,
            ])
            assert result.exit_code == 0, result.output
            digests.append(hashlib.sha256((workdir / name / "index.csv").read_bytes())
                           .hexdigest())
        assert digests[0] == digests[1]

    def test_unknown_key_exit_2(self, workdir):
        result = CliRunner().invoke(main, [
            "generate", "--out", str(workdir / "u"), "--set", "nope=1"])
        assert result.exit_code == 2


class TestTrain:
    def test_writes_artifacts(self, run_dir):
        assert (run_dir / "best.ckpt").exists()
        assert (run_dir / "training_log.csv").exists()
        assert (run_dir / "effective_config.cfg").exists()
        assert (run_dir / "run_meta.json").exists()
        header = (run_dir / "training_log.csv").read_text().splitlines()[0]
        assert header == "epoch,lr,train_loss,train_dba,val_dba"

    def test_zero_lr_preserves_initial_params(self, workdir, dataset_dir):
        from bevbeam.checkpoint import load_checkpoint, parameter_digest
        from bevbeam.model import build_model_params
        result = CliRunner().invoke(main, [
            "train", "--data", str(dataset_dir), "--out", str(workdir / "zero"),
            *TINY_MODEL, "--epochs", "2", "--lr", "0", "--batch-size", "4",
        ])
        assert result.exit_code == 0, result.output
        params, meta = load_checkpoint(workdir / "zero" / "best.ckpt")
        fresh = build_model_params(params.config, seed=meta["seed"])
        assert parameter_digest(params) == parameter_digest(fresh)

    def test_fixed_seed_identical_log(self, workdir, dataset_dir):
        runner = CliRunner()
        logs = []
        for name in ("s1", "s2"):
            result = runner.invoke(main, [
                "train", "--data", str(dataset_dir), "--out", str(workdir / name),
                *TINY_MODEL, "--epochs", "2", "--lr", "1e-3", "--seed", "5",
            ])
            assert result.exit_code == 0, result.output
            logs.append((workdir / name / "training_log.csv").read_bytes())
        assert logs[0] == logs[1]


class TestEval:
    def test_eval_writes_reports(self, workdir, dataset_dir, run_dir):
        result = CliRunner().invoke(main, [
            "eval", "--checkpoint", str(run_dir / "best.ckpt"), "--data",
            str(dataset_dir), "--out", str(workdir / "ev"), "--split", "test",
        ])
        assert result.exit_code == 0, result.output
        assert (workdir / "ev" / "report.csv").exists()
        assert (workdir / "ev" / "confusion.csv").exists()

    def test_report_matches_library_score(self, workdir, dataset_dir, run_dir):
        import csv
        from bevbeam.checkpoint import load_checkpoint
        from bevbeam.config import RunConfig
        from bevbeam.data import load_dataset, split_dataset
        from bevbeam.metrics import DbaConfig, evaluate_model

        result = CliRunner().invoke(main, [
            "eval", "--checkpoint", str(run_dir / "best.ckpt"), "--data",
            str(dataset_dir), "--out", str(workdir / "ev2"), "--split", "val",
        ])
        assert result.exit_code == 0, result.output
        with open(workdir / "ev2" / "report.csv") as fh:
            overall = next(r for r in csv.DictReader(fh) if r["scope"] == "overall")
        params, meta = load_checkpoint(run_dir / "best.ckpt")
        cfg = RunConfig(**meta["run"])
        handle = load_dataset(dataset_dir)
        _, val_idx, _ = split_dataset(handle, cfg.split_ratios(), seed=cfg.split_seed)
        report = evaluate_model(params, handle, val_idx, DbaConfig())
        assert float(overall["dba"]) == pytest.approx(report.overall_dba, abs=1e-6)

    def test_ablation_mode_recorded(self, workdir, dataset_dir, run_dir):
        result = CliRunner().invoke(main, [
            "eval", "--checkpoint", str(run_dir / "best.ckpt"), "--data",
            str(dataset_dir), "--out", str(workdir / "ab"), "--split", "val",
            "--ablation", "drop_camera",
        ])
        assert result.exit_code == 0, result.output
        content = (workdir / "ab" / "report.csv").read_text()
        assert "drop_camera" in content

    def test_structure_override_exit_5(self, workdir, dataset_dir, run_dir):
        result = CliRunner().invoke(main, [
            "eval", "--checkpoint", str(run_dir / "best.ckpt"), "--data",
            str(dataset_dir), "--out", str(workdir / "mm"), "--set", "c_bev=64",
        ])
        assert result.exit_code == 5
        assert "c_bev" in result.output

    def test_perfect_predictions_file_scores_one(self, workdir, dataset_dir):
        import csv as csv_mod
        from bevbeam.data import load_dataset
        handle = load_dataset(dataset_dir)
        pred_path = workdir / "oracle.csv"
        with open(pred_path, "w", newline="") as fh:
            writer = csv_mod.writer(fh)
            writer.writerow(["seq_id", "rank1", "rank2", "rank3", "label"])
            for seq_id, _, label, _ in handle.entries:
                writer.writerow([seq_id, label, (label + 1) % 8, (label + 2) % 8, label])
        result = CliRunner().invoke(main, [
            "eval", "--predictions", str(pred_path), "--out", str(workdir / "po")])
        assert result.exit_code == 0, result.output
        assert "overall DBA 1.0000" in result.output


class TestPredict:
    def test_rows_and_ordering(self, workdir, dataset_dir, run_dir):
        result = CliRunner().invoke(main, [
            "predict", "--checkpoint", str(run_dir / "best.ckpt"), "--data",
            str(dataset_dir), "--out", str(workdir / "preds.csv"), "--split", "all",
        ])
        assert result.exit_code == 0, result.output
        rows = (workdir / "preds.csv").read_text().splitlines()
        assert len(rows) == 1 + 24  # header + all samples
        for row in rows[1:]:
            parts = row.split(",")
            probs = [float(p) for p in parts[4:7]]
            assert probs[0] >= probs[1] >= probs[2]

    def test_rank1_matches_library_argmax(self, workdir, dataset_dir, run_dir):
        from bevbeam.checkpoint import load_checkpoint
        from bevbeam.data import load_dataset
        from bevbeam.model import forward_full
        params, _ = load_checkpoint(run_dir / "best.ckpt")
        handle = load_dataset(dataset_dir)
        rows = (workdir / "preds.csv").read_text().splitlines()[1:]
        by_id = {r.split(",")[0]: int(r.split(",")[1]) for r in rows}
        samples = handle.samples(range(4))
        probs = forward_full(samples, params).probs.data
        for sample, row in zip(samples, probs):
            assert by_id[sample.seq_id] == int(row.argmax())


class TestConfigRoundTrip:
    def test_effective_config_reproduces_run(self, workdir, dataset_dir):
        runner = CliRunner()
        result = runner.invoke(main, [
            "train", "--data", str(dataset_dir), "--out", str(workdir / "orig"),
            *TINY_MODEL, "--epochs", "2", "--lr", "1e-3", "--seed", "8",
        ])
        assert result.exit_code == 0, result.output
        result = runner.invoke(main, [
            "train", "--data", str(dataset_dir), "--out", str(workdir / "replay"),
            "--config", str(workdir / "orig" / "effective_config.cfg"),
        ])
        assert result.exit_code == 0, result.output
        assert (workdir / "orig" / "training_log.csv").read_bytes() == \
            (workdir / "replay" / "training_log.csv").read_bytes()
