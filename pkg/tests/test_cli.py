"""Tests for the pava command line."""

import json
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from pava import __version__
from pava.cli import cli, main
from pava.dataset import read_manifest
from pava.ensemble import EnsembleSpec, calibration_split, save_ensemble
from pava.model import TrainedModel, build_model
from pava.training import fine_tune, train

RUN_CONFIG = """\
sample:
  n_frames: 4
model:
  backbone: tiny_test_backbone
  pretrained: false
  classifier:
    feature_dim: 8
    lstm_hidden: 8
train:
  epochs: 2
  lr0: 0.01
  hflip_prob: 0.0
  val_fraction: 0.0
  finetune_epochs: 1
blur:
  sigma: 2.0
"""


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(RUN_CONFIG)
    return path


@pytest.fixture
def synth_out(tmp_path):
    out = tmp_path / "synth"
    result = CliRunner().invoke(
        cli,
        ["synth", "--out", str(out), "--classes", "2", "--clips-per-class", "4", "--frames", "8"]
        + ["--resolution", "32", "32", "--seed", "1", "--workers", "1"],
    )
    assert result.exit_code == 0, result.output
    return out


class TestExitCodes:
    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert f"pava version: {__version__}" in capsys.readouterr().out

    def test_no_command_shows_help(self, capsys):
        assert main([]) == 0
        assert "Privacy-aware activity classification" in capsys.readouterr().out

    def test_usage_errors(self, capsys):
        assert main(["train"]) == 1
        assert main(["no-such-command"]) == 1
        assert main(["synth", "--out", "x", "--classes", "40"]) == 1
        assert "Error" in capsys.readouterr().err

    def test_runtime_error(self, tmp_path, synth_out, capsys):
        code = main(
            ["split", str(synth_out / "manifest.jsonl"), "--out", str(tmp_path / "s")]
            + ["--train-count", "100", "--test-count", "100"]
        )
        assert code == 2
        assert "holds 8" in capsys.readouterr().err

    def test_mutually_exclusive_predictors(self, tmp_path, synth_out):
        code = main(["evaluate", "--manifest", str(synth_out / "manifest.jsonl"), "--out", str(tmp_path / "e")])
        assert code == 1


class TestDataCommands:
    def test_synth_writes_splits(self, tmp_path):
        out = tmp_path / "synth"
        result = CliRunner().invoke(
            cli,
            ["synth", "--out", str(out), "--classes", "3", "--clips-per-class", "3", "--frames", "2"]
            + ["--resolution", "8", "8", "--test-fraction", "0.34", "--no-sensitive"],
        )
        assert result.exit_code == 0, result.output
        assert "event=synth clips=9" in result.output
        assert len(read_manifest(out / "test.jsonl")) == 3
        assert len(read_manifest(out / "train.jsonl")) == 6
        mask_text = (out / "masks" / "chat-0000.mask").read_text()
        assert mask_text.splitlines()[3:] == []

    def test_ingest_split_and_mix(self, tmp_path, synth_out):
        runner = CliRunner()
        result = runner.invoke(cli, ["ingest", str(synth_out / "clips"), "--out", str(tmp_path / "ingested")])
        assert result.exit_code == 0, result.output
        ingested = read_manifest(tmp_path / "ingested" / "manifest.jsonl")
        assert len(ingested) == 8

        result = runner.invoke(
            cli,
            ["split", str(tmp_path / "ingested" / "manifest.jsonl"), "--out", str(tmp_path / "split")]
            + ["--train-count", "6", "--test-count", "2", "--seed", "3"],
        )
        assert result.exit_code == 0, result.output
        assert len(read_manifest(tmp_path / "split" / "train.jsonl")) == 6

        result = runner.invoke(
            cli,
            ["mix", "--original", str(synth_out / "manifest.jsonl"), "--blurred", str(synth_out / "manifest.jsonl")]
            + ["--out", str(tmp_path / "mixed")],
        )
        assert result.exit_code == 0, result.output
        assert len(read_manifest(tmp_path / "mixed" / "manifest.jsonl")) == 16

    def test_ingest_label_map(self, tmp_path):
        root = tmp_path / "raw"
        (root / "Walking").mkdir(parents=True)
        np.save(root / "Walking" / "a.npy", np.zeros((2, 4, 4, 3), dtype=np.uint8))
        label_map = tmp_path / "labels.yaml"
        label_map.write_text("Walking: walk\n")
        result = CliRunner().invoke(
            cli, ["ingest", str(root), "--out", str(tmp_path / "m"), "--label-map", str(label_map)]
        )
        assert result.exit_code == 0, result.output
        assert read_manifest(tmp_path / "m" / "manifest.jsonl").records[0].label == "walk"


class TestRedactCommand:
    def test_fake_backend_on_manifest(self, tmp_path, synth_out):
        out = tmp_path / "blurred"
        result = CliRunner().invoke(
            cli,
            ["redact", "--in", str(synth_out / "manifest.jsonl"), "--out", str(out), "--backend", "fake"]
            + ["--sigma", "2", "--save-detections"],
        )
        assert result.exit_code == 0, result.output
        assert "event=anomaly threshold=5" in result.output
        blurred = read_manifest(out / "manifest.jsonl")
        assert {r.variant.value for r in blurred} == {"blurred"}
        assert len(list((out / "detections").glob("*.det"))) == 8
        anomaly = json.loads((out / "anomaly.json").read_text())
        assert set(anomaly["overall"]) == {"5", "10"}
        assert anomaly["overall"]["5"]["accuracy_percent"] == 0.0

    def test_single_clip_with_custom_thresholds(self, tmp_path, synth_out):
        clip = next((synth_out / "clips" / "chat").glob("*.npy"))
        out = tmp_path / "one"
        result = CliRunner().invoke(
            cli,
            ["redact", "--in", str(clip), "--out", str(out), "--backend", "fake"]
            + ["--masks-dir", str(synth_out / "masks"), "--anomaly-threshold", "3"],
        )
        assert result.exit_code == 0, result.output
        assert (out / "clips" / clip.name).is_file()
        assert set(json.loads((out / "anomaly.json").read_text())["overall"]) == {"3"}

    def test_missing_masks_is_runtime_error(self, tmp_path, synth_out):
        clip = next((synth_out / "clips" / "chat").glob("*.npy"))
        code = main(["redact", "--in", str(clip), "--out", str(tmp_path / "o"), "--backend", "file"])
        assert code == 2


class TestModelCommands:
    def test_predict_with_handmade_ensemble(self, tmp_path, synth_out, tiny_settings):
        classifier = tiny_settings.classifier.model_copy(update={"num_classes": 2})
        settings = tiny_settings.model_copy(update={"classifier": classifier})
        paths = [build_model(settings, seed=s).save(tmp_path / "models" / f"m{s}.ckpt") for s in (0, 1)]
        spec_path = save_ensemble(EnsembleSpec(paths, np.full((2, 2), 0.5)), tmp_path / "ensemble.json")

        result = CliRunner().invoke(
            cli,
            ["predict", "--ensemble", str(spec_path), "--in", str(synth_out / "manifest.jsonl")]
            + ["--out", str(tmp_path / "pred")],
        )
        assert result.exit_code == 0, result.output
        predictions = pd.read_csv(tmp_path / "pred" / "predictions.csv")
        assert list(predictions.columns) == ["clip_id", "label", "predicted", "p_chat", "p_clean"]
        assert len(predictions) == 8
        np.testing.assert_allclose(predictions[["p_chat", "p_clean"]].sum(axis=1), 1.0, atol=1e-5)

    def test_end_to_end_on_fake_backend(self, tmp_path, synth_out, run_config):
        runner = CliRunner()

        def invoke(*args):
            result = runner.invoke(cli, [*args, "--config", str(run_config), "--seed", "0", "--workers", "1"])
            assert result.exit_code == 0, result.output
            return result

        blurred_dir = str(tmp_path / "blurred")
        invoke("redact", "--in", str(synth_out / "manifest.jsonl"), "--out", blurred_dir, "--backend", "fake")
        invoke("train", "--manifest", str(synth_out / "manifest.jsonl"), "--out", str(tmp_path / "orig"))
        trained = TrainedModel.load(tmp_path / "orig" / "model.ckpt")
        assert trained.config.num_classes == 2
        assert trained.config.n_frames == 4
        assert len(pd.read_csv(tmp_path / "orig" / "history.csv")) == 2
        assert (tmp_path / "orig" / "run_config.yaml").is_file()

        invoke(
            "finetune",
            "--model", str(tmp_path / "orig" / "model.ckpt"),
            "--manifest", str(tmp_path / "blurred" / "manifest.jsonl"),
            "--out", str(tmp_path / "tuned"),
        )
        tuned = TrainedModel.load(tmp_path / "tuned" / "model.ckpt")
        assert tuned.provenance.trained_on.value == "original"
        assert tuned.provenance.fine_tuned_on.value == "blurred"

        invoke(
            "ensemble-build",
            "--original", str(tmp_path / "orig" / "model.ckpt"),
            "--fine-tuned", str(tmp_path / "tuned" / "model.ckpt"),
            "--calibration", str(synth_out / "manifest.jsonl"),
            "--out", str(tmp_path / "ensemble"),
        )
        spec = json.loads((tmp_path / "ensemble" / "ensemble.json").read_text())
        assert len(spec["members"]) == 2
        assert np.asarray(spec["f1_matrix"]).shape == (2, 2)

        for name, manifest in (("original", synth_out), ("blurred", tmp_path / "blurred")):
            invoke(
                "evaluate",
                "--model", str(tmp_path / "orig" / "model.ckpt"),
                "--manifest", str(manifest / "manifest.jsonl"),
                "--out", str(tmp_path / "eval" / name),
            )
        metrics = json.loads((tmp_path / "eval" / "original" / "metrics.json").read_text())
        assert metrics["n_clips"] == 8
        assert metrics["sub_dataset"] == "original"

        result = runner.invoke(
            cli,
            ["report", "--original", str(tmp_path / "eval" / "original" / "metrics.json")]
            + ["--blurred", str(tmp_path / "eval" / "blurred" / "metrics.json"), "--out", str(tmp_path / "report")],
        )
        assert result.exit_code == 0, result.output
        comparison = pd.read_csv(tmp_path / "report" / "f1_by_class.csv")
        assert list(comparison.columns) == ["label", "f1_original", "f1_blurred"]
        assert comparison["label"].tolist() == ["chat", "clean"]


@pytest.fixture
def split_synth(tmp_path):
    out = tmp_path / "split-synth"
    result = CliRunner().invoke(
        cli,
        ["synth", "--out", str(out), "--classes", "2", "--clips-per-class", "6", "--frames", "8"]
        + ["--resolution", "32", "32", "--test-fraction", "0.34", "--seed", "1", "--workers", "1"],
    )
    assert result.exit_code == 0, result.output
    return out


class TestDataSeparation:
    def test_finetune_never_sees_test_or_calibration_clips(self, tmp_path, split_synth, run_config, tiny_settings):
        runner = CliRunner()
        blurred = tmp_path / "blurred"
        result = runner.invoke(
            cli,
            ["redact", "--in", str(split_synth / "manifest.jsonl"), "--out", str(blurred), "--backend", "fake"]
            + ["--sigma", "2", "--workers", "1"],
        )
        assert result.exit_code == 0, result.output

        classifier = tiny_settings.classifier.model_copy(update={"num_classes": 2})
        model_path = build_model(tiny_settings.model_copy(update={"classifier": classifier}), seed=0).save(
            tmp_path / "orig.ckpt"
        )
        with patch("pava.train_cli.fine_tune", wraps=fine_tune) as tuner:
            result = runner.invoke(
                cli,
                ["finetune", "--model", str(model_path), "--manifest", str(blurred / "manifest.jsonl")]
                + ["--out", str(tmp_path / "tuned"), "--config", str(run_config), "--seed", "0", "--workers", "1"],
            )
        assert result.exit_code == 0, result.output

        fitted = tuner.call_args.args[1].clip_ids()
        test_ids = read_manifest(split_synth / "test.jsonl").clip_ids()
        _, calibration = calibration_split(read_manifest(split_synth / "train.jsonl"), 0.1, 0)
        assert len(test_ids) == 4
        assert fitted.isdisjoint(test_ids)
        assert fitted.isdisjoint(calibration.clip_ids())
        assert len(fitted) == 6

    def test_train_split_all_without_holdout(self, tmp_path, split_synth, run_config):
        with patch("pava.train_cli.train", wraps=train) as trainer:
            result = CliRunner().invoke(
                cli,
                ["train", "--manifest", str(split_synth / "manifest.jsonl"), "--split", "all"]
                + ["--no-calibration-holdout", "--out", str(tmp_path / "m"), "--config", str(run_config)],
            )
        assert result.exit_code == 0, result.output
        assert len(trainer.call_args.args[1]) == 12

    def test_ensemble_build_scores_configured_calibration_slice(self, tmp_path, split_synth, run_config):
        config = tmp_path / "ensemble.yaml"
        config.write_text(run_config.read_text() + "ensemble:\n  calibration_fraction: 0.5\n")
        member = tmp_path / "member.ckpt"
        member.write_bytes(b"")
        spec = EnsembleSpec([member], np.full((1, 2), 0.5))

        with patch("pava.ensemble_cli.build_ensemble", return_value=spec) as builder:
            result = CliRunner().invoke(
                cli,
                ["ensemble-build", "--member", str(member), "--calibration", str(split_synth / "manifest.jsonl")]
                + ["--out", str(tmp_path / "ens"), "--config", str(config), "--seed", "0"],
            )
        assert result.exit_code == 0, result.output

        scored = builder.call_args.args[1]
        _, expected = calibration_split(read_manifest(split_synth / "train.jsonl"), 0.5, 0)
        assert scored.clip_ids() == expected.clip_ids()
        assert len(scored) == 4
        assert scored.clip_ids().isdisjoint(read_manifest(split_synth / "test.jsonl").clip_ids())
