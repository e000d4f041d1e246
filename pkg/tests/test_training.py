"""Tests for balanced batching, the training loop and fine-tuning."""

import math
from collections import Counter
from unittest.mock import patch

import pandas as pd
import pytest
import torch

from pava.backends import GroundTruthBackend
from pava.constants import ActivityLabels, Split, SubDataset, Variant
from pava.dataset import ClipRecord, DatasetManifest, label_set, relabel_variant
from pava.errors import DatasetError, TrainingError
from pava.evaluation import ModelPredictor, evaluate
from pava.model import ClassifierConfig, ModelSettings, Provenance, build_model
from pava.privacy import BlurParams, RedactConfig, SensitiveClassSet, redact_manifest
from pava.synth import SynthConfig, synth_dataset
from pava.training import (
    BalancedBatchSampler,
    EpochRecord,
    TrainConfig,
    balanced_batches,
    cross_entropy,
    fine_tune,
    make_scheduler,
    train,
    write_history,
)


def skewed_manifest(counts: dict[str, int]) -> DatasetManifest:
    records = [
        ClipRecord(clip_id=f"{label}-{i:03d}", path=f"{label}/{i}.npy", label=label)
        for label, n in counts.items()
        for i in range(n)
    ]
    return DatasetManifest(tuple(records))


def quick_config(**overrides) -> TrainConfig:
    settings = {"epochs": 2, "lr0": 0.01, "hflip_prob": 0.0, "val_fraction": 0.0, "seed": 0}
    settings.update(overrides)
    return TrainConfig(**settings)


class TestBalancedBatches:
    def test_every_batch_is_balanced(self):
        manifest = skewed_manifest({"chat": 1, "clean": 10, "drink": 50, "dryer": 100})
        labels = label_set(4)
        batches = []
        for seed in range(20):
            plan = balanced_batches(manifest, 2, seed, labels)
            assert len(plan.batches) == 50
            batches.extend(plan.compositions)
        assert len(batches) == 1000
        assert all(composition == Counter({"chat": 2, "clean": 2, "drink": 2, "dryer": 2}) for composition in batches)

    def test_largest_class_used_once_and_minorities_cycle(self):
        manifest = skewed_manifest({"chat": 3, "clean": 10, "drink": 50, "dryer": 100})
        plan = balanced_batches(manifest, 2, 7, label_set(4))
        used = Counter(clip_id for batch in plan.batches for clip_id in batch)
        assert all(used[f"dryer-{i:03d}"] == 1 for i in range(100))
        assert all(used[f"drink-{i:03d}"] == 2 for i in range(50))
        assert all(used[f"clean-{i:03d}"] == 10 for i in range(10))
        # Each minority clip appears before any clip of its class repeats
        clean_order = [c for batch in plan.batches for c in batch if c.startswith("clean")]
        assert len(set(clean_order[:10])) == 10

    def test_full_vocabulary_batch_size(self):
        manifest = skewed_manifest({name: 3 for name in ActivityLabels.NAMES})
        plan = balanced_batches(manifest, 2, 0)
        assert len(plan.batches) == math.ceil(3 / 2)
        assert all(len(batch) == 36 for batch in plan.batches)

    def test_deterministic(self):
        manifest = skewed_manifest({"chat": 4, "clean": 6})
        first = balanced_batches(manifest, 2, 1, label_set(2))
        again = balanced_batches(manifest, 2, 1, label_set(2))
        assert first.batches == again.batches

    def test_empty_class(self):
        with pytest.raises(DatasetError, match="'clean' has no clips"):
            balanced_batches(skewed_manifest({"chat": 4}), 2, 0, label_set(2))

    def test_sampler_reshuffles_per_epoch(self):
        manifest = skewed_manifest({"chat": 8, "clean": 8})
        sampler = BalancedBatchSampler(manifest, label_set(2), 2, seed=0)
        assert len(sampler) == 4
        sampler.set_epoch(1)
        first = list(sampler)
        sampler.set_epoch(2)
        second = list(sampler)
        assert len(first) == 4
        assert all(len(batch) == 4 for batch in first)
        assert first != second


class TestLossAndSchedule:
    def test_cross_entropy(self):
        probabilities = torch.tensor([[0.25, 0.75], [0.5, 0.5]])
        expected = -(math.log(0.75) + math.log(0.5)) / 2
        assert float(cross_entropy(probabilities, torch.tensor([1, 0]))) == pytest.approx(expected)

    def test_uniform_over_vocabulary(self):
        uniform = torch.full((18,), 1 / 18)
        assert float(cross_entropy(uniform, 4)) == pytest.approx(math.log(18), abs=1e-4)
        assert math.log(18) == pytest.approx(2.8904, abs=1e-4)

    def test_zero_probability_is_clamped(self):
        assert float(cross_entropy(torch.tensor([[1.0, 0.0]]), 1)) == pytest.approx(-math.log(1e-12), rel=1e-4)

    def test_plateau_decay_after_patience(self):
        parameter = torch.nn.Parameter(torch.zeros(1))
        optimizer = torch.optim.Adam([parameter], lr=0.001)
        scheduler = make_scheduler(optimizer, TrainConfig(patience=5, factor=0.1))
        scheduler.step(1.0)
        for _ in range(4):
            scheduler.step(1.0)
            assert optimizer.param_groups[0]["lr"] == pytest.approx(0.001)
        scheduler.step(1.0)
        assert optimizer.param_groups[0]["lr"] == pytest.approx(0.0001)

    def test_improvement_resets_patience(self):
        parameter = torch.nn.Parameter(torch.zeros(1))
        optimizer = torch.optim.Adam([parameter], lr=0.001)
        scheduler = make_scheduler(optimizer, TrainConfig(patience=2))
        for loss in (1.0, 1.0, 0.9, 0.9):
            scheduler.step(loss)
        assert optimizer.param_groups[0]["lr"] == pytest.approx(0.001)

    def test_write_history(self, tmp_path):
        path = write_history([EpochRecord(1, 1.5, 1.2, 0.5, 0.001)], tmp_path / "history.csv")
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["epoch", "train_loss", "val_loss", "val_acc", "lr"]
        assert frame.iloc[0]["val_acc"] == 0.5


class TestTrain:
    def test_history_and_provenance(self, tmp_path, tiny_model, synth_manifest):
        checkpoint = tmp_path / "m.ckpt"
        result = train(tiny_model, synth_manifest, None, quick_config(), checkpoint_path=checkpoint, quiet=True)
        assert [r.epoch for r in result.history] == [1, 2]
        assert result.history[0].lr == pytest.approx(0.01)
        assert result.best_epoch in (1, 2)
        assert result.model.provenance.trained_on == SubDataset.ORIGINAL
        assert (tmp_path / "m.ckpt").is_file()
        assert not result.model.module.training

    def test_empty_manifest(self, tiny_model):
        with pytest.raises(TrainingError, match="empty"):
            train(tiny_model, DatasetManifest(), None, quick_config(), quiet=True)

    def test_labels_outside_model(self, tiny_model, synth_manifest):
        extra = ClipRecord(clip_id="walk-0000", path="clips/x.npy", label="walk")
        manifest = synth_manifest.with_records([*synth_manifest.records, extra])
        with pytest.raises(TrainingError, match="walk"):
            train(tiny_model, manifest, None, quick_config(), quiet=True)

    def test_non_finite_loss(self, tiny_model, synth_manifest):
        with patch("pava.training.cross_entropy", return_value=torch.tensor(float("nan"), requires_grad=True)):
            with pytest.raises(TrainingError, match="Non-finite loss"):
                train(tiny_model, synth_manifest, None, quick_config(), quiet=True)

    def test_same_seed_same_loss_curve(self, tiny_settings, synth_manifest):
        curves = []
        for _ in range(2):
            model = build_model(tiny_settings, seed=0)
            result = train(model, synth_manifest, None, quick_config(val_fraction=0.25), quiet=True)
            curves.append([(r.train_loss, r.val_loss) for r in result.history])
        for (a_train, a_val), (b_train, b_val) in zip(*curves, strict=True):
            assert abs(a_train - b_train) < 1e-6
            assert abs(a_val - b_val) < 1e-6


class TestFineTune:
    def trained(self, tiny_model):
        tiny_model.provenance = Provenance(trained_on=SubDataset.ORIGINAL)
        return tiny_model

    def test_requires_original_training(self, tiny_model, synth_manifest):
        blurred = relabel_variant(synth_manifest, Variant.BLURRED)
        with pytest.raises(TrainingError, match="trained on the original"):
            fine_tune(tiny_model, blurred, quick_config())

    def test_zero_epochs_copies(self, tiny_model, synth_manifest):
        model = self.trained(tiny_model)
        blurred = relabel_variant(synth_manifest, Variant.BLURRED)
        result = fine_tune(model, blurred, quick_config(finetune_epochs=0))
        assert result.history == []
        assert result.model.module is not model.module
        assert result.model.provenance.fine_tuned_on == SubDataset.BLURRED
        assert model.provenance.fine_tuned_on is None
        for name, tensor in model.parameters.items():
            assert torch.equal(tensor, result.model.parameters[name])

    def test_original_left_untouched(self, tiny_model, synth_manifest):
        model = self.trained(tiny_model)
        before = {k: v.clone() for k, v in model.parameters.items()}
        blurred = relabel_variant(synth_manifest, Variant.BLURRED)
        result = fine_tune(model, blurred, quick_config(finetune_epochs=1, finetune_lr0=0.05), quiet=True)
        assert len(result.history) == 1
        assert result.history[0].lr == pytest.approx(0.05)
        for name, tensor in model.parameters.items():
            assert torch.equal(tensor, before[name])
        changed = [not torch.equal(before[k], v) for k, v in result.model.parameters.items()]
        assert any(changed)


@pytest.mark.slow
def test_desk_scale_accuracy(tmp_path):
    config = SynthConfig(classes=4, clips_per_class=10, frames=32, resolution=(32, 32), seed=0, test_fraction=0.3)
    manifest = synth_dataset(config, tmp_path / "synth", workers=1)
    settings = ModelSettings(
        backbone="tiny_test_backbone",
        pretrained=False,
        classifier=ClassifierConfig(feature_dim=16, lstm_hidden=16, num_classes=4, n_frames=16),
    )
    model = build_model(settings, seed=0)
    train_split = manifest.filter(split=Split.TRAIN)
    test_split = manifest.filter(split=Split.TEST)
    cfg = TrainConfig(epochs=20, lr0=0.01, hflip_prob=0.0, val_fraction=0.0, seed=0)
    result = train(model, train_split, None, cfg, quiet=True)

    report, _ = evaluate(ModelPredictor(result.model), test_split, seed=0, quiet=True)
    assert report.n_clips == 12
    assert report.accuracy_percent >= 90.0


@pytest.mark.slow
def test_fine_tuning_trend_on_redacted_clips(tmp_path):
    config = SynthConfig(classes=4, clips_per_class=10, frames=32, resolution=(32, 32), seed=0, test_fraction=0.3)
    original = synth_dataset(config, tmp_path / "synth", workers=1)
    blurred, _ = redact_manifest(
        original,
        lambda clip_id: GroundTruthBackend.for_clip(tmp_path / "synth" / "masks", clip_id),
        SensitiveClassSet(),
        BlurParams(sigma=4.0),
        RedactConfig(),
        tmp_path / "blurred",
        workers=1,
        quiet=True,
    )
    settings = ModelSettings(
        backbone="tiny_test_backbone",
        pretrained=False,
        classifier=ClassifierConfig(feature_dim=16, lstm_hidden=16, num_classes=4, n_frames=16),
    )
    cfg = TrainConfig(
        epochs=20, lr0=0.01, hflip_prob=0.0, val_fraction=0.0, seed=0, finetune_epochs=10, finetune_lr0=0.005
    )

    def fit(manifest):
        return train(build_model(settings, seed=0), manifest.filter(split=Split.TRAIN), None, cfg, quiet=True).model

    def accuracy(model, manifest):
        report, _ = evaluate(ModelPredictor(model), manifest.filter(split=Split.TEST), seed=0, quiet=True)
        return report.accuracy_percent

    original_only = fit(original)
    blurred_only = fit(blurred)
    tuned = fine_tune(original_only, blurred.filter(split=Split.TRAIN), cfg, quiet=True).model

    assert accuracy(tuned, blurred) >= accuracy(original_only, blurred)
    assert accuracy(original_only, original) >= accuracy(blurred_only, original)
