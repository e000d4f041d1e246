"""Tests for F1-weighted ensembles."""

import json

import numpy as np
import pytest

from pava.ensemble import (
    EnsemblePredictor,
    EnsembleSpec,
    build_ensemble,
    build_final_ensemble,
    calibration_split,
    combine,
    compute_weights,
    load_ensemble,
    save_ensemble,
)
from pava.errors import EnsembleError
from pava.model import build_model
from pava.video import read_video


def random_probabilities(rng: np.random.Generator, *shape: int) -> np.ndarray:
    raw = rng.random(shape)
    return raw / raw.sum(axis=-1, keepdims=True)


class TestWeights:
    def test_columns_sum_to_one(self):
        weights = compute_weights(np.array([[0.5, 0.0, 0.2], [0.5, 0.8, 0.6]]))
        np.testing.assert_allclose(weights, [[0.5, 0.0, 0.25], [0.5, 1.0, 0.75]])
        np.testing.assert_allclose(weights.sum(axis=0), 1.0)

    def test_class_without_any_f1(self):
        with pytest.raises(EnsembleError, match="'clean'"):
            compute_weights(np.array([[0.5, 0.0], [0.3, 0.0]]))


class TestCombine:
    def test_soft_matches_weighted_sum(self):
        rng = np.random.default_rng(0)
        probabilities = random_probabilities(rng, 3, 5)
        weights = compute_weights(rng.random((3, 5)))
        expected = np.array([sum(weights[m, c] * probabilities[m, c] for m in range(3)) for c in range(5)])
        expected /= expected.sum()
        np.testing.assert_allclose(combine(probabilities, weights), expected)

    def test_hard_takes_best_member_per_class(self):
        probabilities = np.array([[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]])
        weights = np.array([[0.9, 0.4, 0.2], [0.1, 0.6, 0.8]])
        expected = np.array([0.7, 0.3, 0.6]) / 1.6
        np.testing.assert_allclose(combine(probabilities, weights, "hard_per_class"), expected)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(1)
        probabilities = random_probabilities(rng, 2, 4, 3)
        weights = compute_weights(rng.random((2, 3)))
        for mode in ("soft_f1_weighted", "hard_per_class"):
            batched = combine(probabilities, weights, mode)
            for n in range(4):
                np.testing.assert_allclose(batched[n], combine(probabilities[:, n], weights, mode))

    def test_argmax_on_random_fixtures(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            members, classes = int(rng.integers(1, 6)), int(rng.integers(2, 19))
            probabilities = random_probabilities(rng, members, classes)
            weights = compute_weights(rng.random((members, classes)) + 1e-3)
            combined = combine(probabilities, weights)
            assert combined.sum() == pytest.approx(1.0)
            assert int(np.argmax(combined)) == int(np.argmax((weights * probabilities).sum(axis=0)))

    def test_single_member_is_identity(self):
        probabilities = np.array([[0.2, 0.5, 0.3]])
        np.testing.assert_allclose(combine(probabilities, np.ones((1, 3))), probabilities[0])

    def test_all_zero_falls_back_to_uniform(self):
        combined = combine(np.zeros((2, 4)), np.full((2, 4), 0.5))
        np.testing.assert_allclose(combined, 0.25)

    def test_shape_and_mode_errors(self):
        with pytest.raises(EnsembleError, match="do not line up"):
            combine(np.ones((2, 3)) / 3, np.ones((3, 3)))
        with pytest.raises(EnsembleError, match="Unknown ensemble mode"):
            combine(np.ones((1, 2)) / 2, np.ones((1, 2)), "majority")


class TestEnsembleSpec:
    def test_rejects_bad_matrix(self):
        with pytest.raises(EnsembleError):
            EnsembleSpec([], np.zeros((1, 3)))
        with pytest.raises(EnsembleError):
            EnsembleSpec(["a.ckpt"], np.array([[1.5, 0.0]]))

    def test_save_and_load(self, tmp_path):
        spec = EnsembleSpec([tmp_path / "members" / "a.ckpt", tmp_path / "b.ckpt"], np.array([[0.5, 1], [0.25, 0]]))
        path = save_ensemble(spec, tmp_path / "ensemble.json")
        payload = json.loads(path.read_text())
        assert payload["format"] == "pava-ensemble"
        assert payload["members"] == ["members/a.ckpt", "b.ckpt"]

        loaded = load_ensemble(path)
        assert [p.resolve() for p in loaded.members] == [p.resolve() for p in spec.members]
        np.testing.assert_array_equal(loaded.f1_matrix, spec.f1_matrix)
        assert loaded.mode == "soft_f1_weighted"

    def test_load_foreign_file(self, tmp_path):
        path = tmp_path / "ensemble.json"
        path.write_text('{"format": "other"}')
        with pytest.raises(EnsembleError, match="not a pava-ensemble"):
            load_ensemble(path)


class TestBuild:
    def test_build_ensemble_scores_members(self, tmp_path, tiny_settings, synth_manifest):
        paths = [build_model(tiny_settings, seed=s).save(tmp_path / f"m{s}.ckpt") for s in (0, 1)]
        spec = build_ensemble(paths, synth_manifest, quiet=True)
        assert spec.f1_matrix.shape == (2, 4)
        assert spec.members == paths

    def test_missing_member(self, tmp_path, synth_manifest):
        with pytest.raises(EnsembleError, match="Cannot load ensemble member"):
            build_ensemble([tmp_path / "missing.ckpt"], synth_manifest)

    def test_final_ensemble_needs_pairs(self, tmp_path, synth_manifest):
        with pytest.raises(EnsembleError, match="matching original and fine-tuned"):
            build_final_ensemble([tmp_path / "a.ckpt"], [], synth_manifest)

    def test_calibration_split(self, synth_manifest):
        fit, calibration = calibration_split(synth_manifest, 0.25, seed=0)
        assert len(calibration) == 4
        assert fit.clip_ids().isdisjoint(calibration.clip_ids())


class TestPredictor:
    def test_combines_members(self, tmp_path, tiny_settings, synth_manifest):
        paths = [build_model(tiny_settings, seed=s).save(tmp_path / f"m{s}.ckpt") for s in (0, 1)]
        spec = EnsembleSpec(paths, np.array([[0.9, 0.1, 0.5, 0.5], [0.1, 0.9, 0.5, 0.5]]))
        predictor = EnsemblePredictor(spec, workers=2)
        frames, fps = read_video(synth_manifest.resolve(synth_manifest.records[0]))
        detailed = predictor.predict_detailed(frames, fps, seed=0)
        assert detailed.per_member_probabilities.shape == (2, 4)
        np.testing.assert_allclose(
            detailed.probabilities, combine(detailed.per_member_probabilities, predictor.weights)
        )
        assert detailed.chosen_label.index == int(np.argmax(detailed.probabilities))

    def test_member_class_mismatch(self, tmp_path, tiny_settings):
        path = build_model(tiny_settings).save(tmp_path / "m.ckpt")
        with pytest.raises(EnsembleError, match="spec has 3"):
            EnsemblePredictor(EnsembleSpec([path], np.ones((1, 3))))
