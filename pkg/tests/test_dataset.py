"""Tests for manifests, ingest, splitting and sub-dataset assembly."""

import json

import numpy as np
import pytest

from pava.constants import ActivityLabels, Split, SubDataset, Variant
from pava.dataset import (
    ActivityLabel,
    ClipRecord,
    DatasetManifest,
    build_mixed,
    class_histogram,
    ingest,
    label_set,
    read_manifest,
    relabel_variant,
    require_classes,
    split,
    stratified_holdout,
    write_manifest,
)
from pava.errors import DatasetError
from pava.video import write_video


def make_manifest(n: int, subjects: int = 1, root=None) -> DatasetManifest:
    records = [
        ClipRecord(
            clip_id=f"clip-{i:05d}",
            path=f"clips/clip-{i:05d}.npy",
            label=ActivityLabels.NAMES[i % ActivityLabels.COUNT],
            subject_id=f"s{i % subjects}",
        )
        for i in range(n)
    ]
    return DatasetManifest(tuple(records), root) if root else DatasetManifest(tuple(records))


def tiny_clip() -> np.ndarray:
    return np.full((2, 4, 4, 3), 128, dtype=np.uint8)


class TestLabels:
    def test_from_name_and_index(self):
        assert ActivityLabel.from_name("walk") == ActivityLabel("walk", 14)
        assert ActivityLabel.from_index(0).name == "chat"

    def test_unknown_label(self):
        with pytest.raises(DatasetError, match="Unknown activity label"):
            ActivityLabel.from_name("juggle")
        with pytest.raises(DatasetError):
            ActivityLabel.from_index(18)

    def test_label_set_prefix(self):
        assert [label.name for label in label_set(3)] == ["chat", "clean", "drink"]
        with pytest.raises(DatasetError):
            label_set(1)

    def test_record_rejects_unknown_label(self):
        with pytest.raises(ValueError):
            ClipRecord(clip_id="a", path="a.npy", label="juggle")


class TestManifestIO:
    def test_write_and_read(self, tmp_path):
        manifest = make_manifest(5, root=tmp_path)
        path = write_manifest(manifest, tmp_path / "manifest.jsonl")
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 5
        assert list(json.loads(lines[0])) == ["clip_id", "path", "label", "subject_id", "split", "variant"]
        assert json.loads(lines[0])["path"] == "clips/clip-00000.npy"

        loaded = read_manifest(path)
        assert loaded.records == manifest.records
        assert loaded.resolve(loaded.records[0]) == tmp_path.resolve() / "clips" / "clip-00000.npy"

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text('{"clip_id": "a", "path": "a.npy", "label": "walk", "colour": "red"}\n')
        with pytest.raises(DatasetError, match=":1: invalid manifest record"):
            read_manifest(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError, match="Cannot read manifest"):
            read_manifest(tmp_path / "nope.jsonl")

    def test_duplicate_clip_ids(self):
        record = ClipRecord(clip_id="a", path="a.npy", label="walk")
        with pytest.raises(DatasetError, match="Duplicate clip_id"):
            DatasetManifest((record, record))

    def test_sub_dataset_inferred(self):
        manifest = make_manifest(4)
        assert manifest.sub_dataset == SubDataset.ORIGINAL
        assert relabel_variant(manifest, Variant.BLURRED).sub_dataset == SubDataset.BLURRED


class TestIngest:
    def test_class_directories(self, tmp_path):
        root = tmp_path / "raw"
        for name in ActivityLabels.NAMES:
            for i in range(2):
                write_video(root / name / f"{i}.npy", tiny_clip())
        result = ingest(root, workers=4)
        assert len(result.manifest) == 36
        assert result.errors == []
        ids = [r.clip_id for r in result.manifest]
        assert ids == sorted(ids)
        assert all(r.variant == Variant.ORIGINAL for r in result.manifest)
        assert class_histogram(result.manifest) == {name: 2 for name in ActivityLabels.NAMES}

    def test_unreadable_clip_is_record_error(self, tmp_path):
        root = tmp_path / "raw"
        write_video(root / "walk" / "good.npy", tiny_clip())
        (root / "walk" / "bad.npy").write_bytes(b"garbage")
        result = ingest(root, workers=1)
        assert [r.clip_id for r in result.manifest] == ["walk-good"]
        assert len(result.errors) == 1
        assert result.errors[0].path == "walk/bad.npy"

    def test_label_map_and_exclusions(self, tmp_path):
        root = tmp_path / "raw"
        write_video(root / "Walking" / "a.npy", tiny_clip())
        write_video(root / "Walking" / "b.npy", tiny_clip())
        exclusions = tmp_path / "exclude.txt"
        exclusions.write_text("# noisy labels\nwalk-b\n")
        result = ingest(root, label_map={"Walking": "walk"}, exclusion_file=exclusions, workers=1)
        assert [r.clip_id for r in result.manifest] == ["walk-a"]

    def test_unknown_directory_label(self, tmp_path):
        write_video(tmp_path / "raw" / "juggle" / "a.npy", tiny_clip())
        with pytest.raises(DatasetError, match="Unknown label 'juggle'"):
            ingest(tmp_path / "raw", workers=1)

    def test_labels_csv(self, tmp_path):
        root = tmp_path / "raw"
        write_video(root / "videos" / "x.npy", tiny_clip())
        (root / "labels.csv").write_text("path,label,subject_id\nvideos/x.npy,Read,p7\n")
        result = ingest(root, workers=1)
        record = result.manifest.records[0]
        assert (record.clip_id, record.label, record.subject_id) == ("x", "read", "p7")

    def test_missing_root(self, tmp_path):
        with pytest.raises(DatasetError, match="not a directory"):
            ingest(tmp_path / "missing")


class TestSplit:
    def test_full_dataset_counts(self):
        manifest = make_manifest(1237)
        train, test = split(manifest, 873, 364, seed=0)
        assert len(train) == 873
        assert len(test) == 364
        assert train.clip_ids().isdisjoint(test.clip_ids())
        assert all(r.split == Split.TRAIN for r in train)
        assert all(r.split == Split.TEST for r in test)

    def test_deterministic_per_seed(self):
        manifest = make_manifest(200)
        first, _ = split(manifest, 100, 50, seed=3)
        again, _ = split(manifest, 100, 50, seed=3)
        other, _ = split(manifest, 100, 50, seed=4)
        assert first.records == again.records
        assert first.clip_ids() != other.clip_ids()

    def test_counts_exceed_manifest(self):
        with pytest.raises(DatasetError, match="holds 10"):
            split(make_manifest(10), 8, 3, seed=0)

    def test_by_subject_is_disjoint(self):
        manifest = make_manifest(40, subjects=4)
        train, test = split(manifest, 20, 20, seed=1, by_subject=True)
        assert len(train) == 20
        assert len(test) == 20
        assert {r.subject_id for r in train}.isdisjoint({r.subject_id for r in test})

    def test_by_subject_infeasible(self):
        manifest = make_manifest(18, subjects=3)
        with pytest.raises(DatasetError, match="blocked by subject"):
            split(manifest, 10, 8, seed=0, by_subject=True)

    @pytest.mark.parametrize("seed", range(20))
    def test_by_subject_finds_uneven_assignment(self, seed):
        sizes = {"A": 3, "B": 5, "C": 2}
        records = [
            ClipRecord(clip_id=f"{subject}-{i}", path=f"clips/{subject}-{i}.npy", label="walk", subject_id=subject)
            for subject, n in sizes.items()
            for i in range(n)
        ]
        train, test = split(DatasetManifest(tuple(records)), 5, 5, seed=seed, by_subject=True)
        assert len(train) == 5
        assert len(test) == 5
        assert {r.subject_id for r in train} == {"A", "C"}
        assert {r.subject_id for r in test} == {"B"}

    def test_by_subject_two_equal_subjects(self):
        manifest = make_manifest(10, subjects=2)
        train, test = split(manifest, 5, 5, seed=0, by_subject=True)
        assert len({r.subject_id for r in train}) == 1
        assert len({r.subject_id for r in test}) == 1
        assert {r.subject_id for r in train} != {r.subject_id for r in test}

    def test_by_subject_trims_within_chosen_subjects(self):
        manifest = make_manifest(40, subjects=4)
        train, test = split(manifest, 15, 7, seed=2, by_subject=True)
        assert len(train) == 15
        assert len(test) == 7
        assert {r.subject_id for r in train}.isdisjoint({r.subject_id for r in test})


class TestHoldoutAndClasses:
    def test_stratified_holdout_keeps_every_class(self):
        manifest = make_manifest(18 * 10)
        kept, held = stratified_holdout(manifest, 0.1, seed=0)
        assert len(held) == 18
        assert class_histogram(kept) == {name: 9 for name in ActivityLabels.NAMES}

    def test_holdout_ignores_record_order(self):
        manifest = make_manifest(90)
        reordered = DatasetManifest(tuple(reversed(manifest.records)))
        _, held = stratified_holdout(manifest, 0.2, seed=4)
        _, held_again = stratified_holdout(reordered, 0.2, seed=4)
        assert held.clip_ids() == held_again.clip_ids()

    def test_require_classes(self):
        manifest = make_manifest(3)
        assert require_classes(manifest, label_set(3)) == {"chat": 1, "clean": 1, "drink": 1}
        with pytest.raises(DatasetError, match="'dryer' has no clips"):
            require_classes(manifest, label_set(4))


class TestBuildMixed:
    def test_concatenates_variants(self, tmp_path):
        original = make_manifest(6, root=tmp_path / "orig")
        blurred = relabel_variant(make_manifest(6, root=tmp_path / "blur"), Variant.BLURRED)
        mixed = build_mixed(original, blurred)
        assert len(mixed) == 12
        assert mixed.sub_dataset == SubDataset.MIXED
        assert [r.variant for r in mixed].count(Variant.BLURRED) == 6
        assert mixed.resolve(mixed.records[6]) == tmp_path / "blur" / "clips" / "clip-00000.npy"

    def test_mismatched_ids(self):
        original = make_manifest(3)
        blurred = relabel_variant(make_manifest(2), Variant.BLURRED)
        with pytest.raises(DatasetError, match="differ in 1 clip_ids: clip-00002"):
            build_mixed(original, blurred)
