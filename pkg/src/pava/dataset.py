"""Clip manifests: ingest, persistence, splitting, and sub-dataset assembly.

A manifest is an immutable, ordered collection of ClipRecord entries persisted as
`manifest.jsonl` with exactly the fields clip_id, path, label, subject_id, split, variant.
"""

import json
import logging
from collections import Counter
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator

from pava.constants import ActivityLabels, EnvDefaults, Formats, Preprocessing, Split, SubDataset, Variant
from pava.errors import DatasetError
from pava.utils import run_parallel
from pava.video import probe_video

logger = logging.getLogger(__name__)

LABEL_FILE = "labels.csv"
UNKNOWN_SUBJECT = "unknown"


@dataclass(frozen=True)
class ActivityLabel:
    """One of the fixed activity classes."""

    name: str
    index: int

    @classmethod
    def from_name(cls, name: str) -> "ActivityLabel":
        try:
            return cls(name, ActivityLabels.NAMES.index(name))
        except ValueError:
            raise DatasetError(
                f"Unknown activity label {name!r}", suggestion=f"Known labels: {', '.join(ActivityLabels.NAMES)}"
            ) from None

    @classmethod
    def from_index(cls, index: int) -> "ActivityLabel":
        if not 0 <= index < ActivityLabels.COUNT:
            raise DatasetError(f"Label index {index} outside 0..{ActivityLabels.COUNT - 1}")
        return cls(ActivityLabels.NAMES[index], index)


LABELS: tuple[ActivityLabel, ...] = tuple(ActivityLabel(name, i) for i, name in enumerate(ActivityLabels.NAMES))


def label_set(num_classes: int = ActivityLabels.COUNT) -> tuple[ActivityLabel, ...]:
    """The first num_classes labels; desk-scale runs use a prefix so indices stay contiguous."""
    if not 2 <= num_classes <= ActivityLabels.COUNT:
        raise DatasetError(f"num_classes must be in 2..{ActivityLabels.COUNT}, got {num_classes}")
    return LABELS[:num_classes]


class ClipRecord(BaseModel):
    """One clip in a manifest."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    clip_id: str
    path: str
    label: str
    subject_id: str = UNKNOWN_SUBJECT
    split: Split = Split.TRAIN
    variant: Variant = Variant.ORIGINAL

    @field_validator("label")
    @classmethod
    def _known_label(cls, value: str) -> str:
        ActivityLabel.from_name(value)
        return value

    @property
    def activity(self) -> ActivityLabel:
        return ActivityLabel.from_name(self.label)

    @property
    def label_index(self) -> int:
        return ActivityLabels.NAMES.index(self.label)


def _infer_sub_dataset(records: Sequence[ClipRecord]) -> SubDataset:
    variants = {r.variant for r in records}
    if variants == {Variant.ORIGINAL, Variant.BLURRED}:
        return SubDataset.MIXED
    if variants == {Variant.BLURRED}:
        return SubDataset.BLURRED
    return SubDataset.ORIGINAL


@dataclass(frozen=True)
class DatasetManifest:
    """Immutable ordered clip catalogue.

    root is the directory relative record paths are resolved against.
    """

    records: tuple[ClipRecord, ...] = ()
    root: Path = field(default_factory=Path)
    sub_dataset: SubDataset | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        if self.sub_dataset is None:
            object.__setattr__(self, "sub_dataset", _infer_sub_dataset(self.records))
        keys = Counter((r.clip_id, r.variant) for r in self.records)
        duplicates = sorted(clip_id for (clip_id, _), n in keys.items() if n > 1)
        if duplicates:
            raise DatasetError(f"Duplicate clip_id in manifest: {', '.join(duplicates[:5])}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ClipRecord]:
        return iter(self.records)

    def resolve(self, record: ClipRecord) -> Path:
        """Absolute location of a record's clip file."""
        path = Path(record.path)
        return path if path.is_absolute() else self.root / path

    def with_records(self, records: Sequence[ClipRecord], sub_dataset: SubDataset | None = None) -> "DatasetManifest":
        return DatasetManifest(tuple(records), self.root, sub_dataset)

    def filter(self, split: Split | str | None = None, variant: Variant | str | None = None) -> "DatasetManifest":
        """Records matching the given split and/or variant."""
        records = [
            r
            for r in self.records
            if (split is None or r.split == Split(split)) and (variant is None or r.variant == Variant(variant))
        ]
        return self.with_records(records)

    def clip_ids(self) -> set[str]:
        return {r.clip_id for r in self.records}


@dataclass
class IngestIssue:
    """A clip that could not be ingested."""

    path: str
    reason: str


@dataclass
class IngestResult:
    manifest: DatasetManifest
    errors: list[IngestIssue]


def class_histogram(manifest: DatasetManifest, split: Split | str | None = None) -> dict[str, int]:
    """Clip count per label, in vocabulary order, for labels that occur."""
    counts = Counter(r.label for r in manifest.filter(split=split))
    return {name: counts[name] for name in ActivityLabels.NAMES if counts[name]}


def require_classes(manifest: DatasetManifest, labels: Sequence[ActivityLabel]) -> dict[str, int]:
    """Check every label has at least one clip.

    Raises:
        DatasetError: Naming the first empty class
    """
    counts = Counter(r.label for r in manifest)
    for label in labels:
        if counts[label.name] == 0:
            raise DatasetError(f"Class {label.name!r} has no clips in the manifest")
    return {label.name: counts[label.name] for label in labels}


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Write manifest.jsonl; paths under the manifest directory are stored relative to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    lines = []
    for record in manifest:
        clip_path = manifest.resolve(record).resolve()
        try:
            stored = clip_path.relative_to(base).as_posix()
        except ValueError:
            stored = str(clip_path)
        row = record.model_copy(update={"path": stored}).model_dump(mode="json")
        lines.append(json.dumps({name: row[name] for name in Formats.MANIFEST_FIELDS}, ensure_ascii=False))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(line + "\n" for line in lines))
    logger.info(f"Wrote {len(lines)} records to {path}")
    return path


def read_manifest(path: str | Path) -> DatasetManifest:
    """Load manifest.jsonl.

    Raises:
        DatasetError: On unreadable files, malformed lines, or unknown fields
    """
    path = Path(path)
    records = []
    try:
        with open(path, encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(ClipRecord.model_validate_json(line))
                except ValueError as e:
                    raise DatasetError(f"{path}:{line_number}: invalid manifest record", details=str(e)) from e
    except OSError as e:
        raise DatasetError(f"Cannot read manifest {path}: {e}") from e
    return DatasetManifest(tuple(records), path.parent.resolve())


def _read_exclusions(exclusion_file: str | Path | None) -> set[str]:
    if exclusion_file is None:
        return set()
    try:
        lines = Path(exclusion_file).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DatasetError(f"Cannot read exclusion list {exclusion_file}: {e}") from e
    return {line.strip() for line in lines if line.strip() and not line.startswith("#")}


def _discover(root: Path, label_map: Mapping[str, str]) -> list[ClipRecord]:
    """Candidate records from labels.csv if present, else per-class directories."""
    label_file = root / LABEL_FILE
    candidates = []
    if label_file.is_file():
        table = pd.read_csv(label_file, dtype=str).fillna("")
        missing = {"path", "label"} - set(table.columns)
        if missing:
            raise DatasetError(f"{label_file} lacks columns: {', '.join(sorted(missing))}")
        for row in table.itertuples(index=False):
            raw_label = str(row.label)
            label = label_map.get(raw_label, raw_label.lower())
            clip_path = Path(row.path)
            clip_id = getattr(row, "clip_id", "") or clip_path.stem
            subject = getattr(row, "subject_id", "") or UNKNOWN_SUBJECT
            candidates.append((clip_id, clip_path.as_posix(), raw_label, label, subject))
    else:
        for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            label = label_map.get(class_dir.name, class_dir.name.lower())
            for clip_path in sorted(class_dir.iterdir()):
                if clip_path.suffix.lower() in Preprocessing.VIDEO_SUFFIXES:
                    rel = clip_path.relative_to(root).as_posix()
                    candidates.append((f"{label}-{clip_path.stem}", rel, class_dir.name, label, UNKNOWN_SUBJECT))

    records = []
    for clip_id, rel, raw_label, label, subject in candidates:
        if label not in ActivityLabels.NAMES:
            raise DatasetError(
                f"Unknown label {raw_label!r} for {rel}", suggestion="Map it with a label_map entry or fix the label."
            )
        records.append(ClipRecord(clip_id=clip_id, path=rel, label=label, subject_id=subject))
    return records


def ingest(
    root_path: str | Path,
    label_map: Mapping[str, str] | None = None,
    exclusion_file: str | Path | None = None,
    workers: int = EnvDefaults.WORKERS,
) -> IngestResult:
    """Catalogue the clips under root_path.

    Args:
        root_path: Directory holding per-class subdirectories or a labels.csv file
        label_map: Optional alias table from directory/file labels to vocabulary names
        exclusion_file: Optional list of clip_ids to drop (label-noise exclusions)
        workers: Threads used to probe clip readability

    Returns:
        IngestResult with the manifest (variant=original, ordered by clip_id) and
        a list of record-level errors for unreadable clips

    Raises:
        DatasetError: If root_path is missing or a label is unknown
    """
    root = Path(root_path)
    if not root.is_dir():
        raise DatasetError(f"Dataset root {root} is not a directory")

    candidates = _discover(root, label_map or {})
    excluded = _read_exclusions(exclusion_file)
    if excluded:
        before = len(candidates)
        candidates = [c for c in candidates if c.clip_id not in excluded]
        logger.info(f"Excluded {before - len(candidates)} clips listed in {exclusion_file}")

    def check(record: ClipRecord) -> str | None:
        try:
            probe_video(root / record.path)
        except DatasetError as e:
            return e.message
        return None

    failures = run_parallel(check, candidates, workers)
    records, errors = [], []
    for record, failure in zip(candidates, failures, strict=True):
        if failure is None:
            records.append(record)
        else:
            logger.warning(f"Skipping unreadable clip {record.path}: {failure}")
            errors.append(IngestIssue(record.path, failure))

    records.sort(key=lambda r: r.clip_id)
    manifest = DatasetManifest(tuple(records), root.resolve())
    logger.info(f"Ingested {len(records)} clips from {root} ({len(errors)} errors)")
    return IngestResult(manifest, errors)


def _assign_subjects(sizes: Sequence[int], train_count: int, test_count: int) -> list[int] | None:
    """Side per subject (0 unused, 1 train, 2 test) whose totals cover both counts, or None.

    Reachable (train, test) totals capped at the targets are expanded one subject at a time,
    keeping a back-pointer per state so one assignment can be read back.
    """
    target = (train_count, test_count)
    steps: list[dict[tuple[int, int], tuple[tuple[int, int], int]]] = []
    frontier: set[tuple[int, int]] = {(0, 0)}
    for size in sizes:
        if target in frontier:
            break
        step: dict[tuple[int, int], tuple[tuple[int, int], int]] = {}
        for state in sorted(frontier):
            a, b = state
            for side, reached in ((1, (min(a + size, train_count), b)), (2, (a, min(b + size, test_count))), (0, state)):
                step.setdefault(reached, (state, side))
        steps.append(step)
        frontier = set(step)
    if target not in frontier:
        return None

    sides = [0] * len(sizes)
    state = target
    for i in range(len(steps) - 1, -1, -1):
        state, sides[i] = steps[i][state]
    return sides


def split(
    manifest: DatasetManifest,
    train_count: int,
    test_count: int,
    seed: int,
    by_subject: bool = False,
) -> tuple[DatasetManifest, DatasetManifest]:
    """Partition a manifest into disjoint train and test manifests.

    Records beyond train_count + test_count are left out. With by_subject, whole subjects
    are assigned to one side; a subject only partially needed to fill a side has its
    remaining clips dropped rather than moved to the other side.

    Raises:
        DatasetError: If the counts exceed the manifest or no subject-disjoint split fits
    """
    if train_count < 0 or test_count < 0:
        raise DatasetError("Split sizes must be non-negative")
    if train_count + test_count > len(manifest):
        raise DatasetError(f"Requested {train_count}+{test_count} clips but the manifest holds {len(manifest)}")

    rng = np.random.default_rng(seed)
    records = list(manifest.records)

    if not by_subject:
        order = rng.permutation(len(records))
        train = [records[i] for i in sorted(order[:train_count])]
        test = [records[i] for i in sorted(order[train_count : train_count + test_count])]
    else:
        by_id: dict[str, list[ClipRecord]] = {}
        for record in records:
            by_id.setdefault(record.subject_id, []).append(record)
        subjects = sorted(by_id)
        subjects = [subjects[i] for i in rng.permutation(len(subjects))]
        sides = _assign_subjects([len(by_id[s]) for s in subjects], train_count, test_count)
        if sides is None:
            blocker = max(sorted(by_id), key=lambda s: len(by_id[s]), default="<none>")
            raise DatasetError(
                f"No subject-disjoint split gives {train_count}/{test_count} clips; blocked by subject {blocker!r}",
                suggestion="Lower the requested counts or split without --by-subject.",
            )
        train_pool = [r for s, side in zip(subjects, sides, strict=True) if side == 1 for r in by_id[s]]
        test_pool = [r for s, side in zip(subjects, sides, strict=True) if side == 2 for r in by_id[s]]
        train, test = train_pool[:train_count], test_pool[:test_count]

    train_records = [r.model_copy(update={"split": Split.TRAIN}) for r in train]
    test_records = [r.model_copy(update={"split": Split.TEST}) for r in test]
    train_manifest = manifest.with_records(train_records, manifest.sub_dataset)
    test_manifest = manifest.with_records(test_records, manifest.sub_dataset)
    logger.info(f"Split {len(manifest)} clips into {len(train_manifest)} train / {len(test_manifest)} test")
    return train_manifest, test_manifest


def stratified_holdout(
    manifest: DatasetManifest, fraction: float, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Hold out about `fraction` of every class, never emptying a class.

    The choice depends on the clip_ids of each class, not on record order, so a redacted
    copy of a manifest holds out the same clips as its original.

    Returns:
        (kept, held_out), both in manifest order
    """
    if not 0.0 <= fraction < 1.0:
        raise DatasetError(f"Hold-out fraction must be in [0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    by_label: dict[str, list[int]] = {}
    for i, record in enumerate(manifest.records):
        by_label.setdefault(record.label, []).append(i)

    held: set[int] = set()
    for label in sorted(by_label):
        indices = sorted(by_label[label], key=lambda i: manifest.records[i].clip_id)
        if len(indices) < 2 or fraction == 0.0:
            continue
        n_hold = min(len(indices) - 1, max(1, round(fraction * len(indices))))
        held.update(int(i) for i in rng.choice(indices, size=n_hold, replace=False))

    kept = [r for i, r in enumerate(manifest.records) if i not in held]
    out = [r for i, r in enumerate(manifest.records) if i in held]
    return manifest.with_records(kept, manifest.sub_dataset), manifest.with_records(out, manifest.sub_dataset)


def build_mixed(original: DatasetManifest, blurred: DatasetManifest) -> DatasetManifest:
    """Concatenate original and redacted manifests into the mixed sub-dataset.

    Raises:
        DatasetError: Listing the symmetric difference if clip_id sets differ
    """
    difference = original.clip_ids() ^ blurred.clip_ids()
    if difference:
        listed = ", ".join(sorted(difference)[:10])
        raise DatasetError(f"Original and blurred manifests differ in {len(difference)} clip_ids: {listed}")

    root = original.root

    def rebased(manifest: DatasetManifest, variant: Variant) -> list[ClipRecord]:
        return [r.model_copy(update={"path": str(manifest.resolve(r)), "variant": variant}) for r in manifest]

    records = rebased(original, Variant.ORIGINAL) + rebased(blurred, Variant.BLURRED)
    return DatasetManifest(tuple(records), root, SubDataset.MIXED if records else None)


def relabel_variant(manifest: DatasetManifest, variant: Variant) -> DatasetManifest:
    """Copy of a manifest with every record tagged as the given variant."""
    records = [r.model_copy(update={"variant": variant}) for r in manifest]
    return replace(manifest, records=tuple(records), sub_dataset=None)
