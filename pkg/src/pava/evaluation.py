"""Confusion matrices, per-class and macro metrics, and report files.

Conventions: rows of the confusion matrix are true labels, columns predictions; a metric
whose denominator is zero is 0; macro values are unweighted means over classes and the
reported spreads are population standard deviations across classes.
"""

import logging
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from pava.constants import Formats, SubDataset
from pava.dataset import DatasetManifest, label_set
from pava.errors import DatasetError, EvaluationError, PreprocessError
from pava.model import TrainedModel, forward
from pava.preprocess import GammaParams, PreprocessConfig, SampleSpec, prepare_clip
from pava.utils import log_progress, run_parallel
from pava.video import read_video

logger = logging.getLogger(__name__)


class Predictor(Protocol):
    """Maps a decoded uint8 clip to class probabilities."""

    predictor_id: str
    num_classes: int

    def predict(self, frames: np.ndarray, fps: float, seed: int) -> np.ndarray: ...


class ModelPredictor:
    """Single-checkpoint predictor."""

    def __init__(
        self,
        model: TrainedModel,
        predictor_id: str = "model",
        preprocess: PreprocessConfig | None = None,
        gamma: GammaParams | None = None,
    ):
        self.model = model
        self.predictor_id = predictor_id
        self.num_classes = model.config.num_classes
        self.preprocess = (preprocess or PreprocessConfig()).model_copy(
            update={"channel_mean": model.spec.channel_mean, "channel_std": model.spec.channel_std}
        )
        self.gamma = gamma or GammaParams()

    def predict(self, frames: np.ndarray, fps: float, seed: int) -> np.ndarray:
        sample = SampleSpec(n_frames=self.model.config.n_frames, seed=seed)
        clip = prepare_clip(
            frames, self.model.spec.input_resolution, self.preprocess, sample, self.gamma, False, seed, fps
        )
        return forward(clip, self.model).numpy().astype(np.float64)


def clip_seed(clip_id: str, seed: int) -> int:
    """Stable per-clip sampling seed."""
    return (zlib.crc32(clip_id.encode("utf-8")) + seed) % 2**31


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    labels: list[str]

    @classmethod
    def from_predictions(cls, y_true: list[int], y_pred: list[int], labels: list[str]) -> "ConfusionMatrix":
        counts = confusion_matrix(y_true, y_pred, labels=list(range(len(labels)))) if y_true else None
        if counts is None:
            counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        return cls(counts.astype(np.int64), list(labels))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        """trace / total, 0 for an empty matrix."""
        return float(np.trace(self.counts) / self.total) if self.total else 0.0


def per_class_scores(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(precision, recall, f1) per class; 0 wherever a denominator is 0."""
    n_classes = len(cm.labels)
    if cm.total == 0:
        zeros = np.zeros(n_classes, dtype=np.float64)
        return zeros, zeros.copy(), zeros.copy()
    # Expand the matrix back into (true, predicted) pairs
    true_idx, pred_idx = np.nonzero(cm.counts)
    repeats = cm.counts[true_idx, pred_idx]
    precision, recall, f1, _ = precision_recall_fscore_support(
        np.repeat(true_idx, repeats),
        np.repeat(pred_idx, repeats),
        labels=list(range(n_classes)),
        average=None,
        zero_division=0,
    )
    return precision.astype(np.float64), recall.astype(np.float64), f1.astype(np.float64)


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    return per_class_scores(cm)[2]


class ClassScores(BaseModel):
    precision: float
    recall: float
    f1: float
    support: int


class MacroScores(BaseModel):
    precision: float
    recall: float
    f1: float
    precision_std: float
    recall_std: float
    f1_std: float


class MetricsReport(BaseModel):
    """Contents of metrics.json."""

    model_config = ConfigDict(extra="forbid")

    schema_version: int = Formats.METRICS_SCHEMA_VERSION
    model_id: str
    sub_dataset: SubDataset | None = None
    n_clips: int
    failed_clips: list[str] = []
    labels: list[str]
    per_class: dict[str, ClassScores]
    macro: MacroScores
    accuracy_percent: float
    accuracy_std: float


def build_report(
    cm: ConfusionMatrix,
    model_id: str,
    sub_dataset: SubDataset | None = None,
    failed_clips: list[str] | None = None,
) -> MetricsReport:
    precision, recall, f1 = per_class_scores(cm)
    support = cm.counts.sum(axis=1)
    per_class = {
        label: ClassScores(
            precision=float(precision[i]), recall=float(recall[i]), f1=float(f1[i]), support=int(support[i])
        )
        for i, label in enumerate(cm.labels)
    }
    macro = MacroScores(
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
        precision_std=float(precision.std()),
        recall_std=float(recall.std()),
        f1_std=float(f1.std()),
    )
    return MetricsReport(
        model_id=model_id,
        sub_dataset=sub_dataset,
        n_clips=cm.total,
        failed_clips=failed_clips or [],
        labels=cm.labels,
        per_class=per_class,
        macro=macro,
        accuracy_percent=100.0 * cm.accuracy(),
        accuracy_std=100.0 * float(recall.std()),
    )


def evaluate(
    predictor: Predictor,
    manifest: DatasetManifest,
    seed: int = 0,
    workers: int = 1,
    quiet: bool = False,
) -> tuple[MetricsReport, ConfusionMatrix]:
    """Score a predictor on every clip of a manifest by argmax decision.

    Clips that fail to decode or preprocess are excluded and listed in failed_clips.

    Raises:
        EvaluationError: If a label lies outside the predictor's classes
    """
    labels = [label.name for label in label_set(predictor.num_classes)]
    foreign = sorted({r.label for r in manifest} - set(labels))
    if foreign:
        raise EvaluationError(f"Labels outside the predictor's {len(labels)} classes: {', '.join(foreign)}")

    def score(record) -> int | None:
        try:
            frames, fps = read_video(manifest.resolve(record))
            probabilities = predictor.predict(frames, fps, clip_seed(record.clip_id, seed))
        except (DatasetError, PreprocessError) as e:
            logger.warning(f"Excluding clip {record.clip_id}: {e.message}")
            return None
        return int(np.argmax(probabilities))

    predictions = run_parallel(score, list(manifest.records), workers)
    y_true, y_pred, failed = [], [], []
    for record, predicted in zip(manifest.records, predictions, strict=True):
        if predicted is None:
            failed.append(record.clip_id)
            continue
        y_true.append(record.label_index)
        y_pred.append(predicted)

    cm = ConfusionMatrix.from_predictions(y_true, y_pred, labels)
    report = build_report(cm, predictor.predictor_id, manifest.sub_dataset, failed)
    log_progress(
        "evaluate",
        quiet,
        model=predictor.predictor_id,
        clips=cm.total,
        failed=len(failed),
        accuracy=report.accuracy_percent,
    )
    return report, cm


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    return path


def report_emit(report: MetricsReport, cm: ConfusionMatrix, out_dir: str | Path) -> list[Path]:
    """Write metrics.json, confusion.csv and f1_by_class.csv into out_dir."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.json"
        with open(metrics_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(report.model_dump_json(indent=2) + "\n")

        confusion = pd.DataFrame(cm.counts, columns=cm.labels)
        confusion.insert(0, "label", cm.labels)
        f1 = pd.DataFrame({"label": report.labels, "f1": [report.per_class[name].f1 for name in report.labels]})
        paths = [metrics_path, _write_csv(confusion, out / "confusion.csv"), _write_csv(f1, out / "f1_by_class.csv")]
    except OSError as e:
        raise EvaluationError(f"Cannot write report to {out}: {e}") from e
    logger.info(f"Wrote report files to {out}")
    return paths


def emit_f1_comparison(original: MetricsReport, blurred: MetricsReport | None, out_dir: str | Path) -> Path:
    """Paired per-class F1 (label, f1_original, f1_blurred) for bar plotting.

    Without a blurred report only the label and f1_original columns are written.
    """
    if blurred is not None and original.labels != blurred.labels:
        raise EvaluationError("Reports cover different label sets")
    out = Path(out_dir)
    columns = {
        "label": original.labels,
        "f1_original": [original.per_class[name].f1 for name in original.labels],
    }
    if blurred is not None:
        columns["f1_blurred"] = [blurred.per_class[name].f1 for name in blurred.labels]
    frame = pd.DataFrame(columns)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return _write_csv(frame, out / "f1_by_class.csv")
    except OSError as e:
        raise EvaluationError(f"Cannot write {out / 'f1_by_class.csv'}: {e}") from e


def read_report(path: str | Path) -> MetricsReport:
    try:
        return MetricsReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise EvaluationError(f"Cannot read metrics report {path}: {e}") from e
