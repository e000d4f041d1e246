"""Per-class F1-weighted ensembles of trained classifiers."""

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from pava.constants import ActivityLabels, EnsembleDefaults, Formats
from pava.dataset import ActivityLabel, DatasetManifest, stratified_holdout
from pava.errors import EnsembleError, ModelError
from pava.evaluation import ModelPredictor, evaluate, per_class_f1
from pava.model import TrainedModel
from pava.preprocess import GammaParams, PreprocessConfig
from pava.utils import run_parallel

logger = logging.getLogger(__name__)

EnsembleMode = Literal["soft_f1_weighted", "hard_per_class"]


class EnsembleSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: EnsembleMode = "soft_f1_weighted"
    calibration_fraction: float = Field(default=EnsembleDefaults.CALIBRATION_FRACTION, gt=0.0, lt=1.0)


@dataclass
class EnsembleSpec:
    """Member checkpoints plus their calibration F1 per class."""

    members: list[Path]
    f1_matrix: np.ndarray
    mode: EnsembleMode = "soft_f1_weighted"

    def __post_init__(self) -> None:
        self.f1_matrix = np.asarray(self.f1_matrix, dtype=np.float64)
        if self.f1_matrix.ndim != 2 or self.f1_matrix.shape[0] != len(self.members):
            raise EnsembleError(
                f"F1 matrix shape {self.f1_matrix.shape} does not match {len(self.members)} members"
            )
        if np.any(self.f1_matrix < 0) or np.any(self.f1_matrix > 1):
            raise EnsembleError("F1 matrix entries must lie in [0, 1]")

    @property
    def num_classes(self) -> int:
        return int(self.f1_matrix.shape[1])


@dataclass
class EnsemblePrediction:
    probabilities: np.ndarray
    per_member_probabilities: np.ndarray
    chosen_label: ActivityLabel


def compute_weights(f1_matrix: np.ndarray) -> np.ndarray:
    """Normalize each class column of the F1 matrix to sum to 1.

    Raises:
        EnsembleError: Naming the first class no member scores on
    """
    f1 = np.asarray(f1_matrix, dtype=np.float64)
    totals = f1.sum(axis=0)
    for c, total in enumerate(totals):
        if total <= 0:
            name = ActivityLabel.from_index(c).name if c < ActivityLabels.COUNT else str(c)
            raise EnsembleError(f"No member has a nonzero F1 for class {name!r}")
    return f1 / totals


def _renormalize(combined: np.ndarray) -> np.ndarray:
    total = combined.sum(axis=-1, keepdims=True)
    uniform = np.full_like(combined, 1.0 / combined.shape[-1])
    return np.where(total > 0, combined / np.where(total > 0, total, 1.0), uniform)


def combine(
    per_member_probabilities: np.ndarray, weights: np.ndarray, mode: EnsembleMode = "soft_f1_weighted"
) -> np.ndarray:
    """Combine member probabilities (M×C, or M×N×C for a batch) into C (or N×C).

    soft_f1_weighted: p[c] = Σ_m w[m, c]·p_m[c]; hard_per_class: p[c] is taken from the
    member with the largest weight for c. Both are renormalized to sum to 1.

    Raises:
        EnsembleError: On shape mismatch or an unknown mode
    """
    probabilities = np.asarray(per_member_probabilities, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or probabilities.shape[0] != weights.shape[0] or probabilities.shape[-1] != weights.shape[1]:
        raise EnsembleError(f"Probabilities {probabilities.shape} and weights {weights.shape} do not line up")

    # Broadcast weights over an optional batch axis
    w = weights if probabilities.ndim == 2 else weights[:, None, :]
    if mode == "soft_f1_weighted":
        combined = (w * probabilities).sum(axis=0)
    elif mode == "hard_per_class":
        best = np.argmax(weights, axis=0)
        columns = np.arange(weights.shape[1])
        combined = probabilities[best, columns] if probabilities.ndim == 2 else probabilities[best, :, columns].T
    else:
        raise EnsembleError(f"Unknown ensemble mode {mode!r}")
    return _renormalize(combined)


def calibration_split(
    manifest: DatasetManifest, fraction: float = EnsembleDefaults.CALIBRATION_FRACTION, seed: int = 0
) -> tuple[DatasetManifest, DatasetManifest]:
    """(fit, calibration) slices of a training manifest, stratified by class."""
    return stratified_holdout(manifest, fraction, seed)


def build_ensemble(
    member_paths: Sequence[str | Path],
    calibration_manifest: DatasetManifest,
    mode: EnsembleMode = "soft_f1_weighted",
    preprocess: PreprocessConfig | None = None,
    gamma: GammaParams | None = None,
    seed: int = 0,
    workers: int = 1,
    quiet: bool = False,
) -> EnsembleSpec:
    """Score each member on the calibration manifest and collect its per-class F1.

    Raises:
        EnsembleError: If a member cannot be loaded or evaluated, or members disagree on classes
    """
    if not member_paths:
        raise EnsembleError("An ensemble needs at least one member")
    rows, num_classes = [], None
    for path in member_paths:
        try:
            model = TrainedModel.load(path)
        except ModelError as e:
            raise EnsembleError(f"Cannot load ensemble member {path}: {e.message}") from e
        if num_classes is not None and model.config.num_classes != num_classes:
            raise EnsembleError(f"Member {path} predicts {model.config.num_classes} classes, expected {num_classes}")
        num_classes = model.config.num_classes
        predictor = ModelPredictor(model, Path(path).stem, preprocess, gamma)
        report, cm = evaluate(predictor, calibration_manifest, seed, workers, quiet)
        if report.failed_clips:
            raise EnsembleError(f"Member {path} failed on {len(report.failed_clips)} calibration clips")
        rows.append(per_class_f1(cm))
    return EnsembleSpec([Path(p) for p in member_paths], np.vstack(rows), mode)


def build_final_ensemble(
    original_paths: Sequence[str | Path],
    fine_tuned_paths: Sequence[str | Path],
    calibration_manifest: DatasetManifest,
    **kwargs,
) -> EnsembleSpec:
    """Originals plus their fine-tuned versions, soft F1-weighted.

    The full-scale configuration pairs four architectures with their four fine-tuned copies.
    """
    if len(original_paths) != len(fine_tuned_paths) or not original_paths:
        raise EnsembleError(
            f"Expected matching original and fine-tuned members, got {len(original_paths)} and {len(fine_tuned_paths)}"
        )
    if len(original_paths) != len(EnsembleDefaults.REFERENCE_MEMBERS):
        logger.info(f"Building a {len(original_paths)}+{len(fine_tuned_paths)} ensemble")
    kwargs.setdefault("mode", "soft_f1_weighted")
    return build_ensemble([*original_paths, *fine_tuned_paths], calibration_manifest, **kwargs)


def save_ensemble(spec: EnsembleSpec, path: str | Path) -> Path:
    """Write the versioned JSON ensemble spec; member paths are stored relative to it when possible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    members = []
    for member in spec.members:
        resolved = Path(member).resolve()
        try:
            members.append(resolved.relative_to(base).as_posix())
        except ValueError:
            members.append(str(resolved))
    payload = {
        "format": Formats.ENSEMBLE_FORMAT,
        "version": Formats.ENSEMBLE_VERSION,
        "mode": spec.mode,
        "members": members,
        "f1_matrix": spec.f1_matrix.tolist(),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    return path


def load_ensemble(path: str | Path) -> EnsembleSpec:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise EnsembleError(f"Cannot read ensemble spec {path}: {e}") from e
    if payload.get("format") != Formats.ENSEMBLE_FORMAT or payload.get("version") != Formats.ENSEMBLE_VERSION:
        raise EnsembleError(f"{path} is not a {Formats.ENSEMBLE_FORMAT} v{Formats.ENSEMBLE_VERSION} file")
    members = [Path(m) if Path(m).is_absolute() else path.parent / m for m in payload["members"]]
    return EnsembleSpec(members, np.asarray(payload["f1_matrix"]), payload["mode"])


class EnsemblePredictor:
    """Runs every member on a clip (each at its own resolution) and combines them."""

    def __init__(
        self,
        spec: EnsembleSpec,
        preprocess: PreprocessConfig | None = None,
        gamma: GammaParams | None = None,
        predictor_id: str = "ensemble",
        device: str = "cpu",
        workers: int = 1,
    ):
        self.spec = spec
        self.weights = compute_weights(spec.f1_matrix)
        self.predictor_id = predictor_id
        self.num_classes = spec.num_classes
        self.workers = workers
        self.members = []
        for path in spec.members:
            try:
                model = TrainedModel.load(path, device=device)
            except ModelError as e:
                raise EnsembleError(f"Cannot load ensemble member {path}: {e.message}") from e
            if model.config.num_classes != self.num_classes:
                raise EnsembleError(
                    f"Member {path} predicts {model.config.num_classes} classes, spec has {self.num_classes}"
                )
            self.members.append(ModelPredictor(model, Path(path).stem, preprocess, gamma))

    def predict_detailed(self, frames: np.ndarray, fps: float, seed: int) -> EnsemblePrediction:
        per_member = np.stack(run_parallel(lambda m: m.predict(frames, fps, seed), self.members, self.workers))
        probabilities = combine(per_member, self.weights, self.spec.mode)
        return EnsemblePrediction(probabilities, per_member, ActivityLabel.from_index(int(np.argmax(probabilities))))

    def predict(self, frames: np.ndarray, fps: float, seed: int) -> np.ndarray:
        return self.predict_detailed(frames, fps, seed).probabilities
