"""Balanced mini-batch training, plateau LR scheduling, and fine-tuning on redacted clips."""

import copy
import logging
import math
from collections import Counter
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, Field
from torch.optim.lr_scheduler import ReduceLROnPlateau
from torch.utils.data import DataLoader, Dataset, Sampler

from pava.constants import Formats, SubDataset, TrainingDefaults
from pava.dataset import LABELS, ActivityLabel, DatasetManifest, label_set, require_classes, stratified_holdout
from pava.errors import DatasetError, TrainingError
from pava.model import TrainedModel
from pava.preprocess import GammaParams, PreprocessConfig, SampleSpec, prepare_clip
from pava.utils import log_progress
from pava.video import read_video

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=TrainingDefaults.EPOCHS, ge=1)
    lr0: float = Field(default=TrainingDefaults.LR0, gt=0.0)
    patience: int = Field(default=TrainingDefaults.PATIENCE, ge=1)
    factor: float = Field(default=TrainingDefaults.FACTOR, gt=0.0, lt=1.0)
    per_class_in_batch: int = Field(default=TrainingDefaults.PER_CLASS_IN_BATCH, ge=1)
    seed: int = 0
    hflip_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    val_fraction: float = Field(default=TrainingDefaults.VAL_FRACTION, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    grad_clip: float | None = Field(default=None, gt=0.0)
    eval_batch_size: int = Field(default=8, ge=1)
    loader_workers: int = Field(default=0, ge=0)
    finetune_epochs: int | None = Field(default=None, ge=0)
    finetune_lr0: float | None = Field(default=None, gt=0.0)


@dataclass
class BalancedBatchPlan:
    """One epoch of batches, each holding per_class_in_batch clips of every class."""

    batches: list[list[str]]
    indices: list[list[int]]
    per_class_in_batch: int
    labels: list[str]
    compositions: list[Counter] = field(default_factory=list)


def balanced_batches(
    manifest: DatasetManifest,
    per_class_in_batch: int,
    seed: int | Sequence[int],
    labels: Sequence[ActivityLabel] = LABELS,
) -> BalancedBatchPlan:
    """Plan one epoch of class-balanced batches.

    The epoch has ceil(largest class / k) batches. Each class contributes k clips per
    batch, drawn from successive shuffles of that class so minority classes are
    oversampled and every clip is used before any is repeated.

    Raises:
        DatasetError: If a class has no clips
    """
    counts = require_classes(manifest, labels)
    k = per_class_in_batch
    rng = np.random.default_rng(seed)
    by_label: dict[str, list[int]] = {label.name: [] for label in labels}
    for i, record in enumerate(manifest.records):
        if record.label in by_label:
            by_label[record.label].append(i)

    n_batches = math.ceil(max(counts.values()) / k)
    demand = n_batches * k
    streams = {}
    for label in labels:
        pool = np.asarray(by_label[label.name])
        shuffles = [rng.permutation(pool) for _ in range(math.ceil(demand / len(pool)))]
        streams[label.name] = np.concatenate(shuffles)[:demand]

    plan = BalancedBatchPlan([], [], k, [label.name for label in labels])
    for b in range(n_batches):
        batch = np.concatenate([streams[label.name][b * k : (b + 1) * k] for label in labels])
        batch = rng.permutation(batch)
        plan.indices.append([int(i) for i in batch])
        plan.batches.append([manifest.records[i].clip_id for i in batch])
        plan.compositions.append(Counter(manifest.records[i].label for i in batch))
    return plan


class BalancedBatchSampler(Sampler[list[tuple[int, int]]]):
    """Yields balanced batches of (record index, sample seed); reshuffled per epoch."""

    def __init__(self, manifest: DatasetManifest, labels: Sequence[ActivityLabel], per_class_in_batch: int, seed: int):
        self.manifest = manifest
        self.labels = list(labels)
        self.per_class_in_batch = per_class_in_batch
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        largest = max(require_classes(self.manifest, self.labels).values())
        return math.ceil(largest / self.per_class_in_batch)

    def __iter__(self) -> Iterator[list[tuple[int, int]]]:
        plan = balanced_batches(self.manifest, self.per_class_in_batch, [self.seed, self.epoch], self.labels)
        seeds = np.random.default_rng([self.seed, self.epoch, 1])
        for batch in plan.indices:
            yield [(i, int(s)) for i, s in zip(batch, seeds.integers(0, 2**31, size=len(batch)), strict=True)]


class ClipDataset(Dataset):
    """Decodes and preprocesses manifest clips on demand.

    Items are record indices (evaluation) or (record index, sample seed) pairs (training).
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        model: TrainedModel,
        preprocess: PreprocessConfig,
        gamma: GammaParams,
        train: bool = False,
        seed: int = 0,
    ):
        self.manifest = manifest
        self.resolution = model.spec.input_resolution
        self.preprocess = preprocess.model_copy(
            update={"channel_mean": model.spec.channel_mean, "channel_std": model.spec.channel_std}
        )
        self.sample = SampleSpec(n_frames=model.config.n_frames, seed=seed)
        self.gamma = gamma
        self.train = train
        self.seed = seed

    def __len__(self) -> int:
        return len(self.manifest)

    def __getitem__(self, item: int | tuple[int, int]) -> tuple[torch.Tensor, int]:
        index, sample_seed = item if isinstance(item, tuple) else (item, self.seed + item)
        record = self.manifest.records[index]
        frames, fps = read_video(self.manifest.resolve(record))
        clip = prepare_clip(
            frames, self.resolution, self.preprocess, self.sample, self.gamma, self.train, sample_seed, fps
        )
        return clip, record.label_index


def cross_entropy(probabilities: torch.Tensor, labels: torch.Tensor | int) -> torch.Tensor:
    """Mean of -ln p[label] over the batch, with p clamped below at 1e-12."""
    if probabilities.dim() == 1:
        probabilities = probabilities.unsqueeze(0)
    labels = torch.as_tensor(labels, device=probabilities.device).reshape(-1).long()
    picked = probabilities.gather(1, labels.unsqueeze(1)).squeeze(1)
    return -torch.log(picked.clamp_min(TrainingDefaults.MIN_PROBABILITY)).mean()


def make_scheduler(optimizer: torch.optim.Optimizer, cfg: TrainConfig) -> ReduceLROnPlateau:
    """Plateau scheduler on validation loss.

    torch decays once the bad-epoch count exceeds its patience, so it gets patience - 1
    for the decay to land on the cfg.patience-th non-improving epoch.
    """
    return ReduceLROnPlateau(
        optimizer, mode="min", factor=cfg.factor, patience=cfg.patience - 1, threshold=0.0, threshold_mode="rel"
    )


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainResult:
    model: TrainedModel
    history: list[EpochRecord]
    best_epoch: int | None = None


def write_history(history: Sequence[EpochRecord], path: str | Path) -> Path:
    """history.csv with columns epoch,train_loss,val_loss,val_acc,lr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([vars(r) for r in history], columns=list(Formats.HISTORY_COLUMNS))
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def _validation_split(
    train_manifest: DatasetManifest, val_manifest: DatasetManifest | None, cfg: TrainConfig
) -> tuple[DatasetManifest, DatasetManifest]:
    if val_manifest is not None:
        return train_manifest, val_manifest
    if cfg.val_fraction == 0.0:
        return train_manifest, train_manifest
    kept, held = stratified_holdout(train_manifest, cfg.val_fraction, cfg.seed)
    if len(held) == 0:
        return train_manifest, train_manifest
    logger.info(f"Holding out {len(held)} of {len(train_manifest)} training clips for validation")
    return kept, held


@torch.no_grad()
def _validate(model: TrainedModel, loader: DataLoader) -> tuple[float, float]:
    model.module.eval()
    device = next(model.module.parameters()).device
    total_loss, correct, seen = 0.0, 0, 0
    for clips, labels in loader:
        probabilities = model.module(clips.to(device))
        labels = labels.to(device)
        total_loss += float(cross_entropy(probabilities, labels)) * len(labels)
        correct += int((probabilities.argmax(dim=1) == labels).sum())
        seen += len(labels)
    return total_loss / seen, correct / seen


def _fit(
    model: TrainedModel,
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    cfg: TrainConfig,
    epochs: int,
    lr0: float,
    preprocess: PreprocessConfig,
    gamma: GammaParams,
    checkpoint_path: Path | None,
    quiet: bool,
) -> tuple[list[EpochRecord], int | None]:
    labels = label_set(model.config.num_classes)
    foreign = sorted({r.label for r in train_manifest} - {label.name for label in labels})
    if foreign:
        raise TrainingError(f"Labels outside the model's {len(labels)} classes: {', '.join(foreign)}")
    if len(val_manifest) == 0:
        raise TrainingError("Validation manifest is empty")
    try:
        sampler = BalancedBatchSampler(train_manifest, labels, cfg.per_class_in_batch, cfg.seed)
        len(sampler)
    except DatasetError as e:
        raise TrainingError(f"Cannot build balanced batches: {e.message}") from e

    torch.manual_seed(cfg.seed)
    train_preprocess = preprocess.model_copy(update={"hflip_prob": cfg.hflip_prob})
    train_data = ClipDataset(train_manifest, model, train_preprocess, gamma, train=True, seed=cfg.seed)
    val_data = ClipDataset(val_manifest, model, preprocess, gamma, train=False, seed=cfg.seed)
    train_loader = DataLoader(train_data, batch_sampler=sampler, num_workers=cfg.loader_workers)
    val_loader = DataLoader(val_data, batch_size=cfg.eval_batch_size, shuffle=False, num_workers=cfg.loader_workers)

    module = model.module
    device = next(module.parameters()).device
    trainable = [p for p in module.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=lr0, weight_decay=cfg.weight_decay)
    scheduler = make_scheduler(optimizer, cfg)

    history: list[EpochRecord] = []
    best: tuple[float, float] | None = None
    best_state: dict[str, torch.Tensor] | None = None
    best_epoch: int | None = None

    for epoch in range(1, epochs + 1):
        lr = optimizer.param_groups[0]["lr"]
        sampler.set_epoch(epoch)
        module.train()
        total, seen = 0.0, 0
        for batch_index, (clips, targets) in enumerate(train_loader):
            clips, targets = clips.to(device), targets.to(device)
            loss = cross_entropy(module(clips), targets)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"Non-finite loss {float(loss)} at epoch {epoch}, batch {batch_index} (lr={lr})",
                    details=f"clip batch of {len(targets)} with labels {targets.tolist()}",
                )
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(trainable, cfg.grad_clip)
            optimizer.step()
            total += float(loss) * len(targets)
            seen += len(targets)

        val_loss, val_acc = _validate(model, val_loader)
        record = EpochRecord(epoch, total / seen, val_loss, val_acc, lr)
        history.append(record)
        log_progress("epoch", quiet, **vars(record))
        scheduler.step(val_loss)

        # Higher accuracy wins; ties go to the lower validation loss
        if best is None or (val_acc, -val_loss) > best:
            best = (val_acc, -val_loss)
            best_state = copy.deepcopy(module.state_dict())
            best_epoch = epoch
            if checkpoint_path is not None:
                model.save(checkpoint_path)

    if best_state is not None:
        module.load_state_dict(best_state)
    module.eval()
    return history, best_epoch


def train(
    model: TrainedModel,
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest | None,
    cfg: TrainConfig,
    preprocess: PreprocessConfig | None = None,
    gamma: GammaParams | None = None,
    checkpoint_path: str | Path | None = None,
    quiet: bool = False,
) -> TrainResult:
    """Train a classifier on balanced batches and keep the best validation epoch.

    Without a val_manifest, a stratified val_fraction of the training clips is held out.

    Raises:
        TrainingError: On a non-finite loss, an empty manifest, or an empty class
    """
    if len(train_manifest) == 0:
        raise TrainingError("Training manifest is empty")
    fit_manifest, val = _validation_split(train_manifest, val_manifest, cfg)
    model.provenance = model.provenance.model_copy(update={"trained_on": train_manifest.sub_dataset})
    history, best_epoch = _fit(
        model,
        fit_manifest,
        val,
        cfg,
        cfg.epochs,
        cfg.lr0,
        preprocess or PreprocessConfig(),
        gamma or GammaParams(),
        Path(checkpoint_path) if checkpoint_path else None,
        quiet,
    )
    logger.info(f"Training finished; best epoch {best_epoch}")
    return TrainResult(model, history, best_epoch)


def fine_tune(
    model: TrainedModel,
    blurred_manifest: DatasetManifest,
    cfg: TrainConfig,
    val_manifest: DatasetManifest | None = None,
    preprocess: PreprocessConfig | None = None,
    gamma: GammaParams | None = None,
    checkpoint_path: str | Path | None = None,
    quiet: bool = False,
) -> TrainResult:
    """Continue training an original-trained model on redacted clips.

    The input model is left untouched; the result is a copy whose provenance records
    fine_tuned_on. Epochs and lr0 come from cfg.finetune_epochs / cfg.finetune_lr0 when
    set, else from cfg.epochs / cfg.lr0. Zero epochs returns an exact copy.

    Raises:
        TrainingError: If the model was not trained on the original sub-dataset, or as train
    """
    if model.provenance.trained_on != SubDataset.ORIGINAL:
        raise TrainingError(
            f"Fine-tuning expects a model trained on the original clips, got {model.provenance.trained_on}"
        )
    if len(blurred_manifest) == 0:
        raise TrainingError("Fine-tuning manifest is empty")

    tuned = TrainedModel(
        model.spec,
        model.config,
        copy.deepcopy(model.module),
        model.provenance.model_copy(update={"fine_tuned_on": blurred_manifest.sub_dataset}),
    )
    epochs = cfg.finetune_epochs if cfg.finetune_epochs is not None else cfg.epochs
    if epochs == 0:
        return TrainResult(tuned, [], None)

    fit_manifest, val = _validation_split(blurred_manifest, val_manifest, cfg)
    history, best_epoch = _fit(
        tuned,
        fit_manifest,
        val,
        cfg,
        epochs,
        cfg.finetune_lr0 or cfg.lr0,
        preprocess or PreprocessConfig(),
        gamma or GammaParams(),
        Path(checkpoint_path) if checkpoint_path else None,
        quiet,
    )
    logger.info(f"Fine-tuning finished; best epoch {best_epoch}")
    return TrainResult(tuned, history, best_epoch)
