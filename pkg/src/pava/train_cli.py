# flake8: noqa: E304

"""Training commands: train a classifier and fine-tune it on redacted clips."""

import logging
from pathlib import Path

import click

from pava.config import RunConfig, dump_run_config
from pava.dataset import DatasetManifest, read_manifest
from pava.ensemble import calibration_split
from pava.model import TrainedModel, build_model
from pava.options import (
    config_option,
    ensure_out_dir,
    existing_file,
    is_quiet,
    out_option,
    resolve_config,
    seed_option,
    split_option,
    workers_option,
)
from pava.training import TrainResult, fine_tune, train, write_history
from pava.utils import print_message, spinner

logger = logging.getLogger(__name__)

MODEL_FILE = "model.ckpt"
HISTORY_FILE = "history.csv"
RUN_CONFIG_FILE = "run_config.yaml"


def _inferred_num_classes(manifest: DatasetManifest) -> int:
    """Smallest vocabulary prefix covering every label of the manifest."""
    return max(2, max((r.label_index for r in manifest), default=0) + 1)


def _loader_workers(run: RunConfig, workers: int | None) -> RunConfig:
    if workers is None:
        return run
    train_config = run.train.model_copy(update={"loader_workers": 0 if workers == 1 else workers})
    return run.model_copy(update={"train": train_config})


def _fit_records(manifest: DatasetManifest, split_name: str, hold_out: bool, run: RunConfig) -> DatasetManifest:
    """Records to fit on: the requested split minus the ensemble calibration slice."""
    if split_name != "all":
        manifest = manifest.filter(split=split_name)
    if hold_out:
        manifest, held = calibration_split(manifest, run.ensemble.calibration_fraction, run.seed)
        logger.info(f"Leaving {len(held)} clips out for ensemble calibration")
    return manifest

holdout_option = click.option(
    "--calibration-holdout/--no-calibration-holdout",
    "hold_out",
    default=True,
    show_default=True,
    help="Leave out the slice ensemble-build calibrates on (ensemble.calibration_fraction)",
)


def _write_outputs(result: TrainResult, run: RunConfig, out_dir: Path, quiet: bool) -> None:
    result.model.save(out_dir / MODEL_FILE)
    write_history(result.history, out_dir / HISTORY_FILE)
    (out_dir / RUN_CONFIG_FILE).write_text(dump_run_config(run), encoding="utf-8")
    if not quiet:
        best = f" (best epoch {result.best_epoch})" if result.best_epoch is not None else ""
        print_message(f"Wrote {out_dir / MODEL_FILE}{best}", "success")


@click.command(name="train")
@click.option("--manifest", "manifest_path", required=True, type=existing_file, help="Training manifest")
@click.option("--val-manifest", type=existing_file, help="Validation manifest (default: stratified hold-out)")
@split_option
@holdout_option
@out_option
@click.option("--resume", type=existing_file, help="Continue training from a checkpoint")
@click.option("--backbone", default=None, help="Feature extractor name, e.g. wide_resnet101 or tiny_test_backbone")
@click.option("--num-classes", type=click.IntRange(2, 18), default=None, help="Classes (default: inferred from labels)")
@click.option("--epochs", type=click.IntRange(min=1), default=None)
@click.option("--lr", type=click.FloatRange(min=0.0, min_open=True), default=None, help="Initial learning rate")
@click.option("--attention/--no-attention", default=None, help="Framewise attention over LSTM states")
@seed_option
@workers_option
@config_option
@click.pass_context
def train_command(
    ctx: click.Context,
    manifest_path: Path,
    val_manifest: Path | None,
    split_name: str,
    hold_out: bool,
    out: Path,
    resume: Path | None,
    backbone: str | None,
    num_classes: int | None,
    epochs: int | None,
    lr: float | None,
    attention: bool | None,
    seed: int | None,
    workers: int | None,
    config_path: Path | None,
) -> None:
    """Train an activity classifier; writes model.ckpt, history.csv and run_config.yaml to OUT."""
    quiet = is_quiet(ctx)
    run = resolve_config(
        config_path,
        seed=seed,
        workers=workers,
        model={"backbone": backbone, "classifier": {"attention": attention, "num_classes": num_classes}},
        train={"epochs": epochs, "lr0": lr},
    )
    run = _loader_workers(run, workers)
    manifest = _fit_records(read_manifest(manifest_path), split_name, hold_out, run)
    validation = read_manifest(val_manifest) if val_manifest else None

    classifier = run.model.classifier
    if "num_classes" not in classifier.model_fields_set:
        classifier = classifier.model_copy(update={"num_classes": _inferred_num_classes(manifest)})
        logger.info(f"Training {classifier.num_classes} classes inferred from {manifest_path}")
    classifier = classifier.model_copy(update={"n_frames": run.sample.n_frames})
    run = run.model_copy(update={"model": run.model.model_copy(update={"classifier": classifier})})

    out_dir = ensure_out_dir(out)
    with spinner("Loading classifier", quiet):
        if resume is not None:
            model = TrainedModel.load(resume, device=run.device)
        else:
            model = build_model(run.model, seed=run.seed, device=run.device)

    result = train(model, manifest, validation, run.train, run.preprocess, run.gamma, out_dir / MODEL_FILE, quiet)
    _write_outputs(result, run, out_dir, quiet)


@click.command()
@click.option("--model", "model_path", required=True, type=existing_file, help="Checkpoint trained on original clips")
@click.option("--manifest", "manifest_path", required=True, type=existing_file, help="Blurred training manifest")
@click.option("--val-manifest", type=existing_file, help="Validation manifest (default: stratified hold-out)")
@split_option
@holdout_option
@out_option
@click.option("--epochs", type=click.IntRange(min=0), default=None, help="Fine-tuning epochs (0 copies the model)")
@click.option("--lr", type=click.FloatRange(min=0.0, min_open=True), default=None, help="Fine-tuning learning rate")
@seed_option
@workers_option
@config_option
@click.pass_context
def finetune(
    ctx: click.Context,
    model_path: Path,
    manifest_path: Path,
    val_manifest: Path | None,
    split_name: str,
    hold_out: bool,
    out: Path,
    epochs: int | None,
    lr: float | None,
    seed: int | None,
    workers: int | None,
    config_path: Path | None,
) -> None:
    """Fine-tune an original-trained checkpoint on blurred clips into OUT."""
    quiet = is_quiet(ctx)
    run = resolve_config(config_path, seed=seed, workers=workers, train={"finetune_epochs": epochs, "finetune_lr0": lr})
    run = _loader_workers(run, workers)
    with spinner("Loading classifier", quiet):
        model = TrainedModel.load(model_path, device=run.device)
    manifest = _fit_records(read_manifest(manifest_path), split_name, hold_out, run)
    validation = read_manifest(val_manifest) if val_manifest else None

    out_dir = ensure_out_dir(out)
    result = fine_tune(model, manifest, run.train, validation, run.preprocess, run.gamma, out_dir / MODEL_FILE, quiet)
    _write_outputs(result, run, out_dir, quiet)
