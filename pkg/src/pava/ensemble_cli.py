# flake8: noqa: E304

"""Ensemble commands: build an F1-weighted ensemble and predict with it (or a single model)."""

import logging
from pathlib import Path

import click
import numpy as np
import pandas as pd

from pava.config import RunConfig
from pava.dataset import label_set, read_manifest
from pava.ensemble import (
    EnsemblePredictor,
    build_ensemble,
    build_final_ensemble,
    calibration_split,
    load_ensemble,
    save_ensemble,
)
from pava.errors import DatasetError, PreprocessError
from pava.evaluation import ModelPredictor, Predictor, clip_seed
from pava.model import TrainedModel
from pava.options import (
    config_option,
    ensure_out_dir,
    existing_file,
    is_quiet,
    out_option,
    require_one,
    resolve_config,
    seed_option,
    split_option,
    workers_option,
)
from pava.utils import log_progress, print_message, run_parallel, spinner
from pava.video import read_video

logger = logging.getLogger(__name__)

ENSEMBLE_FILE = "ensemble.json"
PREDICTIONS_FILE = "predictions.csv"


def load_predictor(model_path: Path | None, ensemble_path: Path | None, run: RunConfig, quiet: bool) -> Predictor:
    """Single-checkpoint or ensemble predictor, whichever was given."""
    require_one(model=model_path, ensemble=ensemble_path)
    with spinner("Loading classifier", quiet):
        if ensemble_path is not None:
            return EnsemblePredictor(
                load_ensemble(ensemble_path), run.preprocess, run.gamma, ensemble_path.stem, run.device, run.workers
            )
        model = TrainedModel.load(model_path, device=run.device)
        return ModelPredictor(model, model_path.stem, run.preprocess, run.gamma)


@click.command(name="ensemble-build")
@click.option("--member", "members", multiple=True, type=existing_file, help="Member checkpoint (repeatable)")
@click.option("--original", "originals", multiple=True, type=existing_file, help="Original-trained member (repeatable)")
@click.option("--fine-tuned", "fine_tuned", multiple=True, type=existing_file, help="Fine-tuned member (repeatable)")
@click.option(
    "--calibration",
    "calibration_path",
    required=True,
    type=existing_file,
    help="Training manifest whose held-out calibration slice scores the members",
)
@click.option(
    "--calibration-fraction",
    type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True),
    default=None,
    help="Share of each class held out for scoring members (default: ensemble.calibration_fraction)",
)
@split_option
@click.option("--mode", type=click.Choice(["soft_f1_weighted", "hard_per_class"]), default=None)
@out_option
@seed_option
@workers_option
@config_option
@click.pass_context
def ensemble_build(
    ctx: click.Context,
    members: tuple[Path, ...],
    originals: tuple[Path, ...],
    fine_tuned: tuple[Path, ...],
    calibration_path: Path,
    calibration_fraction: float | None,
    split_name: str,
    mode: str | None,
    out: Path,
    seed: int | None,
    workers: int | None,
    config_path: Path | None,
) -> None:
    """Score member checkpoints on the calibration slice of a manifest and write OUT/ensemble.json.

    The slice is the one `train` and `finetune` leave out with the same seed and fraction.
    """
    quiet = is_quiet(ctx)
    if members and (originals or fine_tuned):
        raise click.UsageError("Use either --member or --original/--fine-tuned, not both")
    if not members and not originals:
        raise click.UsageError("Give at least one --member, or --original with matching --fine-tuned")

    settings = {"mode": mode, "calibration_fraction": calibration_fraction}
    run = resolve_config(config_path, seed=seed, workers=workers, ensemble=settings)
    calibration = read_manifest(calibration_path)
    if split_name != "all":
        calibration = calibration.filter(split=split_name)
    _, calibration = calibration_split(calibration, run.ensemble.calibration_fraction, run.seed)
    logger.info(f"Calibrating on {len(calibration)} held-out clips")

    options = {
        "mode": run.ensemble.mode,
        "preprocess": run.preprocess,
        "gamma": run.gamma,
        "seed": run.seed,
        "workers": run.workers,
        "quiet": quiet,
    }
    if members:
        spec = build_ensemble(list(members), calibration, **options)
    else:
        spec = build_final_ensemble(list(originals), list(fine_tuned), calibration, **options)
    path = save_ensemble(spec, ensure_out_dir(out) / ENSEMBLE_FILE)
    if not quiet:
        print_message(f"Wrote {path} with {len(spec.members)} members", "success")


def _clip_inputs(in_path: Path) -> list[tuple[str, Path, str]]:
    """(clip_id, path, true label) for a manifest, or a single unlabelled clip."""
    if in_path.suffix.lower() == ".jsonl":
        manifest = read_manifest(in_path)
        return [(r.clip_id, manifest.resolve(r), r.label) for r in manifest]
    return [(in_path.stem, in_path, "")]


@click.command()
@click.option("--ensemble", "ensemble_path", type=existing_file, help="Ensemble spec (ensemble.json)")
@click.option("--model", "model_path", type=existing_file, help="Single checkpoint")
@click.option("--in", "in_path", required=True, type=existing_file, help="A clip file or a manifest (.jsonl)")
@out_option
@seed_option
@workers_option
@config_option
@click.pass_context
def predict(
    ctx: click.Context,
    ensemble_path: Path | None,
    model_path: Path | None,
    in_path: Path,
    out: Path,
    seed: int | None,
    workers: int | None,
    config_path: Path | None,
) -> None:
    """Classify a clip or every clip of a manifest into OUT/predictions.csv."""
    quiet = is_quiet(ctx)
    run = resolve_config(config_path, seed=seed, workers=workers)
    predictor = load_predictor(model_path, ensemble_path, run, quiet)
    labels = [label.name for label in label_set(predictor.num_classes)]
    clips = _clip_inputs(in_path)

    def classify(clip: tuple[str, Path, str]) -> np.ndarray | None:
        clip_id, path, _ = clip
        try:
            frames, fps = read_video(path)
            return predictor.predict(frames, fps, clip_seed(clip_id, run.seed))
        except (DatasetError, PreprocessError) as e:
            logger.warning(f"Skipping clip {clip_id}: {e.message}")
            return None

    rows = []
    for (clip_id, _, true_label), probabilities in zip(clips, run_parallel(classify, clips, run.workers), strict=True):
        if probabilities is None:
            continue
        row = {"clip_id": clip_id, "label": true_label, "predicted": labels[int(np.argmax(probabilities))]}
        row.update({f"p_{name}": float(p) for name, p in zip(labels, probabilities, strict=True)})
        rows.append(row)

    columns = ["clip_id", "label", "predicted", *(f"p_{name}" for name in labels)]
    path = ensure_out_dir(out) / PREDICTIONS_FILE
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, lineterminator="\n", float_format="%.6f")
    log_progress("predict", quiet, clips=len(rows), skipped=len(clips) - len(rows), out=path)
