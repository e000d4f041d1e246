# flake8: noqa: E304

"""Redaction command: blur sensitive objects in a clip or every clip of a manifest."""

from pathlib import Path

import click

from pava.backends import BACKEND_NAMES, backend_factory
from pava.constants import MaskFormat
from pava.dataset import read_manifest
from pava.options import (
    config_option,
    ensure_out_dir,
    is_quiet,
    out_option,
    resolve_config,
    seed_option,
    workers_option,
)
from pava.privacy import redact_file, redact_manifest, write_anomaly_summary
from pava.utils import log_progress, print_message, spinner

MANIFEST_SUFFIX = ".jsonl"


def _default_masks_dir(in_path: Path, backend: str) -> Path | None:
    """synth and redact --save-detections leave masks next to the manifest."""
    if backend == "ref":
        return None
    return in_path.parent / ("masks" if backend == "fake" else "detections")


@click.command()
@click.option(
    "--in",
    "in_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="A clip file or a manifest (.jsonl)",
)
@out_option
@click.option("--backend", type=click.Choice(BACKEND_NAMES), default=None, help="Segmentation backend (default: ref)")
@click.option(
    "--masks-dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="Mask or detection files for the fake and file backends (default: next to the input)",
)
@click.option(
    "--sigma", type=click.FloatRange(min=0.0, min_open=True), default=None, help="Gaussian blur sigma in pixels"
)
@click.option(
    "--threshold",
    type=click.FloatRange(0.0, 1.0),
    default=None,
    help="Minimum detection confidence for a sensitive object",
)
@click.option(
    "--anomaly-threshold",
    "anomaly_thresholds",
    type=click.IntRange(min=1),
    multiple=True,
    help="Gap length below which a dropout counts as anomalous (repeatable; default 5 and 10)",
)
@click.option("--fail-open", is_flag=True, help="Pass frames through unredacted when detection fails")
@click.option("--detect-every", type=click.IntRange(min=1), default=None, help="Run detection on every Nth frame")
@click.option("--save-detections", is_flag=True, help="Also write OUT/detections/<clip_id>.det")
@click.option("--clip-id", default=None, help="clip_id for a single clip input (default: the file stem)")
@seed_option
@workers_option
@config_option
@click.pass_context
def redact(
    ctx: click.Context,
    in_path: Path,
    out: Path,
    backend: str | None,
    masks_dir: Path | None,
    sigma: float | None,
    threshold: float | None,
    anomaly_thresholds: tuple[int, ...],
    fail_open: bool,
    detect_every: int | None,
    save_detections: bool,
    clip_id: str | None,
    seed: int | None,
    workers: int | None,
    config_path: Path | None,
) -> None:
    """Blur the sensitive objects of a clip or manifest into OUT."""
    quiet = is_quiet(ctx)
    run = resolve_config(
        config_path,
        seed=seed,
        workers=workers,
        blur={"sigma": sigma},
        sensitive={"confidence_threshold": threshold},
        redact={
            "backend": backend,
            "masks_dir": str(masks_dir) if masks_dir else None,
            "fail_open": fail_open or None,
            "detect_every": detect_every,
            "save_detections": save_detections or None,
            "anomaly_thresholds": tuple(sorted(set(anomaly_thresholds))) or None,
        },
    )
    config = run.redact
    masks = Path(config.masks_dir) if config.masks_dir else _default_masks_dir(in_path, config.backend)
    out_dir = ensure_out_dir(out)

    if config.backend == "ref":
        with spinner("Loading segmentation model", quiet):
            factory = backend_factory("ref", weights=run.maskrcnn_weights, device=run.device)
    else:
        factory = backend_factory(config.backend, masks_dir=masks)

    if in_path.suffix.lower() == MANIFEST_SUFFIX:
        blurred, anomaly = redact_manifest(
            read_manifest(in_path), factory, run.sensitive, run.blur, config, out_dir, run.workers, quiet
        )
        count = len(blurred)
    else:
        if in_path.suffix.lower() in (MaskFormat.MASK_SUFFIX, MaskFormat.DETECTIONS_SUFFIX):
            raise click.BadParameter(f"{in_path} is a mask file, not a clip", param_hint="--in")
        cid = clip_id or in_path.stem
        _, scores = redact_file(in_path, cid, factory(cid), run.sensitive, run.blur, config, out_dir, run.workers)
        anomaly = write_anomaly_summary({cid: scores}, config, out_dir / "anomaly.json")
        count = 1

    for th, overall in anomaly["overall"].items():
        log_progress(
            "anomaly",
            quiet,
            threshold=th,
            frames=overall["total_frames"],
            anomalous=overall["anomaly_frame_count"],
            accuracy=overall["accuracy_percent"],
        )
    if not quiet:
        print_message(f"Redacted {count} clip(s) into {out_dir}", "success")
