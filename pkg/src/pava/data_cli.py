# flake8: noqa: E304

"""Dataset commands: ingest, synth, split and mix.

Each command writes JSONL manifests (and, for synth, the clips themselves) into its
`--out` directory.
"""

from pathlib import Path

import click
import pandas as pd
import yaml

from pava.constants import Split
from pava.dataset import DatasetManifest, build_mixed, read_manifest, split, write_manifest
from pava.dataset import ingest as ingest_clips
from pava.errors import ConfigError
from pava.options import (
    config_option,
    ensure_out_dir,
    is_quiet,
    out_option,
    resolve_config,
    seed_option,
    workers_option,
)
from pava.synth import SensitiveRegionSpec, SynthConfig, synth_dataset
from pava.utils import log_progress, print_message


def _read_label_map(path: Path | None) -> dict[str, str]:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            aliases = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Cannot read label map {path}: {e}") from e
    if not isinstance(aliases, dict):
        raise ConfigError(f"Label map {path} must map source labels to vocabulary names")
    return {str(k): str(v) for k, v in aliases.items()}


def _write_splits(train: DatasetManifest, test: DatasetManifest, out: Path) -> None:
    write_manifest(train, out / "train.jsonl")
    write_manifest(test, out / "test.jsonl")


@click.command()
@click.argument("root", type=click.Path(exists=True, file_okay=False, path_type=Path))
@out_option
@click.option(
    "--label-map",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="YAML mapping from directory or labels.csv names to activity labels",
)
@click.option(
    "--exclude",
    "exclusion_file",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="File listing clip_ids to drop, one per line",
)
@workers_option
@config_option
@click.pass_context
def ingest(
    ctx: click.Context,
    root: Path,
    out: Path,
    label_map: Path | None,
    exclusion_file: Path | None,
    workers: int | None,
    config_path: Path | None,
) -> None:
    """Catalogue the clips under ROOT into OUT/manifest.jsonl."""
    run = resolve_config(config_path, workers=workers)
    out_dir = ensure_out_dir(out)
    result = ingest_clips(root, _read_label_map(label_map), exclusion_file, run.workers)
    write_manifest(result.manifest, out_dir / "manifest.jsonl")
    if result.errors:
        issues = pd.DataFrame([{"path": e.path, "reason": e.reason} for e in result.errors])
        issues.to_csv(out_dir / "ingest_errors.csv", index=False, lineterminator="\n")
        print_message(f"{len(result.errors)} clips could not be read; see {out_dir / 'ingest_errors.csv'}", "warning")
    log_progress("ingest", is_quiet(ctx), clips=len(result.manifest), errors=len(result.errors))


@click.command()
@out_option
@click.option("--classes", type=click.IntRange(2, 18), default=4, show_default=True, help="Number of classes")
@click.option("--clips-per-class", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--frames", type=click.IntRange(min=1), default=32, show_default=True, help="Frames per clip")
@click.option("--resolution", type=(int, int), default=(64, 64), show_default=True, help="Frame height and width")
@click.option("--no-sensitive", is_flag=True, help="Do not plant the sensitive rectangle")
@click.option(
    "--test-fraction",
    type=click.FloatRange(0.0, 1.0, max_open=True),
    default=0.0,
    show_default=True,
    help="Per-class share of clips marked as test; also writes train.jsonl and test.jsonl",
)
@click.option("--subjects", type=click.IntRange(min=1), default=1, show_default=True, help="Round-robin subject ids")
@seed_option
@workers_option
@config_option
@click.pass_context
def synth(
    ctx: click.Context,
    out: Path,
    classes: int,
    clips_per_class: int,
    frames: int,
    resolution: tuple[int, int],
    no_sensitive: bool,
    test_fraction: float,
    subjects: int,
    seed: int | None,
    workers: int | None,
    config_path: Path | None,
) -> None:
    """Generate a synthetic moving-patch dataset under OUT."""
    run = resolve_config(config_path, seed=seed, workers=workers)
    try:
        config = SynthConfig(
            classes=classes,
            clips_per_class=clips_per_class,
            frames=frames,
            resolution=resolution,
            sensitive_region=SensitiveRegionSpec(enabled=not no_sensitive),
            seed=run.seed,
            test_fraction=test_fraction,
            subjects=subjects,
        )
    except ValueError as e:
        raise click.BadParameter(str(e)) from e
    out_dir = ensure_out_dir(out)
    manifest = synth_dataset(config, out_dir, run.workers)
    if test_fraction > 0:
        _write_splits(manifest.filter(split=Split.TRAIN), manifest.filter(split=Split.TEST), out_dir)
    log_progress("synth", is_quiet(ctx), clips=len(manifest), classes=classes, out=out_dir)


@click.command(name="split")
@click.argument("manifest_path", metavar="MANIFEST", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@out_option
@click.option("--train-count", type=click.IntRange(min=0), required=True, help="Clips in the training split")
@click.option("--test-count", type=click.IntRange(min=0), required=True, help="Clips in the test split")
@click.option("--by-subject", is_flag=True, help="Keep every subject on one side of the split")
@seed_option
@config_option
@click.pass_context
def split_command(
    ctx: click.Context,
    manifest_path: Path,
    out: Path,
    train_count: int,
    test_count: int,
    by_subject: bool,
    seed: int | None,
    config_path: Path | None,
) -> None:
    """Split MANIFEST into OUT/train.jsonl and OUT/test.jsonl."""
    run = resolve_config(config_path, seed=seed)
    manifest = read_manifest(manifest_path)
    train, test = split(manifest, train_count, test_count, run.seed, by_subject)
    _write_splits(train, test, ensure_out_dir(out))
    log_progress("split", is_quiet(ctx), train=len(train), test=len(test))


@click.command()
@click.option("--original", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--blurred", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@out_option
@click.pass_context
def mix(ctx: click.Context, original: Path, blurred: Path, out: Path) -> None:
    """Combine original and blurred manifests into OUT/manifest.jsonl (mixed sub-dataset)."""
    mixed = build_mixed(read_manifest(original), read_manifest(blurred))
    write_manifest(mixed, ensure_out_dir(out) / "manifest.jsonl")
    log_progress("mix", is_quiet(ctx), clips=len(mixed))
