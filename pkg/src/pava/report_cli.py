# flake8: noqa: E304

"""Evaluation and reporting commands."""

from pathlib import Path

import click
from rich.table import Table

from pava.dataset import read_manifest
from pava.ensemble_cli import load_predictor
from pava.evaluation import MetricsReport, emit_f1_comparison, evaluate, read_report, report_emit
from pava.options import (
    config_option,
    ensure_out_dir,
    existing_file,
    is_quiet,
    out_option,
    resolve_config,
    seed_option,
    workers_option,
)
from pava.utils import console


def _summary_table(reports: dict[str, MetricsReport]) -> Table:
    table = Table(title="Per-class F1", header_style="header")
    table.add_column("label")
    for name in reports:
        table.add_column(name, justify="right")
    first = next(iter(reports.values()))
    for label in first.labels:
        table.add_row(label, *(f"{r.per_class[label].f1:.3f}" for r in reports.values()))
    table.add_section()
    table.add_row("accuracy %", *(f"{r.accuracy_percent:.2f} ± {r.accuracy_std:.2f}" for r in reports.values()))
    table.add_row("macro precision", *(f"{r.macro.precision:.3f}" for r in reports.values()))
    table.add_row("macro recall", *(f"{r.macro.recall:.3f}" for r in reports.values()))
    table.add_row("macro F1", *(f"{r.macro.f1:.3f}" for r in reports.values()))
    return table


@click.command(name="evaluate")
@click.option("--model", "model_path", type=existing_file, help="Single checkpoint")
@click.option("--ensemble", "ensemble_path", type=existing_file, help="Ensemble spec (ensemble.json)")
@click.option("--manifest", "manifest_path", required=True, type=existing_file, help="Manifest to score")
@click.option(
    "--split",
    "split_name",
    type=click.Choice(["train", "test", "all"]),
    default="all",
    show_default=True,
    help="Records of the manifest to score",
)
@out_option
@seed_option
@workers_option
@config_option
@click.pass_context
def evaluate_command(
    ctx: click.Context,
    model_path: Path | None,
    ensemble_path: Path | None,
    manifest_path: Path,
    split_name: str,
    out: Path,
    seed: int | None,
    workers: int | None,
    config_path: Path | None,
) -> None:
    """Score a model or ensemble; writes metrics.json, confusion.csv and f1_by_class.csv to OUT."""
    quiet = is_quiet(ctx)
    run = resolve_config(config_path, seed=seed, workers=workers)
    predictor = load_predictor(model_path, ensemble_path, run, quiet)
    manifest = read_manifest(manifest_path)
    if split_name != "all":
        manifest = manifest.filter(split=split_name)
    report, cm = evaluate(predictor, manifest, run.seed, run.workers, quiet)
    report_emit(report, cm, ensure_out_dir(out))
    if not quiet:
        console.print(_summary_table({report.model_id: report}))


@click.command()
@click.option("--original", "original_path", required=True, type=existing_file, help="metrics.json on original clips")
@click.option("--blurred", "blurred_path", type=existing_file, help="metrics.json on blurred clips")
@out_option
@click.pass_context
def report(ctx: click.Context, original_path: Path, blurred_path: Path | None, out: Path) -> None:
    """Summarize metrics reports and write the per-class F1 table OUT/f1_by_class.csv."""
    reports = {"original": read_report(original_path)}
    if blurred_path is not None:
        reports["blurred"] = read_report(blurred_path)
    emit_f1_comparison(reports["original"], reports.get("blurred"), ensure_out_dir(out))
    if not is_quiet(ctx):
        console.print(_summary_table(reports))
