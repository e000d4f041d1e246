"""Click options and helpers shared by the pava subcommands."""

from pathlib import Path
from typing import Any

import click

from pava.config import RunConfig, load_run_config
from pava.errors import ConfigError

existing_file = click.Path(exists=True, dir_okay=False, path_type=Path)

config_option = click.option(
    "--config",
    "config_path",
    type=existing_file,
    default=None,
    help="YAML run config file (flags override its values)",
)
seed_option = click.option("--seed", type=int, default=None, help="Seed for every random choice of the command")
workers_option = click.option(
    "--workers",
    type=click.IntRange(min=1),
    default=None,
    help="Maximum number of worker threads (default: PAVA_WORKERS or the CPU count)",
)
out_option = click.option(
    "--out",
    "-o",
    "out",
    required=True,
    type=click.Path(file_okay=False, path_type=Path),
    help="Output directory; nothing is written outside it",
)
split_option = click.option(
    "--split",
    "split_name",
    type=click.Choice(["train", "test", "all"]),
    default="train",
    show_default=True,
    help="Records of the manifest to use",
)


def resolve_config(
    config_path: Path | None = None,
    seed: int | None = None,
    workers: int | None = None,
    **sections: dict[str, Any],
) -> RunConfig:
    """Effective run config for a command.

    The top-level seed is copied into the sample and train sections so a single
    `--seed` drives every random choice.
    """
    run = load_run_config(config_path, {"seed": seed, "workers": workers, **sections})
    return run.model_copy(
        update={
            "sample": run.sample.model_copy(update={"seed": run.seed}),
            "train": run.train.model_copy(update={"seed": run.seed}),
        }
    )


def ensure_out_dir(path: Path) -> Path:
    """Create the output directory.

    Raises:
        ConfigError: If it cannot be created
    """
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"Cannot create output directory {path}: {e}") from e
    return path


def is_quiet(ctx: click.Context) -> bool:
    obj = ctx.find_root().obj or {}
    return bool(obj.get("quiet", False))


def require_one(**choices: object) -> str:
    """Name of the single option given among mutually exclusive choices.

    Raises:
        click.UsageError: Unless exactly one is set
    """
    given = [name for name, value in choices.items() if value]
    if len(given) != 1:
        flags = " or ".join(f"--{name.replace('_', '-')}" for name in choices)
        raise click.UsageError(f"Give exactly one of {flags}")
    return given[0]
