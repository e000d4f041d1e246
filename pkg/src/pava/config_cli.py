"""CLI for inspecting the effective run config and managing $HOME/.pava.env."""

import os
from pathlib import Path

import click
from dotenv import dotenv_values, set_key, unset_key

from pava.config import dump_run_config
from pava.options import config_option, resolve_config

PAVA_ENV_PATH = Path.home() / ".pava.env"


@click.group()
def config():
    """Manage pava configuration."""
    pass


@config.command()
@config_option
def show(config_path: Path | None) -> None:
    """Show the effective run configuration as YAML."""
    click.echo(dump_run_config(resolve_config(config_path)), nl=False)


@config.command()
@click.argument("key")
@click.argument("value")
def set(key: str, value: str) -> None:
    """Set an environment KEY (e.g. PAVA_WORKERS) to VALUE in $HOME/.pava.env."""
    PAVA_ENV_PATH.touch(exist_ok=True)
    set_key(str(PAVA_ENV_PATH), key, value)
    click.echo(f"Set {key} in $HOME/.pava.env")


@config.command()
@click.argument("key")
def get(key: str) -> None:
    """Get a value by KEY; $HOME/.pava.env wins over the process environment."""
    stored = dotenv_values(PAVA_ENV_PATH) if PAVA_ENV_PATH.exists() else {}
    value = stored.get(key) or os.getenv(key)
    click.echo(value if value is not None else f"{key} not set.")


@config.command()
@click.argument("key")
def unset(key: str) -> None:
    """Remove a KEY from $HOME/.pava.env."""
    if not PAVA_ENV_PATH.exists():
        click.echo("No $HOME/.pava.env found.")
        return
    removed, _ = unset_key(str(PAVA_ENV_PATH), key)
    click.echo(f"Unset {key} in $HOME/.pava.env" if removed else f"{key} not set.")
