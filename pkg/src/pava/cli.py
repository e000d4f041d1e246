# flake8: noqa: E304

"""CLI entry point for pava.

Defines the Click group and maps outcomes to exit codes: 0 on success, 1 on a usage
error, 2 on any runtime failure.
"""

import logging
import sys
from collections.abc import Sequence

import click

from pava import __version__
from pava.config import load_config
from pava.config_cli import config as config_cli
from pava.constants import Logging
from pava.data_cli import ingest, mix, split_command, synth
from pava.ensemble_cli import ensemble_build, predict
from pava.errors import PavaError, format_error_for_user, handle_error
from pava.redact_cli import redact
from pava.report_cli import evaluate_command, report
from pava.train_cli import finetune, train_command
from pava.utils import setup_logging

config = load_config()
logger = logging.getLogger(__name__)

USAGE_EXIT_CODE = 1
RUNTIME_EXIT_CODE = 2


@click.group(invoke_without_command=True)
@click.option(
    "--log-level",
    default=config["log_level"],
    type=click.Choice(Logging.LEVELS, case_sensitive=False),
    help=f"Set log level (default: {config['log_level']})",
)
@click.option("--quiet", "-q", is_flag=True, help="Suppress progress lines and non-error output")
@click.option("--version", is_flag=True, help="Show the version of pava")
@click.pass_context
def cli(
    ctx: click.Context,
    log_level: str = str(config["log_level"]),
    quiet: bool = False,
    version: bool = False,
) -> None:
    """Privacy-aware activity classification for first-person video."""
    if ctx.invoked_subcommand is None:
        if version:
            click.echo(f"pava version: {__version__}")
            return
        click.echo(ctx.get_help())
        return

    setup_logging(log_level, quiet=quiet, suppress_noisy=True)
    logger.info(f"Running pava {ctx.invoked_subcommand}")
    ctx.obj = {"log_level": log_level, "quiet": quiet}


cli.add_command(config_cli)
cli.add_command(ingest)
cli.add_command(synth)
cli.add_command(split_command)
cli.add_command(mix)
cli.add_command(redact)
cli.add_command(train_command)
cli.add_command(finetune)
cli.add_command(ensemble_build)
cli.add_command(predict)
cli.add_command(evaluate_command)
cli.add_command(report)


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return its exit code instead of exiting."""
    args = list(sys.argv[1:] if argv is None else argv)
    quiet = "--quiet" in args or "-q" in args
    try:
        result = cli.main(args, prog_name="pava", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return USAGE_EXIT_CODE
    except click.Abort:
        click.echo("Aborted!", err=True)
        return USAGE_EXIT_CODE
    except PavaError as e:
        handle_error(e, quiet=quiet)
        click.echo(format_error_for_user(e), err=True)
        return e.exit_code
    except Exception as e:
        handle_error(e, quiet=quiet)
        click.echo(f"Error: {e}", err=True)
        return RUNTIME_EXIT_CODE
    return result if isinstance(result, int) else 0


def run() -> None:
    """Console script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    run()
