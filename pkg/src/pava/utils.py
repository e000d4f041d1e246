"""Utility functions for pava."""

import concurrent.futures
import logging
import sys
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from typing import TypeVar

import click
from halo import Halo
from rich.console import Console
from rich.theme import Theme

from pava.constants import EnvDefaults, Logging

T = TypeVar("T")
R = TypeVar("R")


def setup_logging(
    log_level: int | str = Logging.DEFAULT_LEVEL,
    quiet: bool = False,
    force: bool = False,
    suppress_noisy: bool = False,
) -> None:
    """Configure logging for the application.

    Args:
        log_level: Log level to use (DEBUG, INFO, WARNING, ERROR)
        quiet: If True, suppress all output except errors
        force: If True, force reconfiguration of logging
        suppress_noisy: If True, suppress noisy third-party loggers
    """
    if isinstance(log_level, str):
        log_level = getattr(logging, log_level.upper(), logging.WARNING)

    if quiet:
        log_level = logging.ERROR

    kwargs = {"force": force} if force else {}

    logging.basicConfig(
        level=log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        **kwargs,  # type: ignore[arg-type]
    )

    if suppress_noisy:
        for noisy_logger in Logging.NOISY_LOGGERS:
            logging.getLogger(noisy_logger).setLevel(logging.WARNING)

    logger.info(f"Logging initialized with level: {logging.getLevelName(log_level)}")


theme = Theme(
    {
        "success": "green bold",
        "info": "blue",
        "warning": "yellow",
        "error": "red bold",
        "header": "magenta",
    }
)
console = Console(theme=theme, stderr=True)
logger = logging.getLogger(__name__)


def print_message(message: str, level: str = "info") -> None:
    """Print a styled message with the specified level on stderr."""
    console.print(message, style=level)


def format_progress(event: str, **fields: object) -> str:
    """Render a progress record as space-separated key=value pairs."""
    parts = [f"event={event}"]
    for key, value in fields.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        parts.append(f"{key}={value}")
    return " ".join(parts)


def log_progress(event: str, quiet: bool = False, **fields: object) -> None:
    """Emit a machine-parseable progress line on stderr."""
    line = format_progress(event, **fields)
    logger.debug(line)
    if not quiet:
        click.echo(line, err=True)


@contextmanager
def spinner(text: str, quiet: bool = False) -> Iterator[Halo | None]:
    """Show a stderr spinner around a blocking step."""
    if quiet:
        yield None
        return
    halo = Halo(text=text, spinner="dots", stream=sys.stderr)
    halo.start()
    try:
        yield halo
    except Exception:
        halo.fail(f"{text} failed")
        raise
    halo.succeed(text)


def run_parallel(func: Callable[[T], R], items: Sequence[T], workers: int = EnvDefaults.WORKERS) -> list[R]:
    """Apply func to every item, keeping input order.

    Args:
        func: Function to apply
        items: Inputs
        workers: Maximum number of threads; 1 runs sequentially

    Returns:
        Results in the same order as items
    """
    # Small inputs run sequentially to avoid pool overhead
    if workers <= 1 or len(items) <= 2:
        return [func(item) for item in items]

    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))
