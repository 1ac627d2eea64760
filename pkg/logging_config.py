"""
Logging setup shared by the simulator, the analysis layer and the CLI.

The console gets INFO (DEBUG with ``--verbose``); an optional log file always
gets DEBUG, which is where solver non-convergence and overlap nudges end up.
Scenario worker processes log at WARNING only, so per-trial chatter does not
tear through the progress bars.
"""

import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

from tqdm.contrib.logging import logging_redirect_tqdm

CONSOLE_FORMAT = "%(levelname)s: %(message)s"
VERBOSE_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# Third-party loggers that are noisy at DEBUG (font discovery, PIL plugins).
QUIET_LIBRARIES = ("matplotlib", "PIL")


def setup_logging(verbose: bool = False, log_file: Optional[Path] = None) -> logging.Logger:
    """
    Configures the root logger for a command-line run.

    Args:
        verbose: Console level DEBUG instead of INFO, with timestamps and module names.
        log_file: Also write every record, DEBUG included, to this file.

    Returns:
        The root logger.
    """
    console_level = logging.DEBUG if verbose else logging.INFO

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(console_level)
    console_handler.setFormatter(logging.Formatter(VERBOSE_FORMAT if verbose else CONSOLE_FORMAT, DATE_FORMAT))

    root_logger = logging.getLogger()
    root_logger.handlers.clear()
    root_logger.addHandler(console_handler)
    root_logger.setLevel(logging.DEBUG if (verbose or log_file) else logging.INFO)

    if log_file:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(VERBOSE_FORMAT, DATE_FORMAT))
        root_logger.addHandler(file_handler)

    for name in QUIET_LIBRARIES:
        logging.getLogger(name).setLevel(logging.WARNING)

    return root_logger


def setup_worker_logging() -> None:
    """Pool initializer: worker processes only report warnings and errors."""
    root_logger = logging.getLogger()
    root_logger.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s [worker]: %(message)s"))
    root_logger.addHandler(handler)
    root_logger.setLevel(logging.WARNING)


@contextmanager
def progress_logging() -> Iterator[None]:
    """Routes console log records through tqdm while progress bars are drawn."""
    with logging_redirect_tqdm():
        yield


def get_logger(name: str) -> logging.Logger:
    """Module logger; call with ``__name__``."""
    return logging.getLogger(name)
