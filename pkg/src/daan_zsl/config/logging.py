import logging
import os
from typing import Any

import numpy as np
from rich.console import Console
from rich.logging import RichHandler

DEFAULT_LOG_LEVEL = "INFO"

COLOR_MAPPINGS = {
    "info": "dim cyan",
    "warning": "dim yellow",
    "error": "dim red",
    "debug": "dim",
}

SUPPRESSED_LOGGERS = ["matplotlib", "PIL"]


class RichStructuredLogger:
    """Logger wrapper that renders keyword fields as ``msg [k=v | k=v]``.

    Fields are wrapped in Rich markup on an interactive terminal and left as
    plain text when the ``CI`` environment variable is set. Loggers created with
    :meth:`bind` carry fixed fields (run id, epoch) ahead of the per-call ones.
    """

    def __init__(
        self,
        logger: logging.Logger,
        use_rich: bool = True,
        context: dict[str, Any] | None = None,
    ) -> None:
        """Initialize the structured logger.

        Args:
            logger: The underlying Python logger instance
            use_rich: Whether to use Rich markup formatting
            context: Fields included in every message
        """

        self._logger = logger
        self._use_rich = use_rich
        self._context = dict(context or {})

    def bind(self, **fields: Any) -> "RichStructuredLogger":
        """Return a logger that always includes ``fields``.

        Args:
            **fields: Structured data added to every message of the new logger

        Returns:
            A RichStructuredLogger sharing this logger's handler and formatting
        """

        return RichStructuredLogger(self._logger, self._use_rich, {**self._context, **fields})

    def is_enabled_for(self, level: int) -> bool:
        """Check whether messages at ``level`` reach a handler."""

        return self._logger.isEnabledFor(level)

    def _format_message(self, msg: str, level: str, **kwargs: Any) -> str:
        """Format a log message with its bound and per-call fields.

        Args:
            msg: The main log message
            level: The log level (info, warning, error, debug)
            **kwargs: Per-call structured data

        Returns:
            Formatted message string with Rich markup or plain text
        """

        fields = {**self._context, **kwargs}
        if not fields:
            return msg

        extra_str = " | ".join(f"{k}={_render(v)}" for k, v in fields.items())

        if self._use_rich:
            color = COLOR_MAPPINGS.get(level, "dim")
            return f"{msg} [{color}]\\[{extra_str}][/{color}]"
        return f"{msg} [{extra_str}]"

    def info(self, msg: str, **kwargs: Any) -> None:
        """Log an info message with optional structured data."""

        self._logger.info(self._format_message(msg, "info", **kwargs))

    def warning(self, msg: str, **kwargs: Any) -> None:
        """Log a warning message with optional structured data."""

        self._logger.warning(self._format_message(msg, "warning", **kwargs))

    def error(self, msg: str, **kwargs: Any) -> None:
        """Log an error message with optional structured data."""

        self._logger.error(self._format_message(msg, "error", **kwargs))

    def debug(self, msg: str, **kwargs: Any) -> None:
        """Log a debug message; fields are only formatted when debug is enabled."""

        if self._logger.isEnabledFor(logging.DEBUG):
            self._logger.debug(self._format_message(msg, "debug", **kwargs))

    def exception(self, msg: str, **kwargs: Any) -> None:
        """Log an error message with the active traceback."""

        self._logger.exception(self._format_message(msg, "error", **kwargs))


def _render(value: Any) -> Any:
    """Render floats with six significant digits.

    Args:
        value: A structured field value

    Returns:
        The value itself, or a short string for floats
    """

    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return value


def get_logger(name: str) -> RichStructuredLogger:
    """Get a structured logger for a module.

    Args:
        name: The logger name, typically __name__

    Returns:
        A RichStructuredLogger bound to ``logging.getLogger(name)``
    """

    return RichStructuredLogger(logging.getLogger(name), not _is_ci_environment())


def _is_ci_environment() -> bool:
    """Check if running in a CI environment.

    Returns:
        True if CI environment variable is set, False otherwise
    """

    return bool(os.getenv("CI"))


def get_log_level() -> int:
    """Get log level from the LOG_LEVEL environment variable.

    Returns:
        The logging level as an integer constant (INFO when unset or unknown)
    """

    level_name = os.getenv("LOG_LEVEL", DEFAULT_LOG_LEVEL).upper()
    return getattr(logging, level_name, logging.INFO)


def _create_rich_handler(log_level: int) -> RichHandler:
    """Create and configure a Rich handler for interactive terminals.

    Args:
        log_level: The logging level to configure debug features for

    Returns:
        Configured RichHandler instance
    """

    console = Console(stderr=True)

    rich_handler = RichHandler(
        console=console,
        rich_tracebacks=True,
        tracebacks_show_locals=log_level <= logging.DEBUG,
        show_path=log_level <= logging.DEBUG,
        show_time=True,
        omit_repeated_times=False,
        markup=True,
    )
    rich_handler.setFormatter(logging.Formatter(fmt="%(message)s", datefmt="[%X]"))
    return rich_handler


def _create_standard_handler() -> logging.StreamHandler:
    """Create and configure a plain stream handler for CI and log files.

    Returns:
        Configured StreamHandler instance
    """

    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(
        logging.Formatter(
            fmt="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )
    )
    return stream_handler


def configure_logging(enable_rich: bool = True, level: int | str | None = None) -> None:
    """Install a single handler on the root logger.

    Args:
        enable_rich: Whether to use Rich formatting. Ignored (plain text) in CI.
        level: Explicit level; defaults to the LOG_LEVEL environment variable
    """

    if level is None:
        log_level = get_log_level()
    elif isinstance(level, str):
        log_level = getattr(logging, level.upper(), logging.INFO)
    else:
        log_level = level

    if enable_rich and not _is_ci_environment():
        handlers = [_create_rich_handler(log_level)]
    else:
        handlers = [_create_standard_handler()]

    logging.basicConfig(level=log_level, handlers=handlers, force=True)

    for logger_name in SUPPRESSED_LOGGERS:
        logging.getLogger(logger_name).setLevel(logging.WARNING)
