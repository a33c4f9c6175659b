"""
Centralized logging configuration for the laboratory.

Worker threads are named labp_worker_N by the runner, so the default format
carries the thread name to tell concurrent parameter tuples apart.
"""
import logging
import logging.handlers
import sys
from pathlib import Path
from typing import Optional, Sequence

from settings import settings

LIBRARY_LOGGERS = ("asyncio", "concurrent.futures")


def _console_handler(level: int, formatter: logging.Formatter) -> logging.Handler:
    handler = logging.StreamHandler(sys.stdout)
    handler.setLevel(level)
    handler.setFormatter(formatter)
    return handler


def _file_handler(log_file: str, level: int, formatter: logging.Formatter) -> Optional[logging.Handler]:
    """Rotating file handler, or None when the file cannot be opened."""
    try:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=settings.log_max_bytes,
            backupCount=settings.log_backup_count,
            encoding="utf-8",
        )
    except OSError as e:
        logging.error(f"Failed to set up file logging: {e}")
        return None
    handler.setLevel(level)
    handler.setFormatter(formatter)
    return handler


def setup_logging(
    log_level: Optional[str] = None,
    log_file: Optional[str] = None,
    log_format: Optional[str] = None,
    log_date_format: Optional[str] = None
) -> None:
    """
    Configure the root logger for a laboratory run.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL);
            settings.debug forces DEBUG when no level is passed
        log_file: Optional path to a rotating log file
        log_format: Log message format string
        log_date_format: Log timestamp format string

    Raises:
        ValueError: If log level is invalid
    """
    log_level = log_level or ("DEBUG" if settings.debug else settings.log_level)
    log_file = log_file or settings.log_file

    numeric_level = getattr(logging, log_level.upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f'Invalid log level: {log_level}')

    formatter = logging.Formatter(
        fmt=log_format or settings.log_format,
        datefmt=log_date_format or settings.log_date_format,
    )

    root_logger = logging.getLogger()
    root_logger.setLevel(numeric_level)
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)
        handler.close()

    root_logger.addHandler(_console_handler(numeric_level, formatter))
    if log_file:
        file_handler = _file_handler(log_file, numeric_level, formatter)
        if file_handler is not None:
            root_logger.addHandler(file_handler)

    for name in LIBRARY_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)

    logging.info(f"Logging configured: level={log_level}, file={log_file or 'console only'}")


def get_logger(name: str) -> logging.Logger:
    """Logger accessor (typically called with __name__)."""
    return logging.getLogger(name)


def log_system_info(threads: Optional[int] = None) -> None:
    """Start-up banner with the machine resources available to the run."""
    import platform
    import psutil

    logger = get_logger(__name__)
    memory = psutil.virtual_memory()

    logger.info("=== labp run starting ===")
    logger.info(f"Version: {settings.app_version}")
    logger.info(f"Python version: {platform.python_version()}")
    logger.info(f"Platform: {platform.system()} {platform.release()}")
    logger.info(f"Working directory: {Path.cwd()}")
    logger.info(f"CPU count: {psutil.cpu_count(logical=True)}")
    logger.info(f"Memory available: {memory.available // (1024 * 1024)}MB of {memory.total // (1024 * 1024)}MB")
    logger.info(f"Worker threads: {threads or settings.threads}")
    logger.info(f"Default resolution: {settings.resolution}")
    logger.info("=========================")


def log_experiment_result(
    experiment: str,
    key: str,
    success: bool,
    error: Optional[str] = None,
    flags: Sequence[str] = (),
) -> None:
    """
    Log the outcome of one parameter tuple of an experiment.

    Args:
        experiment: Experiment name
        key: Printable parameter tuple
        success: Whether the sub-run succeeded
        error: Error message if the sub-run failed
        flags: Flags raised by the sub-run's rows
    """
    logger = get_logger("labp.experiments")

    if not success:
        logger.error(f"{experiment} {key} - FAILED - {error}")
    elif flags:
        logger.warning(f"{experiment} {key} - flagged: {', '.join(flags)}")
    else:
        logger.debug(f"{experiment} {key} - ok")


def log_performance_metrics(operation: str, duration: float, task_count: int = 1) -> None:
    """
    Log wall time of an experiment and the average per parameter tuple.

    Args:
        operation: Experiment name
        duration: Duration in seconds
        task_count: Number of parameter tuples processed
    """
    logger = get_logger("labp.performance")
    avg_time = duration / task_count if task_count > 0 else duration

    logger.info(
        f"Performance: {operation} - "
        f"Total: {duration:.2f}s, "
        f"Tasks: {task_count}, "
        f"Avg: {avg_time:.2f}s/task"
    )
