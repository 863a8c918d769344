"""
Logging configuration for the metric-graph diffusion simulator.

Console output goes to stderr; rotating files collect the full debug
trace, errors, the simulation package and one-JSON-per-line metrics.
"""

import json
import logging
import logging.handlers
import os
import sys
from datetime import datetime, timezone
from typing import Any, Dict, Optional

from .config import settings

DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
DETAILED_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)-24s | %(funcName)-20s | %(message)s"
MB = 1024 * 1024


def _rotating(log_dir: str, filename: str, level: int, formatter: logging.Formatter, max_mb: int, backups: int):
    handler = logging.handlers.RotatingFileHandler(
        filename=os.path.join(log_dir, filename),
        maxBytes=max_mb * MB,
        backupCount=backups,
        encoding="utf-8",
    )
    handler.setLevel(level)
    handler.setFormatter(formatter)
    return handler


def setup_logging(log_dir: Optional[str] = None, level: Optional[str] = None) -> None:
    """
    Configure the root, simulation and metrics loggers.

    Safe to call more than once: existing handlers are replaced.

    Args:
        log_dir: Directory for log files (defaults to settings.LOG_DIR).
        level: Root log level name (defaults to settings.LOG_LEVEL).
    """
    log_dir = log_dir or settings.LOG_DIR
    os.makedirs(log_dir, exist_ok=True)
    detailed = logging.Formatter(fmt=DETAILED_FORMAT, datefmt=DATE_FORMAT)

    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, (level or settings.LOG_LEVEL).upper()))
    root_logger.handlers.clear()

    # stdout carries CSV/JSON reports
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.INFO)
    console.setFormatter(logging.Formatter(fmt="%(asctime)s | %(levelname)-8s | %(message)s", datefmt=DATE_FORMAT))
    root_logger.addHandler(console)
    root_logger.addHandler(_rotating(log_dir, "application.log", logging.DEBUG, detailed, 10, 5))
    root_logger.addHandler(_rotating(log_dir, "errors.log", logging.ERROR, detailed, 10, 5))

    simulation_logger = logging.getLogger("src.simulation")
    simulation_logger.handlers.clear()
    simulation_logger.addHandler(_rotating(log_dir, "simulation.log", logging.INFO, detailed, 10, 3))

    metrics_logger = logging.getLogger("metrics")
    metrics_logger.setLevel(logging.INFO)
    metrics_logger.handlers.clear()
    metrics_logger.addHandler(
        _rotating(log_dir, "metrics.log", logging.INFO, logging.Formatter("%(asctime)s | %(message)s"), 5, 3)
    )
    metrics_logger.propagate = False

    logging.info(f"Logging initialized in {log_dir}")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


class MetricsLogger:
    """
    Logger for experiment and simulation metrics, one JSON object per line.
    """

    def __init__(self):
        """Initialize metrics logger."""
        self.logger = logging.getLogger("metrics")

    def log_experiment_metrics(
        self,
        experiment: str,
        n_paths: int,
        statistics: Dict[str, Any],
        passed: Optional[bool],
        processing_time: float,
    ) -> None:
        """
        Log the outcome of a statistical experiment.

        Args:
            experiment: Experiment name.
            n_paths: Number of Monte Carlo replicas.
            statistics: Headline statistics of the run.
            passed: Pass/fail verdict, None when the experiment has no threshold.
            processing_time: Wall time in seconds.
        """
        metrics = {
            "event_type": "experiment",
            "timestamp": _utc_now(),
            "experiment": experiment,
            "n_paths": n_paths,
            "statistics": statistics,
            "pass": passed,
            "processing_time": processing_time,
        }

        self.logger.info(json.dumps(metrics, default=float))

    def log_simulation_metrics(
        self,
        graph: str,
        n_edges: int,
        n_steps: int,
        n_paths: int,
        processing_time: float,
        success: bool = True,
        error_message: Optional[str] = None,
    ) -> None:
        """
        Log a graph simulation batch.

        Args:
            graph: Graph config name.
            n_edges: Number of edges simulated per replica.
            n_steps: Global grid steps per replica.
            n_paths: Replicas in the batch.
            processing_time: Wall time in seconds.
            success: Whether the batch completed.
            error_message: Error message if failed.
        """
        metrics = {
            "event_type": "simulation",
            "timestamp": _utc_now(),
            "graph": graph,
            "n_edges": n_edges,
            "n_steps": n_steps,
            "n_paths": n_paths,
            "processing_time": processing_time,
            "success": success,
            "error_message": error_message,
        }

        self.logger.info(json.dumps(metrics))


class PerformanceLogger:
    """
    Logger for performance monitoring and debugging.
    """

    def __init__(self):
        """Initialize performance logger."""
        self.logger = logging.getLogger("performance")

    def log_execution_time(
        self, operation: str, execution_time: float, metadata: Optional[Dict[str, Any]] = None
    ) -> None:
        """
        Log execution time for operations.

        Args:
            operation: Operation name.
            execution_time: Execution time in seconds.
            metadata: Additional metadata.
        """
        log_data = {
            "operation": operation,
            "execution_time": execution_time,
            "timestamp": _utc_now(),
        }

        if metadata:
            log_data.update(metadata)

        self.logger.info(f"Performance: {operation} took {execution_time:.3f}s")

        metrics_logger = logging.getLogger("metrics")
        log_data["event_type"] = "performance"
        metrics_logger.info(json.dumps(log_data, default=str))


def get_metrics_logger() -> MetricsLogger:
    """
    Get metrics logger instance.

    Returns:
        MetricsLogger: Metrics logger instance.
    """
    return MetricsLogger()


def get_performance_logger() -> PerformanceLogger:
    """
    Get performance logger instance.

    Returns:
        PerformanceLogger: Performance logger instance.
    """
    return PerformanceLogger()
