"""Structured JSON logging utilities."""
import json
import logging
import sys
from datetime import datetime, timezone
from typing import Any, Dict

# Context fields copied from `extra=` onto the JSON line when present
CONTEXT_FIELDS = (
    "stage",
    "recording",
    "path",
    "line",
    "config_hash",
    "preset",
    "catalog",
    "n_frames",
    "n_events",
    "n_fixations",
    "n_saccades",
    "n_blinks",
    "ratio",
    "gate",
    "onset_ms",
    "window_s",
    "feature",
    "repeat",
    "fold",
    "params",
    "score",
    "iterations",
    "exit_code",
    "result",
)


class JSONFormatter(logging.Formatter):
    """Formatter that outputs JSON logs."""

    def format(self, record: logging.LogRecord) -> str:
        """Format log record as JSON."""
        log_data: Dict[str, Any] = {
            "ts": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }

        for name in CONTEXT_FIELDS:
            if hasattr(record, name):
                log_data[name] = getattr(record, name)

        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_data, default=str)


def setup_logging(log_level: str = "INFO") -> None:
    """Setup structured JSON logging."""
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(JSONFormatter())

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)
    # Re-running the CLI in one process (tests) must not stack handlers
    for existing in list(root_logger.handlers):
        if isinstance(existing.formatter, JSONFormatter):
            root_logger.removeHandler(existing)
    root_logger.addHandler(handler)
