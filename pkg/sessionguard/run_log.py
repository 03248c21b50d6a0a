"""
PR 10 — Run Logging

Run-scoped logging for every pipeline command.

- get_logger(): module logger wrapped in an adapter that prefixes [run_id=...]
- LOG_JSON=1 switches the console handler to one JSON object per record
- write_event(): append-only JSONL event log at <out_dir>/events.log,
  rotated to events.1.log once SESSIONGUARD_LOG_MAX_BYTES is exceeded

Logging failures never break the pipeline.
"""

import json
import logging
import os
from pathlib import Path
from typing import Dict, Optional

from dotenv import load_dotenv


LOGGER_NAME = "sessionguard"

# Keys never written to the event log
REDACTED_KEYS = {"authorization", "api_key", "sessionguard_embed_api_key"}


class RunLogger(logging.LoggerAdapter):
    def process(self, msg, kwargs):  # type: ignore[override]
        try:
            run_id = self.extra.get("run_id")  # type: ignore[union-attr]
            prefix = f"[run_id={run_id}] " if run_id else ""
            kwargs.setdefault("extra", {}).update(self.extra or {})
            return prefix + str(msg), kwargs
        except Exception:
            return msg, kwargs


def get_logger(module: str, run_id: Optional[str] = None) -> RunLogger:
    """Return the package logger for `module`, tagged with `run_id` when given."""
    base = logging.getLogger(f"{LOGGER_NAME}.{module}")
    return RunLogger(base, {"run_id": run_id})


class _JsonFormatter(logging.Formatter):
    def format(self, record):  # type: ignore[override]
        try:
            payload = {
                "ts": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"),
                "level": record.levelname,
                "logger": record.name,
                "msg": record.getMessage(),
            }
            if record.__dict__.get("run_id"):
                payload["run_id"] = record.__dict__["run_id"]
            return json.dumps(payload, ensure_ascii=False)
        except Exception:
            return record.getMessage()


def configure_logging(level: int = logging.INFO) -> logging.Logger:
    """
    Attach a console handler to the package logger once.

    Plain text by default; JSON lines when LOG_JSON is truthy.
    """
    load_dotenv()
    base = logging.getLogger(LOGGER_NAME)
    base.setLevel(level)
    for handler in base.handlers:
        if getattr(handler, "_sg_console", False):
            return base

    handler = logging.StreamHandler()
    if str(os.getenv("LOG_JSON", "")).lower() in {"1", "true", "yes"}:
        handler.setFormatter(_JsonFormatter())
    else:
        handler.setFormatter(
            logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
        )
    handler._sg_console = True  # type: ignore[attr-defined]
    base.addHandler(handler)
    base.propagate = False
    return base


def events_log_path(out_dir: Path) -> Path:
    return Path(out_dir) / "events.log"


def rotate_events_if_needed(log_path: Path) -> None:
    """Rotate events.log to events.1.log past SESSIONGUARD_LOG_MAX_BYTES."""
    try:
        max_bytes_str = os.getenv("SESSIONGUARD_LOG_MAX_BYTES", "0")
        max_bytes = int(max_bytes_str) if max_bytes_str.isdigit() else 0
        if max_bytes > 0 and log_path.exists() and log_path.stat().st_size > max_bytes:
            rotated = log_path.with_name("events.1.log")
            if rotated.exists():
                rotated.unlink()
            log_path.rename(rotated)
    except Exception:
        pass


def write_event(out_dir: Path, event: Dict, run_id: Optional[str] = None) -> None:
    """
    Append one JSON event line to the run's events.log.

    Events carry no wall-clock timestamp; the run manifest holds the only one.
    """
    try:
        log_path = events_log_path(out_dir)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        event_safe = {
            k: v for k, v in dict(event).items() if k.lower() not in REDACTED_KEYS
        }
        if run_id is not None:
            event_safe.setdefault("run_id", run_id)
        rotate_events_if_needed(log_path)
        with open(log_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(event_safe, ensure_ascii=False, sort_keys=True) + "\n")
    except Exception:
        pass


__all__ = [
    "RunLogger",
    "get_logger",
    "configure_logging",
    "write_event",
    "rotate_events_if_needed",
    "events_log_path",
]
