"""Run ids and the log format shared by every poolaudit command.

One CLI invocation is one run. Its id is stamped on every log line, recorded
in `run_manifest.json` and echoed in error results. `POOLWATCH_RUN_ID` pins
it so a driver script can tie several invocations together.
"""
from __future__ import annotations

import logging
import os
import uuid
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Iterator, Optional

RUN_ID_ENV = "POOLWATCH_RUN_ID"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s run=%(run_id)s %(message)s"

_run_id_var: ContextVar[Optional[str]] = ContextVar("poolwatch_run_id", default=None)


def _env_run_id() -> Optional[str]:
    return (os.environ.get(RUN_ID_ENV) or "").strip() or None


def get_run_id() -> str:
    """Id of the current run; outside `run_context` a fresh id is bound on first use."""
    rid = _run_id_var.get() or _env_run_id()
    if not rid:
        rid = uuid.uuid4().hex
        _run_id_var.set(rid)
    return rid


@contextmanager
def run_context(run_id: Optional[str] = None) -> Iterator[str]:
    rid = (run_id or "").strip() or _env_run_id() or uuid.uuid4().hex
    tok = _run_id_var.set(rid)
    try:
        yield rid
    finally:
        _run_id_var.reset(tok)


class RunContextFilter(logging.Filter):
    """Stamps `run_id` on every record passing through the handler."""

    def filter(self, record: logging.LogRecord) -> bool:
        record.run_id = _run_id_var.get() or _env_run_id() or "-"
        return True


def configure_logging(level: str | int = "WARNING") -> logging.Handler:
    """Install one stderr handler on the root logger; stdout stays for results."""
    root = logging.getLogger()
    for h in list(root.handlers):
        if getattr(h, "_poolwatch", False):
            root.removeHandler(h)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler.addFilter(RunContextFilter())
    handler._poolwatch = True  # type: ignore[attr-defined]
    root.addHandler(handler)
    root.setLevel(level.upper() if isinstance(level, str) else level)
    return handler
