from __future__ import annotations

import os
from pathlib import Path

"""mockpool configuration helpers.

This module is the single source of truth for environment variables used by
`mockpool`.

- `MOCKPOOL_HOST` (default `127.0.0.1`): bind host
- `MOCKPOOL_PORT` (default `8088`): bind port
- `MOCKPOOL_FIXTURE` (default bundled `data/default.yaml`): fixture file
- `MOCKPOOL_LOG_LEVEL` (default `info`): uvicorn log level
- `MOCKPOOL_ALLOW_REMOTE` (default `0`): set to `1` to bind a non-loopback host
"""


def package_root() -> Path:
    return Path(__file__).resolve().parent


def env_str(*names: str, default: str = "") -> str:
    for n in names:
        v = os.environ.get(n)
        if v is not None and str(v) != "":
            return str(v)
    return default


def env_bool(*names: str, default: bool = False) -> bool:
    v = env_str(*names, default="")
    if v == "":
        return bool(default)
    return str(v).strip().lower() in ("1", "true", "yes", "y", "on")


def env_int(*names: str, default: int) -> int:
    v = env_str(*names, default="")
    if v == "":
        return int(default)
    try:
        return int(str(v).strip())
    except ValueError:
        return int(default)



def mock_host() -> str:
    return env_str("MOCKPOOL_HOST", default="127.0.0.1")


def mock_port() -> int:
    return env_int("MOCKPOOL_PORT", default=8088)


def mock_log_level() -> str:
    return env_str("MOCKPOOL_LOG_LEVEL", default="info")


def allow_remote() -> bool:
    return env_bool("MOCKPOOL_ALLOW_REMOTE", default=False)


def fixture_path() -> Path:
    p = env_str("MOCKPOOL_FIXTURE", default="")
    if p:
        return Path(os.path.expanduser(p)).resolve()
    return package_root() / "data" / "default.yaml"
