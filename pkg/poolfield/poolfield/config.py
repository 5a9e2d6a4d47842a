from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict

import yaml

from .fingerprint import MatchKey
from .pool_client import RatePolicy


def _expand(p: str) -> str:
    return os.path.expandvars(os.path.expanduser(p))


@dataclass(frozen=True)
class PoolFieldConfig:
    """Configuration wrapper for poolfield.

    Top-level keys: pool, rate, http, enumerate, store, probe, match.
    Every key is optional; accessors fall back to the documented defaults.
    """

    raw: Dict[str, Any]

    def _section(self, name: str) -> Dict[str, Any]:
        return dict(self.raw.get(name) or {})

    # -------------------------
    # Pool website
    # -------------------------
    @property
    def base_url(self) -> str:
        return str(self._section("pool").get("base_url", "https://www.ntppool.org"))

    @property
    def state_dir(self) -> Path:
        return Path(_expand(str(self._section("pool").get("state_dir", "./state")))).resolve()

    @property
    def user_agent(self) -> str:
        return str(self._section("pool").get("user_agent", "") or "")

    @property
    def rate_policy(self) -> RatePolicy:
        r = self._section("rate")
        return RatePolicy(
            mean_inter_request_s=float(r.get("mean_inter_request_s", 5.0)),
            id_poll_interval_s=float(r.get("id_poll_interval_s", 5400.0)),
            answers_poll_interval_s=float(r.get("answers_poll_interval_s", 1800.0)),
            jitter=float(r.get("jitter", 0.5)),
        )

    @property
    def http_timeout_s(self) -> float:
        return float(self._section("http").get("timeout_s", 10.0))

    @property
    def http_max_attempts(self) -> int:
        return int(self._section("http").get("max_attempts", 4))

    @property
    def http_backoff_initial_s(self) -> float:
        return float(self._section("http").get("backoff_initial_s", 1.0))

    @property
    def http_backoff_max_s(self) -> float:
        return float(self._section("http").get("backoff_max_s", 30.0))

    @property
    def gap_tolerance(self) -> int:
        return int(self._section("enumerate").get("gap_tolerance", 1))

    @property
    def snapshot_every(self) -> int:
        return int(self._section("store").get("snapshot_every", 100))

    # -------------------------
    # Prober
    # -------------------------
    @property
    def probe_kwargs(self) -> Dict[str, Any]:
        p = self._section("probe")
        return {
            "probes_per_target": int(p.get("probes_per_target", 2)),
            "window_s": float(p.get("window_s", 60.0)),
            "timeout_s": float(p.get("timeout_s", 3.0)),
            "retries": int(p.get("retries", 2)),
            "spacing_s": float(p.get("spacing_s", 5.0)),
            "max_pps": float(p.get("max_pps", 50.0)),
            "workers": int(p.get("workers", 16)),
            "weak_hints": bool(p.get("weak_hints", False)),
        }

    @property
    def match_key(self) -> MatchKey:
        m = self._section("match")
        return MatchKey(
            use_poll=bool(m.get("use_poll", False)),
            use_ttl=bool(m.get("use_ttl", False)),
            use_dscp=bool(m.get("use_dscp", False)),
        )


def load_config(path: str | Path) -> PoolFieldConfig:
    p = Path(path).resolve()
    raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"invalid_config: {p.name} must contain a mapping")
    return PoolFieldConfig(raw)


def default_config_path() -> Path:
    cwd = Path.cwd()
    for cand in [cwd / "config" / "poolfield.yaml", cwd / "poolfield.yaml"]:
        if cand.exists():
            return cand.resolve()
    return (Path(__file__).resolve().parents[1] / "config" / "poolfield.yaml").resolve()
