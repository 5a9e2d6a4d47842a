from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List

import yaml

from .apportion import DEFAULT_ANSWERS_PER_QUERY, M_MAX_KBPS


@dataclass(frozen=True)
class PoolModelConfig:
    """Configuration wrapper for poolmodel.

    Top-level keys: apportion, activity, iid, lifetime, sweep, sim.
    """

    raw: Dict[str, Any]

    def _section(self, name: str) -> Dict[str, Any]:
        return dict(self.raw.get(name) or {})

    @property
    def m_kbps(self) -> int:
        return int(self._section("apportion").get("m_kbps", M_MAX_KBPS))

    @property
    def f(self) -> Fraction:
        return Fraction(str(self._section("apportion").get("f", "0.5")))

    @property
    def answers_per_query(self) -> int:
        return int(self._section("apportion").get("answers_per_query", DEFAULT_ANSWERS_PER_QUERY))

    @property
    def activity_threshold(self) -> float:
        return float(self._section("activity").get("threshold", 10.0))

    @property
    def privacy_min_bits(self) -> int:
        return int(self._section("iid").get("privacy_min_bits", 28))

    @property
    def short_days(self) -> float:
        return float(self._section("lifetime").get("short_days", 10.0))

    @property
    def percentiles(self) -> List[float]:
        return [float(p) for p in self._section("sweep").get("percentiles", [50, 90])]

    @property
    def sim_defaults(self) -> Dict[str, Any]:
        """Scenario keys filled in when a scenario leaves them out."""
        s = self._section("sim")
        return {
            "step_s": float(s.get("step_s", 900.0)),
            "window_s": float(s.get("window_s", 86400.0)),
            "answer_size": int(s.get("answer_size", 4)),
            "monitor": {
                "good_delta": float(s.get("good_delta", 1.0)),
                "bad_delta": float(s.get("bad_delta", -5.0)),
                "decay": float(s.get("decay", 0.95)),
            },
        }


def load_config(path: str | Path) -> PoolModelConfig:
    p = Path(path).resolve()
    raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"invalid_config: {p.name} must contain a mapping")
    return PoolModelConfig(raw)


def default_config_path() -> Path:
    cwd = Path.cwd()
    for cand in [cwd / "configs" / "poolmodel.yaml", cwd / "poolmodel.yaml"]:
        if cand.exists():
            return cand.resolve()
    return (Path(__file__).resolve().parents[1] / "configs" / "poolmodel.yaml").resolve()
