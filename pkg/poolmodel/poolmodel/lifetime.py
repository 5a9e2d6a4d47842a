"""Per-server participation analytics over score histories."""
from __future__ import annotations

import logging
import statistics
from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Sequence, Tuple

from poolfield.errors import InputValidationError
from poolfield.pool_client import ScoreRow

log = logging.getLogger(__name__)

DAY_S = 86400.0
ACTIVE_THRESHOLD = 10.0


@dataclass(frozen=True)
class ScoreSeries:
    server_id: int
    samples: Tuple[Tuple[float, float], ...]

    def __post_init__(self) -> None:
        if not self.samples:
            raise InputValidationError(f"server {self.server_id}: empty score series", code="empty_series")
        for (t0, _), (t1, _) in zip(self.samples, self.samples[1:]):
            if t1 <= t0:
                raise InputValidationError(
                    f"server {self.server_id}: timestamps not strictly increasing at {t1}", code="unordered_series"
                )

    @property
    def first_ts(self) -> float:
        return self.samples[0][0]

    @property
    def last_ts(self) -> float:
        return self.samples[-1][0]


def series_from_rows(rows: Iterable[ScoreRow]) -> Dict[int, ScoreSeries]:
    """Group import rows by server. A repeated timestamp keeps the last row seen."""
    by_server: Dict[int, Dict[float, float]] = defaultdict(dict)
    for r in rows:
        by_server[int(r.server_id)][float(r.ts)] = float(r.score)
    return {
        sid: ScoreSeries(sid, tuple(sorted(points.items())))
        for sid, points in sorted(by_server.items())
    }


def lifetime(series: ScoreSeries) -> float:
    """Seconds between the first and the last sample."""
    return series.last_ts - series.first_ts


def availability(series: ScoreSeries, threshold: float = ACTIVE_THRESHOLD) -> float:
    """Time-weighted fraction of the lifetime spent at or above `threshold`.

    Scores hold until the next sample. A single sample counts as fully in or
    fully out depending on its score.
    """
    span = lifetime(series)
    if span == 0:
        return 1.0 if series.samples[0][1] >= threshold else 0.0
    up = 0.0
    for (t0, score), (t1, _) in zip(series.samples, series.samples[1:]):
        if score >= threshold:
            up += t1 - t0
    return min(1.0, max(0.0, up / span))


def lifetime_cdf(series: Iterable[ScoreSeries], days: Sequence[float]) -> List[Dict[str, float]]:
    spans = sorted(lifetime(s) for s in series)
    if not spans:
        return [{"days": float(d), "fraction": 0.0} for d in days]
    out = []
    for d in days:
        limit = float(d) * DAY_S
        n = sum(1 for x in spans if x <= limit)
        out.append({"days": float(d), "fraction": n / len(spans)})
    return out


def cohort_summary(
    series: Iterable[ScoreSeries],
    *,
    threshold: float = ACTIVE_THRESHOLD,
    short_days: float = 10.0,
    long_days: float = 3 * 365.0,
) -> Dict[str, Any]:
    items = list(series)
    if not items:
        return {"kind": "lifetime_summary", "servers": 0}
    spans_d = [lifetime(s) / DAY_S for s in items]
    avail = [availability(s, threshold) for s in items]
    return {
        "kind": "lifetime_summary",
        "servers": len(items),
        "threshold": threshold,
        "median_lifetime_days": statistics.median(spans_d),
        "short_days": short_days,
        "fraction_short": sum(1 for d in spans_d if d < short_days) / len(items),
        "long_days": long_days,
        "fraction_long": sum(1 for d in spans_d if d > long_days) / len(items),
        "mean_availability": statistics.fmean(avail),
        "cdf": lifetime_cdf(items, [1, 10, 30, 365, long_days]),
    }
