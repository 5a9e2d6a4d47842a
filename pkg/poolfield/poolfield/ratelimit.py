from __future__ import annotations

import logging
import random
import threading
import time
from collections import deque
from typing import Callable, Deque, Optional

log = logging.getLogger(__name__)


class RateLimiter:
    """Shared limiter that serializes request emission times.

    Each gap between emissions is drawn uniformly from
    [mean * (1 - jitter), mean * (1 + jitter)], so the long-run spacing equals
    `mean_interval_s` and two emissions are never closer than
    `mean_interval_s * (1 - jitter)`. The bucket holds a single token: an idle
    period never builds up a burst.
    """

    def __init__(
        self,
        mean_interval_s: float,
        *,
        jitter: float = 0.5,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        seed: Optional[int] = None,
        history: int = 4096,
    ) -> None:
        if mean_interval_s <= 0:
            raise ValueError(f"invalid_rate: mean interval must be positive, got {mean_interval_s}")
        if not 0.0 <= jitter < 1.0:
            raise ValueError(f"invalid_rate: jitter must be in [0, 1), got {jitter}")
        self.mean_interval_s = float(mean_interval_s)
        self.jitter = float(jitter)
        self._clock = clock
        self._sleep = sleep
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self._next_at: Optional[float] = None
        self.emissions: Deque[float] = deque(maxlen=history)

    @classmethod
    def per_second(cls, rate: float, **kw) -> "RateLimiter":
        return cls(1.0 / float(rate), jitter=kw.pop("jitter", 0.0), **kw)

    def _gap(self) -> float:
        if self.jitter == 0.0:
            return self.mean_interval_s
        lo = self.mean_interval_s * (1.0 - self.jitter)
        hi = self.mean_interval_s * (1.0 + self.jitter)
        return self._rng.uniform(lo, hi)

    def acquire(self) -> float:
        """Block until the next emission slot; returns the emission time."""
        with self._lock:
            now = self._clock()
            if self._next_at is not None and now < self._next_at:
                self._sleep(self._next_at - now)
                now = max(self._clock(), self._next_at)
            self._next_at = now + self._gap()
            self.emissions.append(now)
            return now

    def __call__(self) -> float:
        return self.acquire()


class FakeClock:
    """Deterministic clock/sleep pair for offline runs and tests."""

    def __init__(self, start: float = 0.0) -> None:
        self.now = float(start)
        self._lock = threading.Lock()

    def time(self) -> float:
        with self._lock:
            return self.now

    def sleep(self, seconds: float) -> None:
        with self._lock:
            self.now += max(0.0, float(seconds))

    def advance(self, seconds: float) -> None:
        self.sleep(seconds)
