from __future__ import annotations

import threading

import pytest

from poolfield.ratelimit import FakeClock, RateLimiter


def test_mean_spacing_holds_over_ten_minutes() -> None:
    clock = FakeClock()
    lim = RateLimiter(5.0, jitter=0.5, clock=clock.time, sleep=clock.sleep, seed=7)
    times = []
    while clock.time() < 600.0:
        times.append(lim.acquire())
    gaps = [b - a for a, b in zip(times, times[1:])]
    mean = sum(gaps) / len(gaps)
    assert abs(mean - 5.0) <= 0.5
    assert min(gaps) >= 2.5 - 1e-9
    assert max(gaps) <= 7.5 + 1e-9


def test_idle_time_does_not_build_a_burst() -> None:
    clock = FakeClock()
    lim = RateLimiter(5.0, jitter=0.5, clock=clock.time, sleep=clock.sleep, seed=1)
    lim.acquire()
    clock.advance(300.0)
    a = lim.acquire()
    b = lim.acquire()
    c = lim.acquire()
    assert b - a >= 2.5 and c - b >= 2.5


def test_per_second_cap_is_exact() -> None:
    clock = FakeClock()
    lim = RateLimiter.per_second(50.0, clock=clock.time, sleep=clock.sleep)
    stamps = [lim() for _ in range(101)]
    assert stamps[-1] - stamps[0] == pytest.approx(2.0)


def test_threads_share_one_schedule() -> None:
    clock = FakeClock()
    lim = RateLimiter(1.0, jitter=0.2, clock=clock.time, sleep=clock.sleep, seed=3)

    def worker() -> None:
        for _ in range(25):
            lim.acquire()

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    stamps = sorted(lim.emissions)
    assert len(stamps) == 100
    assert min(b - a for a, b in zip(stamps, stamps[1:])) >= 0.8 - 1e-9


@pytest.mark.parametrize("mean,jitter", [(0.0, 0.5), (-1.0, 0.0), (5.0, 1.0), (5.0, -0.1)])
def test_invalid_rate_rejected(mean: float, jitter: float) -> None:
    with pytest.raises(ValueError):
        RateLimiter(mean, jitter=jitter)
