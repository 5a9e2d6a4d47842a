from __future__ import annotations

import random
from pathlib import Path

import pytest

from mockpool.fixtures import MockPool, MockServer, load_fixture
from poolfield.errors import NotFoundError, TransportError
from poolfield.pool_client import (
    PoolClient,
    RatePolicy,
    answer_deltas,
    answer_rates,
    enumerate_servers,
    poll_answers,
    read_score_rows,
    write_score_rows,
)
from poolfield.ratelimit import FakeClock, RateLimiter
from poolfield.store import PoolStore
from support.live_mock import direct_session, serve_mock

DEFAULT_FIXTURE = Path(__file__).resolve().parents[2] / "mockpool" / "data" / "default.yaml"


def _client(base_url: str, clock: FakeClock, **kw) -> PoolClient:
    # Fake clock and sleep: the limiter and the retry backoff never block the test.
    policy = RatePolicy(mean_inter_request_s=5.0)
    return PoolClient(
        base_url,
        policy=policy,
        limiter=RateLimiter(policy.mean_inter_request_s, jitter=policy.jitter, clock=clock.time, sleep=clock.sleep, seed=0),
        session=direct_session(),
        clock=clock.time,
        sleep=clock.sleep,
        backoff_initial_s=0.5,
        backoff_max_s=2.0,
        **kw,
    )


def _pool(n: int) -> MockPool:
    pool = MockPool()
    for sid in range(1, n + 1):
        pool.add_server(MockServer(server_id=sid, ip=f"198.51.100.{sid}", zones=["hu", "europe", "@"], score=19.0, netspeed=1_000_000))
    return pool


def test_resolve_ids_against_default_fixture() -> None:
    pool = load_fixture(DEFAULT_FIXTURE)
    clock = FakeClock(1_700_000_000.0)
    with serve_mock(pool) as url, _client(url, clock) as client:
        assert client.resolve_id(7) == "192.0.2.7"
        assert client.resolve_id(59105) == "2001:470:1f07:c21:1::123"
        assert client.resolve_id(9) is None

        rec = client.fetch_server(1, "192.0.2.1")
        assert rec.zones == ("@", "north-america", "us")
        assert rec.netspeed == 1_000_000 and rec.account == "acct-aa01"
        assert rec.score == pytest.approx(19.8)
        assert client.fetch_server(5, "192.0.2.5").monitor_only

        hist = client.fetch_score_history(1, "192.0.2.1")
        assert [(r.ts, r.score) for r in hist] == [(1700000000, 0.0), (1700000900, 1.0), (1700001800, 1.95)]


def test_score_rows_persist(tmp_path) -> None:
    pool = load_fixture(DEFAULT_FIXTURE)
    with serve_mock(pool) as url, _client(url, FakeClock()) as client:
        rows = client.fetch_score_history(1, "192.0.2.1")
    p = tmp_path / "scores.csv"
    assert write_score_rows(p, rows) == 3
    assert read_score_rows(p) == rows


def test_enumerate_finds_exactly_the_allocated_ids(tmp_path) -> None:
    clock = FakeClock(1_700_000_000.0)
    with serve_mock(_pool(5)) as url, _client(url, clock) as client, PoolStore(tmp_path / "state") as store:
        found = [r.server_id for r in enumerate_servers(client, store, rng=random.Random(2))]
        assert found == [1, 2, 3, 4, 5]
        cp = store.checkpoint
        assert cp.next_id == 6 and cp.high_water == 5
        now = clock.time()
        assert now + 0.5 * 5400 <= cp.next_poll_at <= now + 1.5 * 5400
        assert not cp.poll_due(now)


def test_enumerate_empty_pool_arms_poller(tmp_path) -> None:
    clock = FakeClock(1_700_000_000.0)
    with serve_mock(MockPool()) as url, _client(url, clock) as client, PoolStore(tmp_path / "state") as store:
        assert list(enumerate_servers(client, store)) == []
        assert store.checkpoint.next_id == 1
        assert store.checkpoint.next_poll_at is not None


def test_scrape_before_poll_deadline_fetches_nothing(tmp_path) -> None:
    pool = _pool(3)
    clock = FakeClock(1_700_000_000.0)
    with serve_mock(pool) as url, _client(url, clock) as client, PoolStore(tmp_path / "state") as store:
        assert [r.server_id for r in enumerate_servers(client, store, rng=random.Random(1))] == [1, 2, 3]
        seen = len(pool.requests)

        pool.add_server(MockServer(server_id=4, ip="198.51.100.4", zones=["hu", "@"], score=19.0, netspeed=512))
        assert list(enumerate_servers(client, store, start_id=1)) == []
        assert len(pool.requests) == seen
        assert store.checkpoint.next_id == 4

        clock.advance(1.5 * 5400 + 1)
        assert [r.server_id for r in enumerate_servers(client, store)] == [4]
        assert store.checkpoint.next_poll_at > clock.time()

        pool.add_server(MockServer(server_id=5, ip="198.51.100.5", zones=["hu", "@"], score=19.0, netspeed=512))
        assert [r.server_id for r in enumerate_servers(client, store, force=True)] == [5]


def test_max_ids_stop_leaves_the_poller_unarmed(tmp_path) -> None:
    clock = FakeClock(1_700_000_000.0)
    with serve_mock(_pool(5)) as url, _client(url, clock) as client, PoolStore(tmp_path / "state") as store:
        assert [r.server_id for r in enumerate_servers(client, store, max_ids=2)] == [1, 2]
        assert store.checkpoint.next_poll_at is None
        assert [r.server_id for r in enumerate_servers(client, store)] == [3, 4, 5]
        assert store.checkpoint.next_poll_at is not None


def test_crash_resume_never_refetches_completed_ids(tmp_path) -> None:
    pool = _pool(6)
    pool.fail_paths["/scores/4"] = 503
    clock = FakeClock(1_700_000_000.0)
    state = tmp_path / "state"
    with serve_mock(pool) as url:
        got = []
        with _client(url, clock, max_attempts=2) as client, PoolStore(state) as store:
            with pytest.raises(TransportError):
                for rec in enumerate_servers(client, store):
                    got.append(rec.server_id)
        assert got == [1, 2, 3]

        pool.fail_paths.clear()
        with _client(url, clock) as client, PoolStore(state) as store:
            assert store.checkpoint.next_id == 4
            got = [r.server_id for r in enumerate_servers(client, store, start_id=1)]
            assert got == [4, 5, 6]
            assert sorted(store.servers) == [1, 2, 3, 4, 5, 6]
    for sid in (1, 2, 3):
        assert pool.requests.count(f"/scores/{sid}") == 1
    assert pool.requests.count("/scores/4") == 3


def test_answer_counters_and_rates() -> None:
    pool = load_fixture(DEFAULT_FIXTURE)
    clock = FakeClock(1_700_000_000.0)
    with serve_mock(pool) as url, _client(url, clock) as client:
        assert client.fetch_answers("192.0.2.99") == []
        first = client.fetch_answers("192.0.2.7")
        assert {s.zone: s.answer_count for s in first} == {"@": 1000, "us": 50}

        clock.advance(1800.0)
        pool.advance_answers("192.0.2.7", "@", 900)
        pool.advance_answers("192.0.2.7", "us", 180)
        second = client.fetch_answers("192.0.2.7")

        clock.advance(1800.0)
        pool.answers["192.0.2.7"]["@"] = 10
        third = client.fetch_answers("192.0.2.7")

    deltas = answer_deltas(first + second + third)
    at = [d for d in deltas if d.zone == "@"]
    assert [(d.delta, d.reset) for d in at] == [(900, False), (0, True)]
    assert at[0].rate == pytest.approx(0.5)
    assert at[1].rate == 0.0

    rates = answer_rates(first + second)
    assert rates["v4"] == pytest.approx(0.6)
    assert rates["by_zone"]["us"]["v4"] == pytest.approx(0.1)


def test_zone_counts() -> None:
    pool = load_fixture(DEFAULT_FIXTURE)
    with serve_mock(pool) as url, _client(url, FakeClock()) as client:
        assert client.fetch_zone_counts("hu").aggregate_netspeed == 4_101_000
        assert client.fetch_zone_counts("@").servers_v4 == 3211
        empty = client.fetch_zone_counts("empty")
        assert (empty.servers_v4, empty.servers_v6, empty.aggregate_netspeed) == (0, 0, 0)
        with pytest.raises(NotFoundError):
            client.fetch_zone_counts("xx")


def test_answers_polled_at_most_once_per_interval(tmp_path) -> None:
    pool = load_fixture(DEFAULT_FIXTURE)
    clock = FakeClock(1_700_000_000.0)
    with serve_mock(pool) as url, _client(url, clock) as client, PoolStore(tmp_path / "state") as store:
        first = poll_answers(client, store, ["192.0.2.7"])
        assert {s.zone for s in first} == {"@", "us"}
        assert store.checkpoint.answers_next_poll_at == pytest.approx(clock.time() + 1800.0)
        seen = len(pool.requests)

        assert poll_answers(client, store, ["192.0.2.7"]) == []
        assert len(pool.requests) == seen

        clock.advance(1800.0)
        assert len(poll_answers(client, store, ["192.0.2.7"])) == 2
        assert len(poll_answers(client, store, ["192.0.2.7"], force=True)) == 2
        assert len(list(store.iter_answer_samples())) == 6

    with PoolStore(tmp_path / "state") as store:
        assert not store.checkpoint.answers_poll_due(clock.time())
