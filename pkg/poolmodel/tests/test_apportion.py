from __future__ import annotations

import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poolfield.errors import DomainError, InputValidationError, UndefinedShareError
from poolmodel.apportion import (
    M_MAX_KBPS,
    ZoneServer,
    ZoneState,
    achieved_fraction,
    attack_servers_required,
    expected_share,
    expected_shares,
    global_query_rate,
    load_zone_aggregates,
    load_zone_csv,
    netspeed_label,
    parse_netspeed,
    plan_attack,
    plan_zone,
    robustness_sweep,
    sweep_aggregates,
    validate_netspeed,
)

WORKED = ZoneState(
    "xx",
    tuple(ZoneServer(f"192.0.2.{i}", 25600) for i in range(1, 5)) + (ZoneServer("192.0.2.5", 102400),),
)

HU = ZoneState(
    "hu",
    tuple(ZoneServer(f"192.0.2.{i}", 1_000_000) for i in range(11, 15))
    + (ZoneServer("192.0.2.15", 100_000), ZoneServer("192.0.2.16", 1_500)),
)


def test_worked_example_shares() -> None:
    assert expected_share(25600, WORKED) == Fraction(1, 8)
    assert expected_share(102400, WORKED) == Fraction(1, 2)


def test_single_server_zone_gets_everything() -> None:
    z = ZoneState("aa", (ZoneServer("192.0.2.1", 512),))
    assert expected_share(512, z) == 1


def test_inactive_and_monitor_servers_do_not_count() -> None:
    z = ZoneState(
        "aa",
        (ZoneServer("192.0.2.1", 1536), ZoneServer("192.0.2.2", 1536, active=False), ZoneServer("192.0.2.3", 0)),
    )
    assert z.aggregate == 1536
    assert expected_shares(z) == {"192.0.2.1": Fraction(1)}


def test_empty_zone_share_is_undefined() -> None:
    with pytest.raises(UndefinedShareError):
        expected_share(512, ZoneState("aa", (ZoneServer("192.0.2.1", 512, active=False),)))


def test_hu_roster_with_injected_attackers() -> None:
    assert HU.aggregate == 4_101_500
    attacked = ZoneState(
        "hu", HU.servers + (ZoneServer("198.51.100.1", M_MAX_KBPS), ZoneServer("198.51.100.2", M_MAX_KBPS))
    )
    shares = expected_shares(attacked)
    assert float(shares["198.51.100.1"]) == pytest.approx(0.297, abs=0.001)
    assert float(shares["192.0.2.11"]) == pytest.approx(0.099, abs=0.001)
    assert float(shares["192.0.2.15"]) == pytest.approx(0.0099, abs=0.0005)


def test_hu_attack_size() -> None:
    plan = plan_attack("hu", 4_101_000, M_MAX_KBPS, 0.5)
    assert plan.S == 2
    assert float(plan.achieved) == pytest.approx(0.594, abs=0.0005)
    assert plan.minimal


def test_symmetric_zone_needs_one_server() -> None:
    assert attack_servers_required(M_MAX_KBPS, M_MAX_KBPS, Fraction(1, 2)) == 1


def test_empty_zone_needs_one_server() -> None:
    assert attack_servers_required(0, M_MAX_KBPS, 0.9) == 1


@pytest.mark.parametrize("f", [0, 1, -0.5, 1.5])
def test_fraction_outside_open_interval(f) -> None:
    with pytest.raises(DomainError):
        attack_servers_required(1000, 1000, f)


def test_matches_linear_scan_oracle() -> None:
    rng = random.Random(20240501)
    for _ in range(10_000):
        n = rng.randint(0, 20_000_000)
        m = rng.randint(100_000, 3_000_000)
        k = rng.randint(1, 90)
        s = 1
        # s*m / (n + s*m) >= k/100  <=>  s*m*(100-k) >= k*n
        while s * m * (100 - k) < k * n:
            s += 1
        got = attack_servers_required(n, m, Fraction(k, 100))
        assert got == s, (n, m, k)
        assert achieved_fraction(n, m, got) >= Fraction(k, 100)


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(min_value=0, max_value=10**9),
    dn=st.integers(min_value=0, max_value=10**8),
    m=st.integers(min_value=1, max_value=3_000_000),
    dm=st.integers(min_value=0, max_value=1_000_000),
    k=st.integers(min_value=1, max_value=98),
)
def test_monotone_in_every_argument(n: int, dn: int, m: int, dm: int, k: int) -> None:
    f = Fraction(k, 100)
    s = attack_servers_required(n, m, f)
    assert attack_servers_required(n + dn, m, f) >= s
    assert attack_servers_required(n, m + dm, f) <= s
    assert attack_servers_required(n, m, Fraction(k + 1, 100)) >= s


@settings(max_examples=100, deadline=None)
@given(
    speeds=st.lists(st.sampled_from([512, 1536, 3072, 25600, 102400, 1_000_000]), min_size=1, max_size=20),
    k=st.integers(min_value=2, max_value=1000),
)
def test_shares_sum_to_one_and_scale(speeds: list[int], k: int) -> None:
    z = ZoneState("aa", tuple(ZoneServer(f"10.0.0.{i}", s) for i, s in enumerate(speeds, start=1)))
    shares = expected_shares(z)
    assert sum(shares.values()) == 1
    assert expected_shares(z.scaled(k)) == shares


def test_sweep_half_zones_single_server_and_p90() -> None:
    aggregates = {f"z{i:03d}": M_MAX_KBPS // 2 for i in range(50)}
    for i, s in enumerate([2, 3, 4, 5, 6, 7, 8, 9] * 4 + [10] * 8):
        aggregates[f"y{i:03d}"] = s * M_MAX_KBPS
    for i in range(10):
        aggregates[f"x{i:03d}"] = 20 * M_MAX_KBPS
    report = sweep_aggregates(aggregates, M_MAX_KBPS, Fraction(1, 2))
    summary = report.summary()
    assert summary["zones"] == 100
    assert summary["single_server_fraction"] >= 0.5
    assert summary["percentiles"]["p90"] == 10
    assert summary["percentiles"]["p50"] == 1
    assert summary["cdf"][-1]["fraction"] == pytest.approx(1.0)


def test_sweep_over_empty_zones() -> None:
    zones = [ZoneState("aa"), ZoneState("bb", (ZoneServer("192.0.2.1", 512, active=False),))]
    assert [p.S for p in robustness_sweep(zones).plans] == [1, 1]


def test_sweep_needs_zones() -> None:
    with pytest.raises(InputValidationError):
        sweep_aggregates({})


def test_global_query_rate() -> None:
    assert global_query_rate({"v4": 389_257, "v6": 34_399}) == pytest.approx(105_914.0)
    assert global_query_rate({"v4": 0.0, "v6": 0.0}) == 0.0
    assert global_query_rate([400.0, 0.0]) == pytest.approx(100.0)
    with pytest.raises(InputValidationError):
        global_query_rate([-1.0])


def test_netspeed_menus() -> None:
    assert validate_netspeed(3_072_000) == 3_072_000
    assert validate_netspeed(3_000_000) == 3_000_000
    with pytest.raises(InputValidationError):
        validate_netspeed(1234)
    assert parse_netspeed("1.5Mbps") == 1536
    assert parse_netspeed("1.5Mbps", decimal=True) == 1500
    assert netspeed_label(0) == "monitor"
    assert netspeed_label(1_000_000) == "1Gbps"


def test_load_zone_csv_and_plan(tmp_path) -> None:
    p = tmp_path / "zones.csv"
    p.write_text(
        "zone,address,netspeed_kbps,active\n"
        "hu,192.0.2.11,1000000,true\n"
        "hu,192.0.2.12,1000000,true\n"
        "hu,192.0.2.13,1000000,false\n"
        "is,192.0.2.20,512,1\n",
        encoding="utf-8",
    )
    zones = {z.zone: z for z in load_zone_csv(p)}
    assert zones["hu"].aggregate == 2_000_000
    assert plan_zone(zones["hu"]).S == 1
    assert plan_zone(zones["is"]).S == 1


def test_load_zone_csv_rejects_off_menu_speed(tmp_path) -> None:
    p = tmp_path / "zones.csv"
    p.write_text("hu,192.0.2.11,999\n", encoding="utf-8")
    with pytest.raises(InputValidationError):
        load_zone_csv(p)


def test_load_zone_aggregates(tmp_path) -> None:
    p = tmp_path / "counts.csv"
    p.write_text("zone,servers_v4,aggregate_netspeed\nhu,6,4101000\nis,1,512\n", encoding="utf-8")
    assert load_zone_aggregates(p) == {"hu": 4_101_000, "is": 512}
