from __future__ import annotations

import copy
import csv
from pathlib import Path
from statistics import mean
from typing import Any, Dict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poolfield.errors import DomainError, ScenarioError
from poolmodel.apportion import expected_shares
from poolmodel.poolsim import (
    Outcome,
    PoolState,
    SimConfig,
    SimServer,
    load_scenario,
    residual,
    run,
    select_answer,
    select_answers,
    step_score,
)

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def _base(**over: Any) -> Dict[str, Any]:
    raw: Dict[str, Any] = {
        "name": "t",
        "seed": 5,
        "duration_days": 1,
        "servers": [
            {"address": "192.0.2.1", "zones": ["xx"], "netspeed": 25000, "score": 20},
            {"address": "192.0.2.2", "zones": ["xx"], "netspeed": 25000, "score": 20},
        ],
        "clients": [{"zone": "xx", "count": 20}],
        "resolution": {"distribution": "fixed", "scale_s": 3600},
    }
    raw.update(over)
    return raw


# -------------------------
# scoring
# -------------------------
def test_fourteen_accurate_probes_reach_threshold() -> None:
    s = 0.0
    steps = 0
    while s < 10.0:
        s = step_score(s, Outcome.ACCURATE)
        steps += 1
    assert steps == 14


def test_recovery_from_the_floor_takes_forty_nine_steps() -> None:
    s = -100.0
    steps = 0
    while s < 10.0:
        s = step_score(s, Outcome.ACCURATE)
        steps += 1
    assert steps == 49


def test_two_bad_probes_drop_below_threshold() -> None:
    s = 20.0
    steps = 0
    while s >= 10.0:
        s = step_score(s, "bad")
        steps += 1
    assert steps == 2
    assert steps <= 18


def test_score_stays_clamped() -> None:
    assert step_score(-100.0, Outcome.BAD) == -100.0
    assert step_score(20.0, Outcome.ACCURATE) == 20.0
    with pytest.raises(DomainError):
        step_score(25.0, Outcome.ACCURATE)


@settings(max_examples=300, deadline=None)
@given(
    st.floats(min_value=-100.0, max_value=20.0),
    st.lists(st.sampled_from(list(Outcome)), max_size=200),
)
def test_score_stays_in_range_for_any_outcome_sequence(start: float, outcomes) -> None:
    s = start
    for o in outcomes:
        s = step_score(s, o)
        assert -100.0 <= s <= 20.0


def test_score_range_over_seeded_bulk_runs() -> None:
    rng = np.random.default_rng(11)
    starts = rng.uniform(-100.0, 20.0, size=500)
    accurate = rng.random((500, 300)) < rng.random((500, 1))
    lo, hi = 20.0, -100.0
    for start, row in zip(starts, accurate):
        s = float(start)
        for ok in row:
            s = step_score(s, Outcome.ACCURATE if ok else Outcome.BAD)
            lo, hi = min(lo, s), max(hi, s)
    assert -100.0 <= lo and hi <= 20.0
    # long runs of either outcome reach the bounds
    assert lo < -90.0 and hi > 19.0


# -------------------------
# answer selection
# -------------------------
def _worked_state() -> PoolState:
    servers = [SimServer(f"192.0.2.{i}", ("xx",), 25000, score=20.0) for i in range(1, 5)]
    servers.append(SimServer("192.0.2.5", ("xx",), 100000, score=20.0))
    return PoolState.from_servers(servers)


def test_first_position_follows_netspeed() -> None:
    st = _worked_state()
    rng = np.random.Generator(np.random.PCG64(42))
    used, rows = select_answers("xx", st, rng, 100_000, 4)
    assert used == "xx"
    assert rows.shape == (100_000, 4)
    first = np.bincount(rows[:, 0], minlength=5) / 100_000
    assert first[4] == pytest.approx(0.5, abs=0.01)
    for i in range(4):
        assert first[i] == pytest.approx(0.125, abs=0.01)
    # no address twice in one answer
    assert all(len(set(r)) == 4 for r in rows[:1000].tolist())


def test_country_falls_back_to_continent() -> None:
    st = PoolState.from_servers(
        [SimServer("192.0.2.1", ("europe",), 1000, score=20.0)],
        parents={"hu": "europe", "europe": None},
    )
    rng = np.random.Generator(np.random.PCG64(1))
    used, rows = select_answers("hu", st, rng, 3, 4)
    assert used == "europe"
    assert rows.shape == (3, 1)


def test_global_zone_is_last_resort() -> None:
    st = PoolState.from_servers([SimServer("192.0.2.1", ("@",), 1000, score=20.0)])
    rng = np.random.Generator(np.random.PCG64(1))
    assert select_answer("zz", st, rng) == ["192.0.2.1"]


def test_no_eligible_server_gives_empty_answer() -> None:
    st = PoolState.from_servers([SimServer("192.0.2.1", ("xx",), 1000, score=5.0)])
    rng = np.random.Generator(np.random.PCG64(1))
    assert select_answer("xx", st, rng) == []


def test_single_server_zone() -> None:
    st = PoolState.from_servers([SimServer("192.0.2.9", ("xx",), 512, score=20.0)])
    rng = np.random.Generator(np.random.PCG64(1))
    assert select_answer("xx", st, rng) == ["192.0.2.9"]


# -------------------------
# scenarios
# -------------------------
def test_hu_analytic_shares() -> None:
    cfg = load_scenario(SCENARIOS / "hu.yaml")
    shares = expected_shares(cfg.zone_state("hu"))
    assert float(shares["198.51.100.1"]) == pytest.approx(0.297, abs=0.001)
    assert float(shares["198.51.100.2"]) == pytest.approx(0.297, abs=0.001)
    assert float(shares["192.0.2.11"]) == pytest.approx(0.099, abs=0.001)


def test_hu_baseline_shares() -> None:
    cfg = load_scenario(SCENARIOS / "hu.yaml")
    analytic = {a: float(v) for a, v in expected_shares(cfg.zone_state("hu", with_attack=False)).items()}
    assert analytic["192.0.2.11"] == pytest.approx(0.2438, abs=0.0005)
    assert analytic["192.0.2.15"] == pytest.approx(0.0244, abs=0.0005)
    assert analytic["192.0.2.16"] < 0.001

    report = run(cfg)
    day0 = report.shares(0, "hu")
    for a in ("192.0.2.11", "192.0.2.12", "192.0.2.13", "192.0.2.14"):
        assert day0[a] == pytest.approx(0.244, abs=0.015)
    assert day0["192.0.2.15"] == pytest.approx(0.024, abs=0.005)
    assert day0.get("192.0.2.16", 0.0) < 0.001
    assert not any(a.startswith("198.51.100.") for a in day0)
    assert not report.windows[0]["attacker_share"]


def test_hu_simulated_shares() -> None:
    report = run(load_scenario(SCENARIOS / "hu.yaml"))
    shares = report.shares(1, "hu")
    for a in ("198.51.100.1", "198.51.100.2"):
        assert shares[a] == pytest.approx(0.297, abs=0.015)
    assert shares["192.0.2.11"] == pytest.approx(0.099, abs=0.015)
    # two attack servers sized for half the zone get at least that, less sampling noise
    assert report.windows[1]["attacker_share"] >= 0.49


def test_global_registration_dilutes_country_share() -> None:
    isolated = run(load_scenario(SCENARIOS / "hu.yaml")).shares(1, "hu")
    spread = run(load_scenario(SCENARIOS / "hu_global.yaml")).shares(1, "hu")
    assert spread["198.51.100.1"] < isolated["198.51.100.1"] - 0.05


def test_global_dilution_comes_from_split_weighting() -> None:
    raw = copy.deepcopy(dict(load_scenario(SCENARIOS / "hu_global.yaml").raw))
    split = run(SimConfig.from_mapping(raw)).shares(1, "hu")
    # 1 Gbps per zone against 4.1015 Gbps of incumbents
    assert split["198.51.100.1"] == pytest.approx(1_000_000 / 6_101_500, abs=0.015)
    raw["zone_weight"] = "netspeed"
    whole = run(SimConfig.from_mapping(raw)).shares(1, "hu")
    assert whole["198.51.100.1"] == pytest.approx(0.297, abs=0.015)


def test_worked_example_scenario() -> None:
    report = run(load_scenario(SCENARIOS / "worked_example.yaml"))
    shares = report.shares(0, "xx")
    assert report.dns_queries >= 100_000
    assert shares["192.0.2.5"] == pytest.approx(0.5, abs=0.01)
    assert shares["192.0.2.1"] == pytest.approx(0.125, abs=0.01)


def test_zero_clients() -> None:
    report = run(SimConfig.from_mapping(_base(clients=[])))
    assert report.dns_queries == 0
    assert report.ntp_queries == 0
    assert report.rows == ()


def test_monitor_only_server_never_answered() -> None:
    servers = _base()["servers"] + [{"address": "192.0.2.3", "zones": ["xx"], "netspeed": 0, "score": 20}]
    report = run(SimConfig.from_mapping(_base(servers=servers)))
    assert report.rows
    assert all(r["address"] != "192.0.2.3" for r in report.rows)


def test_unresponsive_server_is_demoted() -> None:
    servers = _base()["servers"] + [
        {"address": "192.0.2.3", "zones": ["xx"], "netspeed": 25000, "score": 20, "responsive": False}
    ]
    report = run(SimConfig.from_mapping(_base(servers=servers)))
    dead = next(s for s in report.servers if s["address"] == "192.0.2.3")
    assert not dead["eligible"]
    assert dead["score"] < 0


def test_same_seed_same_report() -> None:
    cfg = load_scenario(SCENARIOS / "hu.yaml")
    assert run(cfg).digest() == run(cfg).digest()
    assert run(cfg.with_seed(2)).digest() != run(cfg).digest()


def test_report_files(tmp_path) -> None:
    paths = run(SimConfig.from_mapping(_base())).write(tmp_path)
    with paths["windows"].open(encoding="utf-8", newline="") as f:
        header = next(csv.reader(f))
    assert header[:3] == ["window", "zone", "address"]
    assert paths["summary"].exists()
    assert paths["residual"].exists()


# -------------------------
# residual traffic
# -------------------------
def test_heavy_tail_residual_and_daemon_stop() -> None:
    cfg = load_scenario(SCENARIOS / "residual.yaml")
    rows = residual(cfg)
    days = [r["queries"] for r in rows]
    assert mean(days[1:11]) > mean(days[11:21]) > mean(days[21:31])
    assert all(q > 0 for q in days[:30])
    assert days[30] > 0
    stop = next(r["day"] for r in rows if r["daemon_stopped"])
    assert days[stop] < 0.6 * days[stop - 1]


def test_daily_re_resolution_clears_residual() -> None:
    raw = copy.deepcopy(dict(load_scenario(SCENARIOS / "residual.yaml").raw))
    raw["duration_days"] = 10
    raw["clients"] = [{"zone": "hu", "count": 500, "queries_per_day": 48}]
    raw["resolution"] = {"distribution": "fixed", "scale_s": 86400}
    raw["attack"]["daemon_stop_day"] = None
    days = residual(SimConfig.from_mapping(raw))
    assert days[0]["queries"] > 0
    assert sum(r["queries"] for r in days[2:]) == 0


def test_residual_needs_removal() -> None:
    with pytest.raises(ScenarioError):
        residual(load_scenario(SCENARIOS / "hu.yaml"))


# -------------------------
# scenario validation
# -------------------------
def test_unknown_key_rejected() -> None:
    with pytest.raises(ScenarioError):
        SimConfig.from_mapping(_base(colour="blue"))


def test_duplicate_server_rejected() -> None:
    servers = _base()["servers"] * 2
    with pytest.raises(ScenarioError):
        SimConfig.from_mapping(_base(servers=servers))


def test_attack_beyond_duration_rejected() -> None:
    with pytest.raises(ScenarioError):
        SimConfig.from_mapping(_base(attack={"zones": ["xx"], "count": 1, "removal_day": 3}))


def test_zone_loop_rejected() -> None:
    with pytest.raises(ScenarioError):
        SimConfig.from_mapping(_base(zones={"a": "b", "b": "a"}))
