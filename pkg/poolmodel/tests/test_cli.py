from __future__ import annotations

import json
import random
import time
from pathlib import Path

import pytest

from poolfield.clusters import AliasCluster, write_clusters
from poolfield.fingerprint import write_fingerprints
from poolfield.pool_client import AnswerSample, EnumerationCheckpoint, ServerRecord
from poolfield.store import PoolStore
from poolmodel.cli import build_parser, main
from poolmodel.manifest import MANIFEST_FILE, read_manifest
from support.synthetic import alias_population


def _stdout(capsys) -> dict:
    return json.loads(capsys.readouterr().out)


def test_cli_build_parser_has_every_subcommand() -> None:
    p = build_parser()
    subparsers_actions = [a for a in p._actions if getattr(a, "dest", None) == "cmd"]  # type: ignore[attr-defined]
    assert subparsers_actions, "expected subparsers action"
    choices = getattr(subparsers_actions[0], "choices", {})
    assert set(choices) == {"scrape", "answers", "fingerprint", "dealias", "analyze", "plan", "simulate", "report"}


def test_plan_from_zone_csv(tmp_path: Path, capsys) -> None:
    zones = tmp_path / "zones.csv"
    zones.write_text(
        "zone,address,netspeed_kbps,active\n"
        + "".join(f"hu,192.0.2.{i},1000000,true\n" for i in range(11, 15))
        + "hu,192.0.2.15,100000,true\nhu,192.0.2.16,1500,true\nis,192.0.2.30,512,true\n",
        encoding="utf-8",
    )
    out = tmp_path / "plan"
    assert main(["plan", "--zones", str(zones), "--f", "0.5", "--m", "3000000", "--out", str(out)]) == 0
    res = _stdout(capsys)
    assert res["ok"] is True
    assert res["zones"] == 2
    plans = [json.loads(ln) for ln in (out / "plans.jsonl").read_text(encoding="utf-8").splitlines()]
    assert {p["zone"]: p["S"] for p in plans} == {"hu": 2, "is": 1}
    assert (out / "shares.csv").exists()
    man = read_manifest(out)
    assert man["subcommand"] == "plan"
    assert man["inputs"][0]["sha256"]
    assert {Path(o["path"]).name for o in man["outputs"]} >= {"plans.csv", "plan_summary.json"}


def test_dealias_then_analyze(tmp_path: Path, capsys) -> None:
    fps, truth = alias_population(random.Random(3), hosts=20, max_addrs=4, drift=0.0)
    fp_path = tmp_path / "fp.jsonl"
    write_fingerprints(fp_path, fps)
    out = tmp_path / "dealias"
    assert main(["dealias", "--fingerprints", str(fp_path), "--out", str(out)]) == 0
    summary = _stdout(capsys)
    assert summary["clusters"] == 20
    assert (out / "clusters.jsonl").exists()

    servers = tmp_path / "servers.jsonl"
    records = [
        ServerRecord(i, addr, ("de", "europe", "@"), 20.0, 1000, f"acct{h % 5}", 0.0, 0.0).to_record()
        for i, (addr, h) in enumerate(sorted(truth.items()), start=1)
    ]
    servers.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    res_dir = tmp_path / "analyze"
    rc = main(["analyze", "--servers", str(servers), "--clusters", str(out / "clusters.jsonl"), "--out", str(res_dir)])
    assert rc == 0
    res = _stdout(capsys)
    assert res["funnel"]["total_active"] == len(truth)
    assert res["funnel"]["after_dealias"] == 20
    assert res["funnel"]["after_account"] == 5
    assert (res_dir / "funnel.csv").exists()
    assert (res_dir / MANIFEST_FILE).exists()


def test_simulate_then_report(tmp_path: Path, capsys) -> None:
    scenario = tmp_path / "tiny.yaml"
    scenario.write_text(
        "name: tiny\n"
        "duration_days: 1\n"
        "servers:\n"
        "  - {address: 192.0.2.1, zones: [xx], netspeed: 25000, score: 20}\n"
        "  - {address: 192.0.2.2, zones: [xx], netspeed: 100000, score: 20}\n"
        "clients:\n"
        "  - {zone: xx, count: 10}\n",
        encoding="utf-8",
    )
    out = tmp_path / "sim"
    assert main(["simulate", "--scenario", str(scenario), "--seed", "9", "--out", str(out)]) == 0
    res = _stdout(capsys)
    assert res["seed"] == 9
    assert res["dns_queries"] > 0
    assert read_manifest(out)["seed"] == 9

    assert main(["simulate", "--scenario", str(scenario), "--seed", "9", "--out", str(tmp_path / "again")]) == 0
    assert _stdout(capsys)["report_sha256"] == res["report_sha256"]

    tables = tmp_path / "tables"
    assert main(["report", "--input", str(out / "sim_summary.json"), "--out", str(tables)]) == 0
    assert set(_stdout(capsys)["tables"]) == {"sim_windows.csv", "sim_residual.csv", "sim_servers.csv"}


def test_missing_input_exits_with_input_code(tmp_path: Path, capsys) -> None:
    rc = main(["plan", "--zones", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")])
    assert rc == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["ok"] is False
    assert err["error"]["exit"] == 3


def test_bad_scenario_exits_with_input_code(tmp_path: Path, capsys) -> None:
    scenario = tmp_path / "bad.yaml"
    scenario.write_text("name: bad\nduration_days: 1\nservers: []\nextra: 1\n", encoding="utf-8")
    assert main(["simulate", "--scenario", str(scenario), "--out", str(tmp_path / "o")]) == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"]["code"] == "invalid_scenario"


def test_inactive_cluster_members_dropped_before_funnel(tmp_path: Path) -> None:
    clusters = tmp_path / "clusters.jsonl"
    write_clusters(
        clusters,
        [AliasCluster("ac-1", ("192.0.2.1", "192.0.2.2", "192.0.2.200"), False, "192.0.2.0/24", None, False)],
    )
    servers = tmp_path / "servers.jsonl"
    recs = [
        ServerRecord(1, "192.0.2.1", ("de",), 20.0, 1000, None, 0.0, 0.0),
        ServerRecord(2, "192.0.2.2", ("de",), 20.0, 1000, None, 0.0, 0.0),
        ServerRecord(3, "192.0.2.200", ("de",), -20.0, 1000, None, 0.0, 0.0),
    ]
    servers.write_text("".join(json.dumps(r.to_record()) + "\n" for r in recs), encoding="utf-8")
    out = tmp_path / "a"
    assert main(["analyze", "--servers", str(servers), "--clusters", str(clusters), "--out", str(out)]) == 0
    funnel = json.loads((out / "funnel.json").read_text(encoding="utf-8"))
    # the inactive member is dropped before the funnel
    assert (funnel["total_active"], funnel["after_dealias"]) == (2, 1)


def test_scrape_and_answers_wait_for_their_poll_deadlines(tmp_path: Path, capsys) -> None:
    state = tmp_path / "state"
    now = time.time()
    with PoolStore(state) as st:
        st.record_server(ServerRecord(1, "192.0.2.1", ("hu", "@"), 19.0, 1000, None, now, now))
        st.record_answers([AnswerSample("192.0.2.1", "hu", 100, now - 1800), AnswerSample("192.0.2.1", "hu", 1900, now)])
        st.save_checkpoint(
            EnumerationCheckpoint(next_id=2, high_water=1, next_poll_at=now + 3600, updated_at=now, answers_next_poll_at=now + 1800)
        )
    # nothing listens on the discard port: any request would fail the run
    base = ["--base-url", "http://127.0.0.1:9", "--state-dir", str(state), "--mean-interval", "0.01"]

    assert main(["scrape", *base]) == 0
    res = _stdout(capsys)
    assert (res["deferred"], res["fetched"], res["requests"]) == (True, 0, 0)
    assert res["next_id"] == 2

    assert main(["answers", *base]) == 0
    res = _stdout(capsys)
    assert (res["deferred"], res["fetched"], res["samples"]) == (True, 0, 2)
    assert res["v4"] == pytest.approx(1.0)
    assert (state / "answer_rates.json").exists()


def test_pinned_run_id_reaches_manifest_and_errors(tmp_path: Path, capsys, monkeypatch) -> None:
    monkeypatch.setenv("POOLWATCH_RUN_ID", "run-42")
    counts = tmp_path / "counts.csv"
    counts.write_text("zone,aggregate_netspeed\nhu,4101000\n", encoding="utf-8")
    out = tmp_path / "plan"
    assert main(["plan", "--counts", str(counts), "--f", "1/2", "--out", str(out)]) == 0
    capsys.readouterr()
    assert read_manifest(out)["run_id"] == "run-42"

    assert main(["plan", "--counts", str(tmp_path / "nope.csv"), "--out", str(out)]) == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["run_id"] == "run-42"
