from __future__ import annotations

import argparse
import csv
import json
import logging
import random
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

from poolfield.clusters import alias_summary, build_clusters, cluster_consistency, read_clusters, write_clusters
from poolfield.config import PoolFieldConfig
from poolfield.config import default_config_path as default_field_config_path
from poolfield.config import load_config as load_field_config
from poolfield.errors import InputValidationError, NetworkError, PoolwatchError, StateLockedError
from poolfield.fingerprint import MatchKey, read_fingerprints, stratum1_sources, write_fingerprints
from poolfield.hashutil import canonical_json
from poolfield.pool_client import (
    PoolClient,
    ServerRecord,
    answer_rates,
    enumerate_servers,
    poll_answers,
    read_score_rows,
    write_score_rows,
)
from poolfield.probe import ProbePlan, ReplayTransport, probe_many, read_targets
from poolfield.store import PoolStore

from .apportion import (
    expected_shares,
    global_query_rate,
    load_zone_aggregates,
    load_zone_csv,
    netspeed_distribution,
    robustness_sweep,
    sweep_aggregates,
)
from .config import PoolModelConfig, default_config_path, load_config
from .iid import embedded_mac, iid_report
from .independence import (
    account_concentration,
    anycast_candidates,
    as_type_breakdown,
    asn_distribution,
    funnel,
    load_account_map,
    load_account_names,
    load_as_types,
    monitor_only,
    possible_same_owner,
    restrict_clusters,
    tunnel_broker_servers,
)
from .lifetime import availability, cohort_summary, lifetime, series_from_rows
from .manifest import RunManifest
from .poolsim import SimConfig, load_scenario, run as run_simulation
from .prefixes import asn_map, load_prefix_table
from .report import render
from .run_context import configure_logging, get_run_id, run_context

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NETWORK = 4
EXIT_INTERNAL = 5


# -------------------------
# helpers
# -------------------------
def _emit(res: Mapping[str, Any]) -> None:
    print(json.dumps(res, indent=2, sort_keys=True))


def _write_json(path: Path, obj: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_csv(path: Path, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def _write_lines(path: Path, lines: Iterable[str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{ln}\n" for ln in lines), encoding="utf-8")
    return path


def _params(args: argparse.Namespace) -> Dict[str, Any]:
    skip = {"func", "config", "field_config", "log_level"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in skip}


def _manifest(args: argparse.Namespace, cfg_raw: Mapping[str, Any], inputs: Iterable[Optional[str]], seed: Optional[int] = None) -> RunManifest:
    return RunManifest.start(
        args.cmd,
        [p for p in inputs if p],
        config=cfg_raw,
        seed=seed,
        params=_params(args),
        run_id=get_run_id(),
    )


def _model_cfg(args: argparse.Namespace) -> PoolModelConfig:
    return load_config(args.config)


def _field_cfg(args: argparse.Namespace) -> PoolFieldConfig:
    return load_field_config(args.field_config)


def _client(args: argparse.Namespace, fcfg: PoolFieldConfig) -> PoolClient:
    policy = fcfg.rate_policy
    if getattr(args, "mean_interval", None):
        policy = replace(policy, mean_inter_request_s=float(args.mean_interval))
    return PoolClient(
        args.base_url or fcfg.base_url,
        policy=policy,
        timeout_s=fcfg.http_timeout_s,
        max_attempts=fcfg.http_max_attempts,
        backoff_initial_s=fcfg.http_backoff_initial_s,
        backoff_max_s=fcfg.http_backoff_max_s,
        user_agent=fcfg.user_agent or None,
    )


def _state_dir(args: argparse.Namespace, fcfg: PoolFieldConfig) -> Path:
    return Path(args.state_dir) if args.state_dir else fcfg.state_dir


def _load_servers(args: argparse.Namespace) -> List[ServerRecord]:
    if args.servers:
        out = []
        for ln in Path(args.servers).read_text(encoding="utf-8").splitlines():
            if ln.strip():
                out.append(ServerRecord.from_record(json.loads(ln)))
        return out
    return list(PoolStore.read(args.state_dir).servers.values())


def _weak_key(spec: str) -> MatchKey:
    flags = [s for s in spec.split(",") if s.strip()]
    extra = {f.strip().lower() for f in flags} - {"poll", "ttl", "dscp"}
    if extra:
        raise InputValidationError(f"--weak accepts poll,ttl,dscp; got {sorted(extra)}", code="invalid_weak_fields")
    return MatchKey.from_flags(flags)


# -------------------------
# subcommands
# -------------------------
def cmd_scrape(args) -> int:
    cfg = _model_cfg(args)
    fcfg = _field_cfg(args)
    state_dir = _state_dir(args, fcfg)
    man = _manifest(args, {"poolmodel": cfg.raw, "poolfield": fcfg.raw}, [])
    zones = [z.strip() for z in (args.zones or "").split(",") if z.strip()]
    with _client(args, fcfg) as client, PoolStore(state_dir, snapshot_every=fcfg.snapshot_every) as store:
        deferred = not args.force and not store.checkpoint.poll_due(client.clock())
        found = list(
            enumerate_servers(
                client,
                store,
                args.start_id,
                gap_tolerance=fcfg.gap_tolerance,
                max_ids=args.max_ids,
                rng=random.Random(args.seed),
                force=args.force,
            )
        )
        for z in zones:
            store.record_zone_counts(client.fetch_zone_counts(z))
        outputs = []
        if args.with_history:
            rows = [r for rec in found for r in client.fetch_score_history(rec.server_id, rec.address)]
            scores = state_dir / "scores.csv"
            write_score_rows(scores, rows)
            outputs.append(scores)
        cp = store.checkpoint
        res = {
            "ok": True,
            "deferred": deferred,
            "fetched": len(found),
            "servers": len(store.servers),
            "next_id": cp.next_id,
            "high_water": cp.high_water,
            "next_poll_at": cp.next_poll_at,
            "zones": zones,
            "requests": client.requests_sent,
        }
    man.finish(outputs).write(state_dir)
    _emit(res)
    return EXIT_OK


def cmd_answers(args) -> int:
    cfg = _model_cfg(args)
    fcfg = _field_cfg(args)
    state_dir = _state_dir(args, fcfg)
    out = Path(args.out) if args.out else state_dir
    man = _manifest(args, {"poolmodel": cfg.raw, "poolfield": fcfg.raw}, [args.targets])
    with _client(args, fcfg) as client, PoolStore(state_dir, snapshot_every=fcfg.snapshot_every) as store:
        targets = read_targets(args.targets) if args.targets else [s.address for s in store.servers.values() if not s.deleted]
        deferred = not args.force and not store.checkpoint.answers_poll_due(client.clock())
        fresh = poll_answers(client, store, targets, force=args.force)
        samples = list(store.iter_answer_samples())
    rates = answer_rates(samples)
    rates["global_queries_per_s"] = global_query_rate(rates, answers_per_query=cfg.answers_per_query)
    _write_lines(
        out / "answers.jsonl",
        (
            canonical_json({"address": s.address, "zone": s.zone, "answer_count": s.answer_count, "fetched_at": s.fetched_at})
            for s in samples
        ),
    )
    _write_json(out / "answer_rates.json", rates)
    man.finish([out / "answers.jsonl", out / "answer_rates.json"]).write(out)
    _emit({"ok": True, "deferred": deferred, "targets": len(targets), "fetched": len(fresh), "samples": len(samples), **rates})
    return EXIT_OK


def cmd_fingerprint(args) -> int:
    cfg = _model_cfg(args)
    fcfg = _field_cfg(args)
    out = Path(args.out)
    man = _manifest(args, {"poolmodel": cfg.raw, "poolfield": fcfg.raw}, [args.targets, args.replay])
    kw = fcfg.probe_kwargs
    if args.probes is not None:
        kw["probes_per_target"] = args.probes
    if args.spacing is not None:
        kw["spacing_s"] = args.spacing
    if args.window is not None:
        kw["window_s"] = args.window
    plan = ProbePlan.for_targets(read_targets(args.targets), **kw)
    transport = ReplayTransport(read_fingerprints(args.replay)) if args.replay else None
    campaign = probe_many(plan, transport=transport)
    paths = [
        out / "fingerprints.jsonl",
        _write_lines(out / "unresponsive.txt", campaign.unresponsive),
        _write_json(out / "campaign.json", campaign.summary()),
        _write_json(out / "stratum1_sources.json", stratum1_sources(campaign.fingerprints)),
    ]
    write_fingerprints(paths[0], campaign.fingerprints)
    man.finish(paths).write(out)
    _emit({"ok": True, **campaign.summary()})
    return EXIT_OK


def cmd_dealias(args) -> int:
    cfg = _model_cfg(args)
    fcfg = _field_cfg(args)
    out = Path(args.out)
    man = _manifest(args, {"poolmodel": cfg.raw, "poolfield": fcfg.raw}, [args.fingerprints, args.accounts, args.prefixes])
    key = _weak_key(args.weak) if args.weak else fcfg.match_key
    window = args.window if args.window is not None else fcfg.probe_kwargs["window_s"]
    clusters = build_clusters(read_fingerprints(args.fingerprints), key=key, window_s=window)
    summary = alias_summary(clusters)
    write_clusters(out / "clusters.jsonl", clusters)
    paths = [out / "clusters.jsonl", _write_json(out / "alias_summary.json", summary)]
    if args.accounts and args.prefixes:
        members = [m for c in clusters for m in c.members]
        consistency = cluster_consistency(
            clusters,
            load_account_map(args.accounts),
            asn_map(load_prefix_table(args.prefixes), members),
        )
        paths.append(_write_json(out / "consistency.json", {"kind": "cluster_consistency", **consistency}))
    man.finish(paths).write(out)
    _emit({"ok": True, **summary})
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _model_cfg(args)
    out = Path(args.out)
    scores_path = args.scores
    if not scores_path and args.state_dir and (Path(args.state_dir) / "scores.csv").exists():
        scores_path = str(Path(args.state_dir) / "scores.csv")
    man = _manifest(
        args,
        cfg.raw,
        [args.state_dir, args.servers, args.clusters, args.accounts, args.prefixes, args.as_types, scores_path, args.names],
    )
    thr = cfg.activity_threshold
    servers = sorted(_load_servers(args), key=lambda s: s.server_id)
    active = [s for s in servers if s.is_active(thr)]
    active_addrs = [s.address for s in active]

    accounts: Dict[str, Optional[str]] = {s.address: s.account for s in servers}
    if args.accounts:
        accounts.update(load_account_map(args.accounts))
    asns: Dict[str, Optional[int]] = {}
    if args.prefixes:
        asns = asn_map(load_prefix_table(args.prefixes), [s.address for s in servers])
    clusters = restrict_clusters(read_clusters(args.clusters), active_addrs) if args.clusters else []

    fr = funnel(active_addrs, clusters, accounts, asns)
    paths = [_write_json(out / "funnel.json", fr.to_record()), _write_csv(out / "funnel.csv", ("stage", "count", "removed"), fr.stage_rows())]

    all_addrs = [s.address for s in servers]
    iid = iid_report(all_addrs, active_addrs, privacy_min_bits=cfg.privacy_min_bits)
    active_set = set(active_addrs)
    iid_rows = [
        {"address": a, "class": c, "active": a in active_set, "mac": embedded_mac(a) or ""}
        for a, c in iid["classes"].items()
    ]
    paths += [
        _write_json(out / "iid_report.json", {k: v for k, v in iid.items() if k != "classes"}),
        _write_csv(out / "iid.csv", ("address", "class", "active", "mac"), iid_rows),
    ]

    conc = account_concentration(active)
    anycast = anycast_candidates(servers)
    paths += [
        _write_json(out / "concentration.json", conc),
        _write_csv(out / "concentration.csv", ("account", "servers", "share"), conc["top"]),
        _write_json(out / "monitor_only.json", monitor_only(servers)),
        _write_csv(
            out / "netspeed.csv",
            ("label", "active_servers", "active_kbps", "inactive_servers", "inactive_kbps"),
            netspeed_distribution(servers, threshold=thr),
        ),
        _write_lines(out / "anycast.txt", anycast),
        _write_lines(out / "tunnel_broker.txt", tunnel_broker_servers(all_addrs)),
    ]
    if args.prefixes:
        dist = asn_distribution(active_addrs, asns)
        paths.append(_write_json(out / "asn.json", dist))
        if args.as_types:
            breakdown = {"kind": "as_type_breakdown", "types": as_type_breakdown(dist["by_asn"], load_as_types(args.as_types))}
            paths.append(_write_json(out / "as_types.json", breakdown))
    if args.names:
        paths.append(_write_json(out / "same_owner.json", possible_same_owner(load_account_names(args.names))))

    life = None
    if scores_path:
        series = series_from_rows(read_score_rows(scores_path))
        rows = [
            {
                "server_id": sid,
                "first_ts": s.first_ts,
                "last_ts": s.last_ts,
                "lifetime_days": lifetime(s) / 86400.0,
                "availability": availability(s, thr),
            }
            for sid, s in series.items()
        ]
        life = cohort_summary(series.values(), threshold=thr, short_days=cfg.short_days)
        paths += [
            _write_csv(out / "lifetimes.csv", ("server_id", "first_ts", "last_ts", "lifetime_days", "availability"), rows),
            _write_json(out / "lifetime_summary.json", life),
        ]

    man.finish(paths).write(out)
    _emit(
        {
            "ok": True,
            "servers": len(servers),
            "active": len(active),
            "funnel": fr.to_record(),
            "iid_v6_addresses": iid["all"]["total"],
            "anycast_candidates": len(anycast),
            "lifetime": life,
        }
    )
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _model_cfg(args)
    out = Path(args.out)
    m = int(args.m) if args.m is not None else cfg.m_kbps
    f = Fraction(str(args.f)) if args.f is not None else cfg.f
    man = _manifest(args, cfg.raw, [args.zones, args.counts, args.state_dir, args.rates])
    paths: List[Path] = []
    if args.zones:
        zones = load_zone_csv(args.zones)
        sweep = robustness_sweep(zones, m, f, percentiles=cfg.percentiles)
        share_rows = [
            {"zone": z.zone, "address": addr, "share": float(share)}
            for z in zones
            for addr, share in expected_shares(z).items()
        ]
        paths.append(_write_csv(out / "shares.csv", ("zone", "address", "share"), share_rows))
    elif args.counts:
        sweep = sweep_aggregates(load_zone_aggregates(args.counts), m, f, percentiles=cfg.percentiles)
    else:
        counts = PoolStore.read(args.state_dir).zone_counts()
        sweep = sweep_aggregates({z.zone: z.aggregate_netspeed for z in counts}, m, f, percentiles=cfg.percentiles)

    records = [p.to_record() for p in sweep.plans]
    summary = sweep.summary()
    if args.rates:
        rates = json.loads(Path(args.rates).read_text(encoding="utf-8"))
        summary["global_queries_per_s"] = global_query_rate(rates, answers_per_query=cfg.answers_per_query)
    paths += [
        _write_csv(out / "plans.csv", ("zone", "n_kbps", "m_kbps", "f", "S", "achieved"), records),
        _write_lines(out / "plans.jsonl", (canonical_json(r) for r in records)),
        _write_json(out / "plan_summary.json", summary),
    ]
    man.finish(paths).write(out)
    _emit({"ok": True, **summary})
    return EXIT_OK


def _scenario(args, cfg: PoolModelConfig) -> SimConfig:
    base = load_scenario(args.scenario)
    defaults = cfg.sim_defaults
    raw = {k: v for k, v in defaults.items() if k != "monitor"}
    raw.update(base.raw)
    raw["monitor"] = {**defaults["monitor"], **(base.raw.get("monitor") or {})}
    sim = SimConfig.from_mapping(raw)
    return sim.with_seed(args.seed) if args.seed is not None else sim


def cmd_simulate(args) -> int:
    cfg = _model_cfg(args)
    out = Path(args.out)
    sim = _scenario(args, cfg)
    man = _manifest(args, sim.raw, [args.scenario], seed=sim.seed)
    report = run_simulation(sim)
    paths = list(report.write(out).values())
    man.finish(paths).write(out)
    summary = report.summary()
    _emit(
        {
            "ok": True,
            "scenario": summary["scenario"],
            "seed": summary["seed"],
            "config_digest": summary["config_digest"],
            "dns_queries": summary["dns_queries"],
            "ntp_queries": summary["ntp_queries"],
            "windows": summary["windows"],
            "report_sha256": report.digest(),
        }
    )
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _model_cfg(args)
    out = Path(args.out)
    man = _manifest(args, cfg.raw, [args.input])
    paths = render(args.input, out)
    man.finish(paths).write(out)
    _emit({"ok": True, "tables": [p.name for p in paths]})
    return EXIT_OK


# -------------------------
# parser
# -------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poolaudit", description="NTP pool robustness toolkit")
    p.add_argument("--config", default=str(default_config_path()), help="poolmodel YAML config")
    p.add_argument("--field-config", default=str(default_field_config_path()), help="poolfield YAML config")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("scrape", help="Enumerate server IDs into the state directory")
    s.add_argument("--base-url", default=None)
    s.add_argument("--state-dir", default=None)
    s.add_argument("--start-id", type=int, default=None)
    s.add_argument("--mean-interval", type=float, default=None, help="mean seconds between requests")
    s.add_argument("--max-ids", type=int, default=None)
    s.add_argument("--zones", default="", help="comma-separated zone codes to fetch counts for")
    s.add_argument("--with-history", action="store_true", help="also fetch score histories into scores.csv")
    s.add_argument("--seed", type=int, default=None, help="seed for the poll-interval jitter")
    s.add_argument("--force", action="store_true", help="scrape even if the next-ID poll is not yet due")
    s.set_defaults(func=cmd_scrape)

    s = sub.add_parser("answers", help="Sample cumulative DNS answer counts")
    s.add_argument("--base-url", default=None)
    s.add_argument("--state-dir", default=None)
    s.add_argument("--mean-interval", type=float, default=None)
    s.add_argument("--targets", default=None, help="address list; default every known server")
    s.add_argument("--out", default=None, help="default: the state directory")
    s.add_argument("--force", action="store_true", help="poll even if the answers interval has not elapsed")
    s.set_defaults(func=cmd_answers)

    s = sub.add_parser("fingerprint", help="Probe targets and record NTP fingerprints")
    s.add_argument("--targets", required=True)
    s.add_argument("--replay", default=None, help="answer from recorded fingerprints instead of the network")
    s.add_argument("--probes", type=int, default=None)
    s.add_argument("--spacing", type=float, default=None)
    s.add_argument("--window", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fingerprint)

    s = sub.add_parser("dealias", help="Cluster fingerprints into alias sets")
    s.add_argument("--fingerprints", required=True)
    s.add_argument("--accounts", default=None)
    s.add_argument("--prefixes", default=None)
    s.add_argument("--weak", default=None, help="extra match fields: poll,ttl,dscp")
    s.add_argument("--window", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dealias)

    s = sub.add_parser("analyze", help="Independence funnel, IIDs, lifetimes, anycast")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--state-dir", default=None)
    src.add_argument("--servers", default=None, help="server records, one JSON object per line")
    s.add_argument("--clusters", default=None)
    s.add_argument("--accounts", default=None)
    s.add_argument("--prefixes", default=None)
    s.add_argument("--as-types", default=None)
    s.add_argument("--names", default=None, help="account display names")
    s.add_argument("--scores", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("plan", help="Attack sizes per zone and their distribution")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--zones", default=None, help="zone,address,netspeed_kbps[,active] rows")
    src.add_argument("--counts", default=None, help="zone,aggregate_netspeed rows")
    src.add_argument("--state-dir", default=None)
    s.add_argument("--f", default=None, help="target share, e.g. 0.5 or 1/2")
    s.add_argument("--m", type=int, default=None, help="attacker netspeed per server, kbps")
    s.add_argument("--rates", default=None, help="answer_rates.json for the global query rate")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("simulate", help="Run a pool simulation scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("report", help="Render plot-ready CSV tables from a prior output")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)

    return p


def _fail(code: str, message: str, exit_code: int) -> int:
    err = {"ok": False, "run_id": get_run_id(), "error": {"code": code, "message": message, "exit": exit_code}}
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return exit_code


def main(argv=None) -> int:
    p = build_parser()
    args = p.parse_args(argv)
    configure_logging(args.log_level)
    with run_context():
        try:
            return int(args.func(args) or EXIT_OK)
        except NetworkError as e:
            log.error("cli.network_error cmd=%s error=%s", args.cmd, e)
            return _fail(e.code, str(e), EXIT_NETWORK)
        except PoolwatchError as e:
            if isinstance(e, (InputValidationError, StateLockedError)):
                return _fail(e.code, str(e), EXIT_INPUT)
            log.exception("cli.failed cmd=%s", args.cmd)
            return _fail(e.code, str(e), EXIT_INTERNAL)
        except FileNotFoundError as e:
            return _fail("missing_input", f"missing_input: {e.filename}", EXIT_INPUT)
        except ValueError as e:
            return _fail("invalid_input", str(e), EXIT_INPUT)
        except Exception as e:  # noqa: BLE001
            log.exception("cli.failed cmd=%s", args.cmd)
            return _fail("internal_error", f"{type(e).__name__}: {e}", EXIT_INTERNAL)


if __name__ == "__main__":
    raise SystemExit(main())
