"""Plot-ready tables from any record a subcommand wrote.

Records are dispatched on their `kind`; each renderer returns one or more
named tables that land as CSV files in the output directory.
"""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Sequence, Tuple

from poolfield.errors import InputValidationError

log = logging.getLogger(__name__)

Table = Tuple[str, Sequence[str], List[Dict[str, Any]]]


def _plan_summary(rec: Mapping[str, Any]) -> List[Table]:
    pct = [{"percentile": k, "S": v} for k, v in sorted(rec["percentiles"].items())]
    return [
        ("plan_cdf", ("S", "fraction"), list(rec["cdf"])),
        ("plan_percentiles", ("percentile", "S"), pct),
    ]


def _attack_plans(recs: Sequence[Mapping[str, Any]]) -> List[Table]:
    cols = ("zone", "n_kbps", "m_kbps", "f", "S", "achieved")
    return [("plans", cols, [{k: r[k] for k in cols} for r in recs])]


def _sim_summary(rec: Mapping[str, Any]) -> List[Table]:
    return [
        ("sim_windows", ("window", "dns_queries", "attacker_share", "attacker_inclusion_share"), list(rec["windows"])),
        ("sim_residual", ("day", "queries", "daemon_stopped"), list(rec["residual"])),
        ("sim_servers", ("address", "attacker", "score", "eligible", "ntp_queries"), list(rec["servers"])),
    ]


def _funnel(rec: Mapping[str, Any]) -> List[Table]:
    stages = [
        ("active", rec["total_active"]),
        ("dealias", rec["after_dealias"]),
        ("account", rec["after_account"]),
        ("asn", rec["after_asn"]),
    ]
    total = rec["total_active"] or 1
    return [("funnel", ("stage", "count", "fraction"), [{"stage": s, "count": n, "fraction": n / total} for s, n in stages])]


def _alias_summary(rec: Mapping[str, Any]) -> List[Table]:
    def hist(key: str, label: str) -> List[Dict[str, Any]]:
        return [{label: int(k), "clusters": v} for k, v in rec[key].items()]

    return [
        ("cluster_sizes", ("size", "clusters"), hist("size_histogram", "size")),
        ("prefix_len_v4", ("prefix_len", "clusters"), hist("prefix_len_histogram_v4", "prefix_len")),
        ("prefix_len_v6", ("prefix_len", "clusters"), hist("prefix_len_histogram_v6", "prefix_len")),
    ]


def _iid_report(rec: Mapping[str, Any]) -> List[Table]:
    rows = []
    for cls_name in rec["all"]["counts"]:
        rows.append(
            {
                "class": cls_name,
                "all": rec["all"]["counts"][cls_name],
                "all_pct": rec["all"]["percent"][cls_name],
                "active": rec["active"]["counts"].get(cls_name, 0),
                "active_pct": rec["active"]["percent"].get(cls_name, 0.0),
            }
        )
    return [("iid_classes", ("class", "all", "all_pct", "active", "active_pct"), rows)]


def _answer_rates(rec: Mapping[str, Any]) -> List[Table]:
    rows = [{"zone": z, "v4": d["v4"], "v6": d["v6"]} for z, d in rec["by_zone"].items()]
    rows.append({"zone": "total", "v4": rec["v4"], "v6": rec["v6"]})
    return [("answer_rates", ("zone", "v4", "v6"), rows)]


def _lifetime_summary(rec: Mapping[str, Any]) -> List[Table]:
    return [("lifetime_cdf", ("days", "fraction"), list(rec.get("cdf") or []))]


def _account_concentration(rec: Mapping[str, Any]) -> List[Table]:
    return [("accounts_top", ("account", "servers", "share"), list(rec["top"]))]


def _asn_distribution(rec: Mapping[str, Any]) -> List[Table]:
    return [("asn_servers", ("asn", "servers"), list(rec["by_asn"]))]


def _probe_campaign(rec: Mapping[str, Any]) -> List[Table]:
    cols = ("targets", "responsive", "unresponsive", "response_rate", "fingerprints")
    return [("probe_campaign", cols, [{k: rec[k] for k in cols}])]


def _run_manifest(rec: Mapping[str, Any]) -> List[Table]:
    rows = [{"role": "input", **d} for d in rec.get("inputs") or []]
    rows += [{"role": "output", **d} for d in rec.get("outputs") or []]
    return [("manifest_files", ("role", "path", "sha256"), rows)]


RENDERERS: Dict[str, Callable[[Mapping[str, Any]], List[Table]]] = {
    "plan_summary": _plan_summary,
    "sim_summary": _sim_summary,
    "funnel": _funnel,
    "alias_summary": _alias_summary,
    "iid_report": _iid_report,
    "answer_rates": _answer_rates,
    "lifetime_summary": _lifetime_summary,
    "account_concentration": _account_concentration,
    "asn_distribution": _asn_distribution,
    "probe_campaign": _probe_campaign,
    "run_manifest": _run_manifest,
}


def load_records(path: str | Path) -> List[Dict[str, Any]]:
    """A JSON object, a JSON array of objects, or one object per line."""
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        try:
            return [json.loads(ln) for ln in text.splitlines() if ln.strip()]
        except json.JSONDecodeError as e:
            raise InputValidationError(f"{p.name}: not JSON or JSON lines ({e})", code="invalid_report_input") from e
    if isinstance(obj, dict):
        return [obj]
    if isinstance(obj, list) and all(isinstance(x, dict) for x in obj):
        return obj
    raise InputValidationError(f"{p.name}: expected object records", code="invalid_report_input")


def render_tables(records: Iterable[Mapping[str, Any]]) -> List[Table]:
    recs = list(records)
    tables: List[Table] = []
    plans = [r for r in recs if r.get("kind") == "attack_plan"]
    if plans:
        tables.extend(_attack_plans(plans))
    for r in recs:
        kind = r.get("kind")
        if kind == "attack_plan":
            continue
        fn = RENDERERS.get(str(kind))
        if fn is None:
            raise InputValidationError(f"no renderer for record kind {kind!r}", code="unknown_record_kind")
        try:
            tables.extend(fn(r))
        except KeyError as e:
            raise InputValidationError(f"{kind} record missing {e}", code="invalid_report_input") from e
    return tables


def render(path: str | Path, out_dir: str | Path) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    for name, cols, rows in render_tables(load_records(path)):
        p = out / f"{name}.csv"
        with p.open("w", encoding="utf-8", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(cols), extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        written.append(p)
    log.info("report.rendered input=%s tables=%d", Path(path).name, len(written))
    return written
