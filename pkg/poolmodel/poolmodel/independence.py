"""Independence funnel and ownership/topology breakdowns.

The funnel counts how many truly separate operators stand behind the active
servers, in three collapsing stages:

    dealias   one entity per alias cluster (stratum-1 clusters stay split)
    account   entities sharing a known account become one
    asn       account groups whose representative sits in the same ASN become one

Missing accounts and unrouted addresses never merge with anything, so the
reported independence is an upper bound on the real one.
"""
from __future__ import annotations

import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from poolfield.clusters import AliasCluster
from poolfield.errors import FunnelInputError, InputValidationError
from poolfield.fingerprint import address_sort_key, canonical_address
from poolfield.pool_client import ServerRecord
from poolfield.unionfind import UnionFind

from .prefixes import in_tunnel_broker

log = logging.getLogger(__name__)

CONTINENT_ZONES = frozenset({"africa", "asia", "europe", "north-america", "oceania", "south-america"})

ServerLike = Union[str, ServerRecord]


@dataclass(frozen=True)
class FunnelReport:
    total_active: int
    after_dealias: int
    after_account: int
    after_asn: int
    mixed_asn_clusters: int = 0
    stage_members: Dict[str, List[List[str]]] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.total_active >= self.after_dealias >= self.after_account >= self.after_asn >= 0:
            raise FunnelInputError(
                f"non-monotone counts {self.total_active}/{self.after_dealias}/{self.after_account}/{self.after_asn}"
            )

    @property
    def independent_fraction(self) -> float:
        return self.after_asn / self.total_active if self.total_active else 0.0

    def to_record(self) -> Dict[str, Any]:
        return {
            "kind": "funnel",
            "total_active": self.total_active,
            "after_dealias": self.after_dealias,
            "after_account": self.after_account,
            "after_asn": self.after_asn,
            "independent_fraction": self.independent_fraction,
            "mixed_asn_clusters": self.mixed_asn_clusters,
        }

    def stage_rows(self) -> List[Dict[str, Any]]:
        rows = []
        prev = self.total_active
        for stage, count in (
            ("active", self.total_active),
            ("dealias", self.after_dealias),
            ("account", self.after_account),
            ("asn", self.after_asn),
        ):
            rows.append({"stage": stage, "count": count, "removed": prev - count})
            prev = count
        return rows


def _address(s: ServerLike) -> str:
    return canonical_address(s.address if isinstance(s, ServerRecord) else s)


def _min_addr(addrs: Iterable[str]) -> str:
    return min(addrs, key=address_sort_key)


def _group_by_key(reps: Sequence[str], key_of: Mapping[str, Optional[Hashable]]) -> List[List[str]]:
    """Group representatives by key; a None key keeps its holder alone."""
    groups: Dict[Hashable, List[str]] = defaultdict(list)
    for rep in reps:
        k = key_of.get(rep)
        groups[("key", k) if k is not None else ("alone", rep)].append(rep)
    return sorted((sorted(g, key=address_sort_key) for g in groups.values()), key=lambda g: address_sort_key(g[0]))


def restrict_clusters(clusters: Iterable[AliasCluster], addresses: Iterable[str]) -> List[AliasCluster]:
    """Drop cluster members outside `addresses` (e.g. servers no longer active)."""
    keep = {canonical_address(a) for a in addresses}
    out = []
    for c in clusters:
        members = tuple(m for m in c.members if m in keep)
        if members:
            out.append(
                AliasCluster(
                    cluster_id=c.cluster_id,
                    members=members,
                    contains_stratum1=c.contains_stratum1,
                    covering_prefix_v4=c.covering_prefix_v4,
                    covering_prefix_v6=c.covering_prefix_v6,
                    mixed_family=c.mixed_family,
                )
            )
    return out


def funnel(
    active_servers: Iterable[ServerLike],
    clusters: Iterable[AliasCluster],
    account_map: Mapping[str, Optional[str]],
    asn_map: Mapping[str, Optional[int]],
) -> FunnelReport:
    addresses = sorted({_address(s) for s in active_servers}, key=address_sort_key)
    known = set(addresses)

    uf: UnionFind[str] = UnionFind(addresses)
    mixed_asn = 0
    for c in clusters:
        stray = [m for m in c.members if m not in known]
        if stray:
            raise FunnelInputError(f"cluster {c.cluster_id} member {stray[0]} is not an active server")
        if c.contains_stratum1 or c.size < 2:
            continue
        for m in c.members[1:]:
            uf.union(c.members[0], m)
        if len({asn_map.get(m) for m in c.members}) > 1:
            mixed_asn += 1

    entities = {_min_addr(g): g for g in uf.groups()}
    entity_reps = sorted(entities, key=address_sort_key)

    entity_account: Dict[str, Optional[str]] = {}
    for rep, members in entities.items():
        acct = account_map.get(rep) or None
        if acct is None:
            known_accts = sorted(str(a) for a in (account_map.get(m) for m in members) if a)
            acct = known_accts[0] if known_accts else None
        entity_account[rep] = acct

    by_account = _group_by_key(entity_reps, entity_account)
    account_reps = [g[0] for g in by_account]
    by_asn = _group_by_key(account_reps, {r: asn_map.get(r) for r in account_reps})

    report = FunnelReport(
        total_active=len(addresses),
        after_dealias=len(entity_reps),
        after_account=len(by_account),
        after_asn=len(by_asn),
        mixed_asn_clusters=mixed_asn,
        stage_members={"account": by_account, "asn": by_asn},
    )
    log.info(
        "funnel.done active=%d dealias=%d account=%d asn=%d",
        report.total_active,
        report.after_dealias,
        report.after_account,
        report.after_asn,
    )
    return report


# -------------------------
# concentration
# -------------------------
def account_concentration(servers: Iterable[ServerRecord], *, top_k: int = 10) -> Dict[str, Any]:
    items = list(servers)
    per_account = Counter(s.account for s in items if s.account)
    with_account = sum(per_account.values())
    top = per_account.most_common(top_k)
    return {
        "kind": "account_concentration",
        "servers": len(items),
        "with_account": with_account,
        "visible_fraction": with_account / len(items) if items else 0.0,
        "accounts": len(per_account),
        "top": [{"account": a, "servers": n, "share": n / len(items)} for a, n in top],
        "top_k_share": sum(n for _, n in top) / len(items) if items else 0.0,
    }


def asn_distribution(addresses: Iterable[str], asns: Mapping[str, Optional[int]]) -> Dict[str, Any]:
    counts: Counter[int] = Counter()
    unrouted = 0
    total = 0
    for a in addresses:
        total += 1
        asn = asns.get(canonical_address(a))
        if asn is None:
            unrouted += 1
        else:
            counts[int(asn)] += 1
    return {
        "kind": "asn_distribution",
        "addresses": total,
        "unrouted": unrouted,
        "asns": len(counts),
        "by_asn": [{"asn": asn, "servers": n} for asn, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))],
    }


def as_type_breakdown(by_asn: Iterable[Mapping[str, Any]], as_types: Mapping[int, str]) -> Dict[str, int]:
    out: Counter[str] = Counter()
    for row in by_asn:
        out[as_types.get(int(row["asn"]), "unknown")] += int(row["servers"])
    return dict(sorted(out.items()))


def _pairs_file(path: str | Path) -> Iterable[Tuple[int, str, str]]:
    for lineno, ln in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        s = ln.split("#", 1)[0].strip()
        if not s:
            continue
        parts = s.split(None, 1)
        if len(parts) != 2:
            raise InputValidationError(f"{Path(path).name}:{lineno}: expected two fields", code="invalid_mapping")
        yield lineno, parts[0], parts[1].strip()


def load_as_types(path: str | Path) -> Dict[int, str]:
    """`ASN type` per line; the leading `AS` on the number is optional."""
    out: Dict[int, str] = {}
    for lineno, asn, kind in _pairs_file(path):
        try:
            out[int(asn.upper().removeprefix("AS"))] = kind
        except ValueError as e:
            raise InputValidationError(f"{Path(path).name}:{lineno}: bad ASN {asn!r}", code="invalid_mapping") from e
    return out


def load_account_map(path: str | Path) -> Dict[str, str]:
    """`address account_id` per line."""
    return {canonical_address(addr): acct for _, addr, acct in _pairs_file(path)}


# -------------------------
# per-server flags
# -------------------------
def monitor_only(servers: Iterable[ServerRecord]) -> Dict[str, Any]:
    items = list(servers)
    mon = [s for s in items if s.monitor_only]
    return {
        "kind": "monitor_only",
        "servers": len(items),
        "monitor_only": len(mon),
        "v4": sum(1 for s in mon if s.family == "v4"),
        "v6": sum(1 for s in mon if s.family == "v6"),
        "fraction": len(mon) / len(items) if items else 0.0,
    }


def _zones_of(s: Union[ServerRecord, Tuple[str, Iterable[str]]]) -> Tuple[str, Iterable[str]]:
    if isinstance(s, ServerRecord):
        return s.address, s.zones
    return s[0], s[1]


def anycast_candidates(servers: Iterable[Union[ServerRecord, Tuple[str, Iterable[str]]]]) -> List[str]:
    """Addresses registered in two or more continent zones."""
    out = []
    for s in servers:
        address, zones = _zones_of(s)
        if len(CONTINENT_ZONES.intersection(zones)) >= 2:
            out.append(canonical_address(address))
    return sorted(set(out), key=address_sort_key)


def tunnel_broker_servers(addresses: Iterable[str]) -> List[str]:
    return sorted(
        {canonical_address(a) for a in addresses if in_tunnel_broker(a)},
        key=address_sort_key,
    )


_WORD = re.compile(r"[a-z0-9]+")


def _words(name: str) -> List[str]:
    return _WORD.findall(name.lower())


def _abbreviates(short: List[str], long: List[str]) -> bool:
    if not short or len(short) >= len(long):
        return False
    if len(short) == 1 and len(short[0]) >= 2 and short[0] == "".join(w[0] for w in long):
        return True
    return long[: len(short)] == short and len("".join(short)) >= 3


def possible_same_owner(names: Mapping[str, str]) -> List[Dict[str, str]]:
    """Account pairs whose display names look like full and abbreviated forms.

    Annotation only; the funnel never merges on it.
    """
    words = {acct: _words(n) for acct, n in names.items()}
    out = []
    accts = sorted(words)
    for i, a in enumerate(accts):
        for b in accts[i + 1 :]:
            wa, wb = words[a], words[b]
            if wa and wa == wb or _abbreviates(wa, wb) or _abbreviates(wb, wa):
                out.append({"account_a": a, "account_b": b, "name_a": names[a], "name_b": names[b]})
    return out


def load_account_names(path: str | Path) -> Dict[str, str]:
    """`account_id display name...` per line."""
    return {acct: name for _, acct, name in _pairs_file(path)}
