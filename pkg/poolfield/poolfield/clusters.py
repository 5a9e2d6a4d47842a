"""NTP alias clustering.

Addresses whose fingerprints match (see `fingerprints_match`) are joined with a
union-find; the closure of that relation partitions the responsive addresses.
"""
from __future__ import annotations

import ipaddress
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import netaddr

from .errors import InputValidationError, MixedFamilyError
from .fingerprint import (
    DEFAULT_MATCH_KEY,
    DEFAULT_WINDOW_S,
    Fingerprint,
    MatchKey,
    address_sort_key,
    canonical_address,
)
from .hashutil import canonical_json, sha256_str
from .unionfind import UnionFind

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AliasCluster:
    cluster_id: str
    members: Tuple[str, ...]
    contains_stratum1: bool
    covering_prefix_v4: Optional[str]
    covering_prefix_v6: Optional[str]
    mixed_family: bool

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def is_alias_set(self) -> bool:
        """Counts toward alias tallies: two or more members, no stratum-1 member."""
        return self.size >= 2 and not self.contains_stratum1

    def to_record(self) -> Dict[str, Any]:
        return {
            "cluster_id": self.cluster_id,
            "members": list(self.members),
            "contains_stratum1": self.contains_stratum1,
            "covering_prefix_v4": self.covering_prefix_v4,
            "covering_prefix_v6": self.covering_prefix_v6,
            "mixed_family": self.mixed_family,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "AliasCluster":
        try:
            members = tuple(canonical_address(m) for m in rec["members"])
            return cls(
                cluster_id=str(rec["cluster_id"]),
                members=members,
                contains_stratum1=bool(rec["contains_stratum1"]),
                covering_prefix_v4=rec.get("covering_prefix_v4"),
                covering_prefix_v6=rec.get("covering_prefix_v6"),
                mixed_family=bool(rec.get("mixed_family", False)),
            )
        except KeyError as e:
            raise InputValidationError(f"cluster record missing {e}", code="invalid_cluster_record") from e


def covering_prefix(members: Iterable[str]) -> netaddr.IPNetwork:
    """Most specific single prefix containing every member (one family only)."""
    addrs = sorted({canonical_address(m) for m in members}, key=address_sort_key)
    if not addrs:
        raise InputValidationError("covering_prefix needs at least one address", code="empty_members")
    families = {ipaddress.ip_address(a).version for a in addrs}
    if len(families) > 1:
        raise MixedFamilyError(f"members span IPv4 and IPv6: {addrs[0]} .. {addrs[-1]}")
    if len(addrs) == 1:
        ip = netaddr.IPAddress(addrs[0])
        return netaddr.IPNetwork(f"{ip}/{32 if ip.version == 4 else 128}")
    return netaddr.spanning_cidr(addrs)


def _cluster_id(members: Sequence[str]) -> str:
    return "ac-" + sha256_str(canonical_json(list(members)))[:16]


def _make_cluster(members: List[str], stratum1: bool) -> AliasCluster:
    members = sorted(members, key=address_sort_key)
    v4 = [m for m in members if ipaddress.ip_address(m).version == 4]
    v6 = [m for m in members if ipaddress.ip_address(m).version == 6]
    return AliasCluster(
        cluster_id=_cluster_id(members),
        members=tuple(members),
        contains_stratum1=stratum1,
        covering_prefix_v4=str(covering_prefix(v4)) if v4 else None,
        covering_prefix_v6=str(covering_prefix(v6)) if v6 else None,
        mixed_family=bool(v4 and v6),
    )


def build_clusters(
    fps: Iterable[Fingerprint],
    key: MatchKey = DEFAULT_MATCH_KEY,
    window_s: float = DEFAULT_WINDOW_S,
) -> List[AliasCluster]:
    """Partition responsive addresses into alias clusters.

    Fingerprints are bucketed by their match tuple; inside a bucket, responses
    sorted by collection time are joined whenever consecutive ones lie within
    the window. That yields the same components as testing every pair.
    """
    fps = list(fps)
    uf: UnionFind[str] = UnionFind()
    stratum1: Dict[str, bool] = defaultdict(bool)
    buckets: Dict[Tuple[Any, ...], List[Fingerprint]] = defaultdict(list)

    for fp in fps:
        uf.add(fp.address)
        if fp.stratum == 1:
            stratum1[fp.address] = True
        buckets[key.tuple_for(fp)].append(fp)

    for bucket in buckets.values():
        if len(bucket) < 2:
            continue
        bucket.sort(key=lambda f: (f.collected_at, address_sort_key(f.address)))
        for prev, cur in zip(bucket, bucket[1:]):
            if cur.collected_at - prev.collected_at <= window_s:
                uf.union(prev.address, cur.address)

    clusters = [_make_cluster(g, any(stratum1[a] for a in g)) for g in uf.groups()]
    clusters.sort(key=lambda c: address_sort_key(c.members[0]))
    log.info(
        "clusters.built addresses=%d clusters=%d stratum1_clusters=%d",
        len(uf),
        len(clusters),
        sum(1 for c in clusters if c.contains_stratum1),
    )
    return clusters


def write_clusters(path: str | Path, clusters: Iterable[AliasCluster]) -> int:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with p.open("w", encoding="utf-8", newline="\n") as f:
        for c in clusters:
            f.write(canonical_json(c.to_record()) + "\n")
            n += 1
    return n


def read_clusters(path: str | Path) -> List[AliasCluster]:
    out: List[AliasCluster] = []
    for ln in Path(path).read_text(encoding="utf-8").splitlines():
        if ln.strip():
            out.append(AliasCluster.from_record(json.loads(ln)))
    return out


def _prefix_len(prefix: Optional[str]) -> Optional[int]:
    if not prefix:
        return None
    return int(prefix.rsplit("/", 1)[1])


def alias_summary(clusters: Sequence[AliasCluster]) -> Dict[str, Any]:
    counted = [c for c in clusters if not c.contains_stratum1]
    s1 = [c for c in clusters if c.contains_stratum1]
    alias_sets = [c for c in counted if c.size >= 2]
    sizes = Counter(c.size for c in counted)
    v4_lens = Counter(_prefix_len(c.covering_prefix_v4) for c in alias_sets if c.covering_prefix_v4 and not c.mixed_family)
    v6_lens = Counter(_prefix_len(c.covering_prefix_v6) for c in alias_sets if c.covering_prefix_v6 and not c.mixed_family)
    return {
        "kind": "alias_summary",
        "clusters": len(counted),
        "addresses": sum(c.size for c in counted),
        "singletons": sizes.get(1, 0),
        "alias_clusters": len(alias_sets),
        "aliased_addresses": sum(c.size for c in alias_sets),
        "mixed_family_clusters": sum(1 for c in alias_sets if c.mixed_family),
        "largest_cluster": max((c.size for c in counted), default=0),
        "stratum1_clusters": len(s1),
        "stratum1_addresses": sum(c.size for c in s1),
        "size_histogram": {str(k): v for k, v in sorted(sizes.items())},
        "prefix_len_histogram_v4": {str(k): v for k, v in sorted(v4_lens.items())},
        "prefix_len_histogram_v6": {str(k): v for k, v in sorted(v6_lens.items())},
    }


CONSISTENCY_CATEGORIES = ("consistent", "account_only", "asn_only", "inconsistent", "undeterminable")


def _agreement(members: Sequence[str], mapping: Mapping[str, Any]) -> Optional[bool]:
    values = [mapping.get(m) for m in members]
    if any(v is None or v == "" for v in values):
        return None
    return len(set(values)) == 1


def cluster_consistency(
    clusters: Iterable[AliasCluster],
    account_map: Mapping[str, Optional[str]],
    asn_map: Mapping[str, Optional[int]],
) -> Dict[str, int]:
    """Tally account/ASN agreement inside alias clusters of size >= 2.

    A cluster is undeterminable when any member lacks an account or an ASN.
    Clusters flagged with a stratum-1 member are skipped, like every alias tally.
    """
    tally = {c: 0 for c in CONSISTENCY_CATEGORIES}
    for c in clusters:
        if not c.is_alias_set:
            continue
        acct = _agreement(c.members, account_map)
        asn = _agreement(c.members, asn_map)
        if acct is None or asn is None:
            tally["undeterminable"] += 1
        elif acct and asn:
            tally["consistent"] += 1
        elif acct:
            tally["account_only"] += 1
        elif asn:
            tally["asn_only"] += 1
        else:
            tally["inconsistent"] += 1
    return tally
