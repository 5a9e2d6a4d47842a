"""Netspeed apportionment and the monopoly-attack planner.

Netspeeds are integer kbps. Every share and every attack-size computation is
done in exact rational arithmetic; floats appear only in rendered records.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Tuple, Union

from poolfield.errors import DomainError, InputValidationError, UndefinedShareError
from poolfield.pool_client import ServerRecord

log = logging.getLogger(__name__)

# Menu values as kbps, binary (as offered) and decimal (as reported by the
# zone-count API), position for position.
NETSPEED_MENU_KBPS = (0, 512, 1536, 3072, 6144, 12288, 25600, 51200, 102400, 256000, 512000, 1024000, 1536000, 2048000, 3072000)
NETSPEED_DECIMAL_KBPS = (0, 500, 1500, 3000, 6000, 12000, 25000, 50000, 100000, 250000, 500000, 1000000, 1500000, 2000000, 3000000)
NETSPEED_LABELS = (
    "monitor",
    "512kbps",
    "1.5Mbps",
    "3Mbps",
    "6Mbps",
    "12Mbps",
    "25Mbps",
    "50Mbps",
    "100Mbps",
    "250Mbps",
    "500Mbps",
    "1Gbps",
    "1.5Gbps",
    "2Gbps",
    "3Gbps",
)
VALID_NETSPEEDS = frozenset(NETSPEED_MENU_KBPS) | frozenset(NETSPEED_DECIMAL_KBPS)

M_MAX_KBPS = 3_000_000
DEFAULT_ANSWERS_PER_QUERY = 4

Rational = Union[int, float, str, Fraction]


def netspeed_label(kbps: int) -> str:
    for table in (NETSPEED_MENU_KBPS, NETSPEED_DECIMAL_KBPS):
        if kbps in table:
            return NETSPEED_LABELS[table.index(kbps)]
    return "other"


def parse_netspeed(label: str, *, decimal: bool = False) -> int:
    s = str(label).strip()
    if s.isdigit():
        return validate_netspeed(int(s))
    norm = s.replace(" ", "").lower()
    for i, lab in enumerate(NETSPEED_LABELS):
        if lab.lower() == norm:
            return (NETSPEED_DECIMAL_KBPS if decimal else NETSPEED_MENU_KBPS)[i]
    raise InputValidationError(f"unknown netspeed label {label!r}", code="invalid_netspeed")


def validate_netspeed(kbps: int) -> int:
    if int(kbps) not in VALID_NETSPEEDS:
        raise InputValidationError(f"netspeed {kbps} kbps is not a menu value", code="invalid_netspeed")
    return int(kbps)


@dataclass(frozen=True)
class ZoneServer:
    address: str
    netspeed: int
    active: bool = True

    def __post_init__(self) -> None:
        if self.netspeed < 0:
            raise InputValidationError(f"negative netspeed for {self.address}", code="invalid_netspeed")

    @property
    def contributes(self) -> bool:
        return self.active and self.netspeed > 0


@dataclass(frozen=True)
class ZoneState:
    zone: str
    servers: Tuple[ZoneServer, ...] = ()

    @property
    def aggregate(self) -> int:
        return sum(s.netspeed for s in self.servers if s.contributes)

    def eligible(self) -> List[ZoneServer]:
        return [s for s in self.servers if s.contributes]

    def scaled(self, k: int) -> "ZoneState":
        return ZoneState(self.zone, tuple(ZoneServer(s.address, s.netspeed * k, s.active) for s in self.servers))


def expected_share(speed: int, zone: ZoneState) -> Fraction:
    n = zone.aggregate
    if n <= 0:
        raise UndefinedShareError(f"zone {zone.zone!r} has no active netspeed")
    if speed <= 0:
        raise InputValidationError(f"share of a {speed} kbps server is not defined", code="undefined_share")
    return Fraction(int(speed), n)


def expected_shares(zone: ZoneState) -> Dict[str, Fraction]:
    """Share of every active, non-monitor server; empty when nothing is eligible."""
    n = zone.aggregate
    if n <= 0:
        return {}
    out: Dict[str, Fraction] = defaultdict(Fraction)
    for s in zone.eligible():
        out[s.address] += Fraction(s.netspeed, n)
    return dict(out)


# -------------------------
# attack planner
# -------------------------
def _as_fraction(x: Rational) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        # decimal literal as written, not its binary expansion
        return Fraction(repr(x))
    return Fraction(x)


def attack_servers_required(n: int, m: int, f: Rational) -> int:
    """Smallest S with S*m / (n + S*m) >= f.

    Evaluates ceil(n*f / (m*(1-f))) exactly. An empty zone (n = 0) still needs
    one server.
    """
    fr = _as_fraction(f)
    if not 0 < fr < 1:
        raise DomainError(f"target fraction must be in (0, 1), got {f}")
    if int(m) <= 0:
        raise DomainError(f"attacker netspeed must be positive, got {m}")
    if int(n) < 0:
        raise DomainError(f"zone aggregate must be >= 0, got {n}")
    s = math.ceil(Fraction(int(n)) * fr / (Fraction(int(m)) * (1 - fr)))
    return max(1, int(s))


def achieved_fraction(n: int, m: int, s: int) -> Fraction:
    total = int(n) + int(s) * int(m)
    if total == 0:
        return Fraction(0)
    return Fraction(int(s) * int(m), total)


@dataclass(frozen=True)
class AttackPlan:
    zone: str
    n: int
    m: int
    f: Fraction
    S: int
    achieved: Fraction

    @property
    def minimal(self) -> bool:
        return self.achieved >= self.f and achieved_fraction(self.n, self.m, self.S - 1) < self.f

    def to_record(self) -> Dict[str, Any]:
        return {
            "kind": "attack_plan",
            "zone": self.zone,
            "n_kbps": self.n,
            "m_kbps": self.m,
            "f": float(self.f),
            "S": self.S,
            "achieved": float(self.achieved),
        }


def plan_attack(zone: str, n: int, m: int = M_MAX_KBPS, f: Rational = Fraction(1, 2)) -> AttackPlan:
    fr = _as_fraction(f)
    s = attack_servers_required(n, m, fr)
    return AttackPlan(zone=zone, n=int(n), m=int(m), f=fr, S=s, achieved=achieved_fraction(n, m, s))


def plan_zone(zone: ZoneState, m: int = M_MAX_KBPS, f: Rational = Fraction(1, 2)) -> AttackPlan:
    return plan_attack(zone.zone, zone.aggregate, m, f)


# -------------------------
# sweeps
# -------------------------
def _nearest_rank(sorted_values: Sequence[int], pct: float) -> int:
    rank = max(1, math.ceil(pct / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass(frozen=True)
class SweepReport:
    plans: Tuple[AttackPlan, ...]
    percentiles: Tuple[float, ...] = (50.0, 90.0)

    def cdf(self) -> List[Tuple[int, float]]:
        counts = Counter(p.S for p in self.plans)
        total = len(self.plans)
        acc = 0
        out = []
        for s in sorted(counts):
            acc += counts[s]
            out.append((s, acc / total))
        return out

    def summary(self) -> Dict[str, Any]:
        values = sorted(p.S for p in self.plans)
        return {
            "kind": "plan_summary",
            "zones": len(values),
            "m_kbps": self.plans[0].m,
            "f": float(self.plans[0].f),
            "percentiles": {f"p{int(p) if float(p).is_integer() else p}": _nearest_rank(values, p) for p in self.percentiles},
            "single_server_fraction": sum(1 for v in values if v == 1) / len(values),
            "max_S": values[-1],
            "cdf": [{"S": s, "fraction": frac} for s, frac in self.cdf()],
        }


def sweep_aggregates(
    aggregates: Mapping[str, int],
    m: int = M_MAX_KBPS,
    f: Rational = Fraction(1, 2),
    *,
    percentiles: Sequence[float] = (50.0, 90.0),
) -> SweepReport:
    if not aggregates:
        raise InputValidationError("sweep needs at least one zone", code="empty_sweep")
    plans = tuple(plan_attack(z, n, m, f) for z, n in sorted(aggregates.items()))
    log.info("apportion.sweep zones=%d m=%d f=%s", len(plans), int(m), f)
    return SweepReport(plans=plans, percentiles=tuple(float(p) for p in percentiles))


def robustness_sweep(
    zones: Iterable[ZoneState],
    m: int = M_MAX_KBPS,
    f: Rational = Fraction(1, 2),
    *,
    percentiles: Sequence[float] = (50.0, 90.0),
) -> SweepReport:
    return sweep_aggregates({z.zone: z.aggregate for z in zones}, m, f, percentiles=percentiles)


def global_query_rate(
    answer_rates: Union[Mapping[str, Any], Iterable[float]],
    *,
    answers_per_query: int = DEFAULT_ANSWERS_PER_QUERY,
) -> float:
    """Queries per second implied by servers-per-second answer totals.

    Accepts the `answer_rates` record (its "v4" and "v6" totals) or a plain
    sequence of totals.
    """
    if isinstance(answer_rates, Mapping):
        totals = [answer_rates.get("v4", 0.0), answer_rates.get("v6", 0.0)]
    else:
        totals = list(answer_rates)
    if any(float(t) < 0 for t in totals):
        raise InputValidationError("answer rates must be >= 0", code="invalid_answer_rates")
    total = sum((Fraction(str(t)) for t in totals), Fraction(0))
    return float(total / answers_per_query)


# -------------------------
# inputs and tables
# -------------------------
_TRUE = {"1", "true", "yes", "y", "active"}
_FALSE = {"0", "false", "no", "n", "inactive", ""}


def _parse_bool(s: str, where: str) -> bool:
    v = str(s).strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise InputValidationError(f"{where}: expected a boolean, got {s!r}", code="invalid_zone_row")


def load_zone_csv(path: str | Path) -> List[ZoneState]:
    """Zone fixture rows `zone,address,netspeed_kbps,active`; header optional."""
    p = Path(path)
    rows: Dict[str, List[ZoneServer]] = defaultdict(list)
    with p.open("r", encoding="utf-8", newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() == "zone":
                continue
            if len(row) < 3:
                raise InputValidationError(f"{p.name}:{lineno}: expected zone,address,netspeed_kbps[,active]", code="invalid_zone_row")
            where = f"{p.name}:{lineno}"
            try:
                speed = int(row[2])
            except ValueError as e:
                raise InputValidationError(f"{where}: netspeed {row[2]!r} not an integer", code="invalid_zone_row") from e
            active = _parse_bool(row[3], where) if len(row) > 3 else True
            rows[row[0].strip()].append(ZoneServer(row[1].strip(), validate_netspeed(speed), active))
    return [ZoneState(z, tuple(servers)) for z, servers in sorted(rows.items())]


def load_zone_aggregates(path: str | Path) -> Dict[str, int]:
    """`zone,aggregate_netspeed` rows (other columns ignored), e.g. a zone-count export."""
    p = Path(path)
    out: Dict[str, int] = {}
    with p.open("r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(row for row in f if not row.lstrip().startswith("#"))
        if not reader.fieldnames or not {"zone", "aggregate_netspeed"} <= set(reader.fieldnames):
            raise InputValidationError(f"{p.name}: needs columns zone,aggregate_netspeed", code="invalid_zone_counts")
        for row in reader:
            try:
                n = int(row["aggregate_netspeed"])
            except (TypeError, ValueError) as e:
                raise InputValidationError(f"{p.name}: bad aggregate for {row.get('zone')!r}", code="invalid_zone_counts") from e
            if n < 0:
                raise InputValidationError(f"{p.name}: negative aggregate for {row['zone']!r}", code="invalid_zone_counts")
            out[str(row["zone"]).strip()] = n
    return out


def netspeed_distribution(servers: Iterable[ServerRecord], *, threshold: float = 10.0) -> List[Dict[str, Any]]:
    """Server count and netspeed total per menu label, split by activity."""
    acc: Dict[str, Dict[str, int]] = defaultdict(
        lambda: {"active_servers": 0, "active_kbps": 0, "inactive_servers": 0, "inactive_kbps": 0}
    )
    for s in servers:
        row = acc[netspeed_label(s.netspeed)]
        side = "active" if s.is_active(threshold) else "inactive"
        row[f"{side}_servers"] += 1
        row[f"{side}_kbps"] += s.netspeed
    order = {lab: i for i, lab in enumerate(NETSPEED_LABELS + ("other",))}
    return [{"label": lab, **acc[lab]} for lab in sorted(acc, key=order.__getitem__)]
