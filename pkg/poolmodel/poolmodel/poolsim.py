"""Seeded simulator of pool mechanics.

One step is one monitor period. Inside a step, in this order:

    1. attack servers join, leave the zone, or stop their daemon when due
    2. every listed server is probed and its score updated
    3. clients whose cache expired, or who gave up on a dead server, resolve
    4. every client sends a Poisson number of NTP queries to its cached server

DNS answers are drawn with exponential-race keys (Efraimidis-Spirakis), which
has the same law as successive netspeed-proportional draws without
replacement. A scenario's seed fixes every random draw of a run.
"""
from __future__ import annotations

import csv
import enum
import ipaddress
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml
from jsonschema import Draft202012Validator

from poolfield.errors import DomainError, ScenarioError
from poolfield.fingerprint import address_sort_key, canonical_address
from poolfield.hashutil import canonical_json, sha256_str
from poolfield.pool_client import SCORE_MAX, SCORE_MIN

from .apportion import ZoneServer, ZoneState

log = logging.getLogger(__name__)

ACTIVE_THRESHOLD = 10.0
DEFAULT_DECAY = 0.95
DEFAULT_GOOD_DELTA = 1.0
DEFAULT_BAD_DELTA = -5.0
GLOBAL_ZONE = "@"
DAY_S = 86400.0

SCENARIO_SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": "https://poolwatch.invalid/schemas/scenario.schema.json",
    "title": "Simulation scenario",
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "duration_days", "servers"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "seed": {"type": "integer", "minimum": 0},
        "duration_days": {"type": "number", "exclusiveMinimum": 0},
        "step_s": {"type": "number", "exclusiveMinimum": 0},
        "window_s": {"type": "number", "exclusiveMinimum": 0},
        "answer_size": {"type": "integer", "minimum": 1, "maximum": 8},
        "zone_weight": {"enum": ["netspeed", "split"]},
        "threshold": {"type": "number", "minimum": -100, "maximum": 20},
        "zones": {"type": "object", "additionalProperties": {"type": ["string", "null"]}},
        "servers": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["address", "zones", "netspeed"],
                "properties": {
                    "address": {"type": "string"},
                    "zones": {"type": "array", "minItems": 1, "items": {"type": "string"}},
                    "netspeed": {"type": "integer", "minimum": 0},
                    "score": {"type": "number", "minimum": -100, "maximum": 20},
                    "responsive": {"type": "boolean"},
                    "truthful": {"const": True},
                },
            },
        },
        "clients": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["zone", "count"],
                "properties": {
                    "zone": {"type": "string"},
                    "count": {"type": "integer", "minimum": 0},
                    "queries_per_day": {"type": "number", "minimum": 0},
                },
            },
        },
        "resolution": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "distribution": {"enum": ["fixed", "exponential", "lognormal", "pareto"]},
                "scale_s": {"type": "number", "exclusiveMinimum": 0},
                "sigma": {"type": "number", "exclusiveMinimum": 0},
                "shape": {"type": "number", "exclusiveMinimum": 0},
                "cap_s": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "failure_threshold": {"type": "integer", "minimum": 1},
                "stubborn_fraction": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "monitor": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "probes_per_step": {"type": "integer", "minimum": 1},
                "decay": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "good_delta": {"type": "number"},
                "bad_delta": {"type": "number"},
            },
        },
        "attack": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "required": ["zones", "count"],
            "properties": {
                "zones": {"type": "array", "minItems": 1, "items": {"type": "string"}},
                "count": {"type": "integer", "minimum": 0},
                "netspeed": {"type": "integer", "minimum": 0},
                "addresses": {"type": "array", "items": {"type": "string"}},
                "initial_score": {"type": "number", "minimum": -100, "maximum": 20},
                "start_day": {"type": "number", "minimum": 0},
                "removal_day": {"type": ["number", "null"], "minimum": 0},
                "daemon_stop_day": {"type": ["number", "null"], "minimum": 0},
            },
        },
    },
}

_SCENARIO_VALIDATOR = Draft202012Validator(SCENARIO_SCHEMA)


# -------------------------
# scoring
# -------------------------
class Outcome(str, enum.Enum):
    ACCURATE = "accurate"
    BAD = "bad"


def step_score(
    score: float,
    outcome: Outcome | str,
    *,
    decay: float = DEFAULT_DECAY,
    good: float = DEFAULT_GOOD_DELTA,
    bad: float = DEFAULT_BAD_DELTA,
) -> float:
    if not SCORE_MIN <= score <= SCORE_MAX:
        raise DomainError(f"score {score} outside [-100, 20]")
    delta = good if Outcome(outcome) is Outcome.ACCURATE else bad
    return float(np.clip(decay * score + delta, SCORE_MIN, SCORE_MAX))


# -------------------------
# scenario
# -------------------------
@dataclass(frozen=True)
class SimServer:
    address: str
    zones: Tuple[str, ...]
    netspeed: int
    score: float = 0.0
    truthful: bool = True
    responsive: bool = True
    attacker: bool = False

    def __post_init__(self) -> None:
        if not SCORE_MIN <= self.score <= SCORE_MAX:
            raise ScenarioError(f"server {self.address}: score {self.score} outside [-100, 20]")
        if self.netspeed < 0:
            raise ScenarioError(f"server {self.address}: negative netspeed")
        if not self.zones:
            raise ScenarioError(f"server {self.address}: no zones")

    def eligible(self, threshold: float = ACTIVE_THRESHOLD) -> bool:
        return self.score >= threshold and self.netspeed > 0


@dataclass(frozen=True)
class ClientGroup:
    zone: str
    count: int
    queries_per_day: float = 24.0


@dataclass(frozen=True)
class ResolutionModel:
    """How long a client keeps its resolved server.

    `scale_s` is the value (fixed), the mean (exponential), the median
    (lognormal) or the minimum (pareto) of the re-resolution interval.
    """

    distribution: str = "fixed"
    scale_s: float = 3600.0
    sigma: float = 1.0
    shape: float = 1.5
    cap_s: Optional[float] = None
    failure_threshold: int = 3
    stubborn_fraction: float = 0.0

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.distribution == "fixed":
            x = np.full(n, float(self.scale_s))
        elif self.distribution == "exponential":
            x = rng.exponential(self.scale_s, n)
        elif self.distribution == "lognormal":
            x = rng.lognormal(math.log(self.scale_s), self.sigma, n)
        elif self.distribution == "pareto":
            x = self.scale_s * (1.0 + rng.pareto(self.shape, n))
        else:
            raise ScenarioError(f"unknown re-resolution distribution {self.distribution!r}")
        if self.cap_s is not None:
            x = np.minimum(x, float(self.cap_s))
        return x


@dataclass(frozen=True)
class MonitorModel:
    probes_per_step: int = 1
    decay: float = DEFAULT_DECAY
    good_delta: float = DEFAULT_GOOD_DELTA
    bad_delta: float = DEFAULT_BAD_DELTA


@dataclass(frozen=True)
class AttackSpec:
    zones: Tuple[str, ...]
    count: int
    netspeed: int = 3_000_000
    addresses: Tuple[str, ...] = ()
    initial_score: float = 0.0
    start_s: float = 0.0
    removal_s: Optional[float] = None
    daemon_stop_s: Optional[float] = None

    def servers(self) -> List[SimServer]:
        addrs = list(self.addresses)
        net = ipaddress.ip_network("198.51.100.0/24")
        while len(addrs) < self.count:
            addrs.append(str(net[len(addrs) + 1]))
        return [
            SimServer(
                address=canonical_address(a),
                zones=self.zones,
                netspeed=self.netspeed,
                score=self.initial_score,
                attacker=True,
            )
            for a in addrs[: self.count]
        ]

    def present_at(self, now: float) -> bool:
        return now >= self.start_s and (self.removal_s is None or now < self.removal_s)

    def responsive_at(self, now: float) -> bool:
        return self.daemon_stop_s is None or now < self.daemon_stop_s


@dataclass(frozen=True)
class SimConfig:
    name: str
    seed: int
    duration_s: float
    servers: Tuple[SimServer, ...]
    clients: Tuple[ClientGroup, ...] = ()
    zones: Mapping[str, Optional[str]] = field(default_factory=dict)
    step_s: float = 900.0
    window_s: float = DAY_S
    answer_size: int = 4
    zone_weight: str = "netspeed"
    threshold: float = ACTIVE_THRESHOLD
    resolution: ResolutionModel = ResolutionModel()
    monitor: MonitorModel = MonitorModel()
    attack: Optional[AttackSpec] = None
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    @property
    def digest(self) -> str:
        return sha256_str(canonical_json(dict(self.raw)))

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=int(seed), raw={**self.raw, "seed": int(seed)})

    def all_servers(self) -> List[SimServer]:
        out = list(self.servers)
        if self.attack is not None:
            out.extend(self.attack.servers())
        return out

    def zone_state(self, zone: str, *, with_attack: bool = True) -> ZoneState:
        """Analytic view of one zone: members as they stand once everyone is active."""
        members = [s for s in (self.all_servers() if with_attack else self.servers) if zone in s.zones]
        return ZoneState(zone, tuple(ZoneServer(s.address, s.netspeed, s.responsive) for s in members))

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> "SimConfig":
        errors = sorted(_SCENARIO_VALIDATOR.iter_errors(dict(raw)), key=lambda e: (list(e.path), e.message))
        if errors:
            where = "/".join(str(p) for p in errors[0].path) or "/"
            raise ScenarioError(f"{where}: {errors[0].message}")
        duration_s = float(raw["duration_days"]) * DAY_S

        servers = tuple(
            SimServer(
                address=canonical_address(s["address"]),
                zones=tuple(str(z) for z in s["zones"]),
                netspeed=int(s["netspeed"]),
                score=float(s.get("score", 0.0)),
                responsive=bool(s.get("responsive", True)),
            )
            for s in raw["servers"]
        )
        seen = set()
        for s in servers:
            if s.address in seen:
                raise ScenarioError(f"server {s.address} listed twice")
            seen.add(s.address)

        attack = None
        a = raw.get("attack")
        if a:
            attack = AttackSpec(
                zones=tuple(a["zones"]),
                count=int(a["count"]),
                netspeed=int(a.get("netspeed", 3_000_000)),
                addresses=tuple(a.get("addresses") or ()),
                initial_score=float(a.get("initial_score", 0.0)),
                start_s=float(a.get("start_day", 0.0)) * DAY_S,
                removal_s=None if a.get("removal_day") is None else float(a["removal_day"]) * DAY_S,
                daemon_stop_s=None if a.get("daemon_stop_day") is None else float(a["daemon_stop_day"]) * DAY_S,
            )
            for t in (attack.start_s, attack.removal_s, attack.daemon_stop_s):
                if t is not None and t > duration_s:
                    raise ScenarioError(f"attack time {t / DAY_S:g} d beyond duration {duration_s / DAY_S:g} d")
            if attack.removal_s is not None and attack.removal_s < attack.start_s:
                raise ScenarioError("attack removed before it starts")
            clash = seen.intersection(canonical_address(x) for x in attack.addresses)
            if clash:
                raise ScenarioError(f"attack address {sorted(clash)[0]} already a listed server")

        zones = {str(k): (None if v is None else str(v)) for k, v in (raw.get("zones") or {}).items()}
        _check_hierarchy(zones)

        return cls(
            name=str(raw["name"]),
            seed=int(raw.get("seed", 0)),
            duration_s=duration_s,
            servers=servers,
            clients=tuple(
                ClientGroup(str(c["zone"]), int(c["count"]), float(c.get("queries_per_day", 24.0)))
                for c in raw.get("clients") or ()
            ),
            zones=zones,
            step_s=float(raw.get("step_s", 900.0)),
            window_s=float(raw.get("window_s", DAY_S)),
            answer_size=int(raw.get("answer_size", 4)),
            zone_weight=str(raw.get("zone_weight", "netspeed")),
            threshold=float(raw.get("threshold", ACTIVE_THRESHOLD)),
            resolution=ResolutionModel(**(raw.get("resolution") or {})),
            monitor=MonitorModel(**(raw.get("monitor") or {})),
            attack=attack,
            raw=json.loads(canonical_json(dict(raw))),
        )


def _check_hierarchy(parents: Mapping[str, Optional[str]]) -> None:
    for start in parents:
        seen = {start}
        z = parents.get(start)
        while z is not None:
            if z in seen:
                raise ScenarioError(f"zone hierarchy loops at {z!r}")
            seen.add(z)
            z = parents.get(z)


def load_scenario(path: str | Path) -> SimConfig:
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ScenarioError(f"{p.name}: {e}") from e
    if not isinstance(raw, dict):
        raise ScenarioError(f"{p.name} must contain a mapping")
    return SimConfig.from_mapping(raw)


# -------------------------
# pool state and answer selection
# -------------------------
class PoolState:
    """Column-wise server state shared by the monitor and the DNS side."""

    def __init__(
        self,
        servers: Sequence[SimServer],
        parents: Optional[Mapping[str, Optional[str]]] = None,
        *,
        zone_weight: str = "netspeed",
        threshold: float = ACTIVE_THRESHOLD,
    ) -> None:
        if zone_weight not in ("netspeed", "split"):
            raise ScenarioError(f"unknown zone_weight {zone_weight!r}")
        self.addresses = [s.address for s in servers]
        self.netspeed = np.array([s.netspeed for s in servers], dtype=np.float64)
        self.score = np.array([s.score for s in servers], dtype=np.float64)
        self.responsive = np.array([s.responsive for s in servers], dtype=bool)
        self.attacker = np.array([s.attacker for s in servers], dtype=bool)
        self.present = ~self.attacker
        self.parents = dict(parents or {})
        self.threshold = threshold
        names = {z for s in servers for z in s.zones}
        self._members = {z: np.array([z in s.zones for s in servers], dtype=bool) for z in sorted(names)}
        memberships = np.array([len(s.zones) for s in servers], dtype=np.float64)
        self.weight = self.netspeed / memberships if zone_weight == "split" else self.netspeed.copy()

    def __len__(self) -> int:
        return len(self.addresses)

    @classmethod
    def from_servers(cls, servers: Sequence[SimServer], **kw: Any) -> "PoolState":
        st = cls(servers, **kw)
        st.present[:] = True
        return st

    def eligible(self) -> np.ndarray:
        return self.present & (self.score >= self.threshold) & (self.netspeed > 0)

    def chain(self, zone: str) -> List[str]:
        """The zone, its ancestors, then the global zone."""
        out = [zone]
        z = self.parents.get(zone)
        while z is not None and z not in out:
            out.append(z)
            z = self.parents.get(z)
        if GLOBAL_ZONE not in out:
            out.append(GLOBAL_ZONE)
        return out

    def candidates(self, zone: str) -> Tuple[Optional[str], np.ndarray, np.ndarray]:
        elig = self.eligible()
        for z in self.chain(zone):
            members = self._members.get(z)
            if members is None:
                continue
            idx = np.flatnonzero(members & elig)
            if idx.size:
                return z, idx, self.weight[idx]
        return None, np.empty(0, dtype=np.int64), np.empty(0)


def select_answers(
    zone: str,
    state: PoolState,
    rng: np.random.Generator,
    n: int,
    size: int = 4,
) -> Tuple[Optional[str], np.ndarray]:
    """`n` independent answers for clients of `zone`, as server indices.

    Returns the zone that supplied the answers and an (n, k) array, k being
    min(size, eligible servers). Column 0 is the first address of each answer.
    """
    used, idx, w = state.candidates(zone)
    if used is None:
        log.debug("poolsim.no_eligible zone=%s", zone)
        return None, np.empty((n, 0), dtype=np.int64)
    k = min(size, idx.size)
    keys = np.log(1.0 - rng.random((n, idx.size))) / w
    top = np.argsort(-keys, axis=1, kind="stable")[:, :k]
    return used, idx[top]


def select_answer(zone: str, state: PoolState, rng: np.random.Generator, size: int = 4) -> List[str]:
    _, rows = select_answers(zone, state, rng, 1, size)
    if rows.shape[1] == 0:
        log.warning("poolsim.empty_answer zone=%s", zone)
        return []
    return [state.addresses[i] for i in rows[0]]


# -------------------------
# run
# -------------------------
@dataclass
class _ZoneWindow:
    inclusions: np.ndarray
    first: np.ndarray
    queries: int = 0


class ClientPopulation:
    """Clients held column-wise: zone, cached server, cache deadline, failures."""

    def __init__(self, groups: Sequence[ClientGroup], cfg: SimConfig, rng: np.random.Generator) -> None:
        self.zones = [g.zone for g in groups]
        self.zone_index = np.repeat(np.arange(len(groups)), [g.count for g in groups]).astype(np.int64)
        n = int(self.zone_index.size)
        rates = np.array([g.queries_per_day for g in groups], dtype=np.float64)
        self.rate = rates[self.zone_index] * cfg.step_s / DAY_S if n else np.empty(0)
        self.cached = np.full(n, -1, dtype=np.int64)
        self.acquired_at = np.zeros(n)
        self.next_resolve_at = np.zeros(n)
        self.fails = np.zeros(n, dtype=np.int64)
        self.fresh = np.ones(n, dtype=bool)
        self.stubborn = rng.random(n) < cfg.resolution.stubborn_fraction

    def __len__(self) -> int:
        return int(self.cached.size)

    def due(self, now: float, failure_threshold: int) -> np.ndarray:
        gave_up = (self.fails >= failure_threshold) & ~self.stubborn
        return (self.cached < 0) | (now >= self.next_resolve_at) | gave_up


@dataclass(frozen=True)
class SimReport:
    name: str
    seed: int
    config_digest: str
    steps: int
    rows: Tuple[Dict[str, Any], ...]
    windows: Tuple[Dict[str, Any], ...]
    residual: Tuple[Dict[str, Any], ...]
    servers: Tuple[Dict[str, Any], ...]
    dns_queries: int
    ntp_queries: int
    attack: Optional[Dict[str, Any]] = None

    def shares(self, window: int, zone: str) -> Dict[str, float]:
        return {r["address"]: r["share"] for r in self.rows if r["window"] == window and r["zone"] == zone}

    def summary(self) -> Dict[str, Any]:
        return {
            "kind": "sim_summary",
            "scenario": self.name,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "steps": self.steps,
            "dns_queries": self.dns_queries,
            "ntp_queries": self.ntp_queries,
            "windows": list(self.windows),
            "attack": self.attack,
            "residual": list(self.residual),
            "servers": list(self.servers),
        }

    def digest(self) -> str:
        return sha256_str(canonical_json({"summary": self.summary(), "rows": list(self.rows)}))

    def write(self, out_dir: str | Path) -> Dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "windows": out / "sim_windows.csv",
            "summary": out / "sim_summary.json",
            "residual": out / "residual.csv",
        }
        _write_csv(paths["windows"], WINDOW_COLUMNS, self.rows)
        _write_csv(paths["residual"], ("day", "queries", "daemon_stopped"), self.residual)
        paths["summary"].write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return paths


WINDOW_COLUMNS = (
    "window",
    "zone",
    "address",
    "attacker",
    "inclusions",
    "first_position",
    "share",
    "inclusion_share",
    "queries",
)


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[Mapping[str, Any]]) -> None:
    with path.open("w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in columns})


class Simulation:
    def __init__(self, cfg: SimConfig) -> None:
        self.cfg = cfg
        self.rng = np.random.Generator(np.random.PCG64(cfg.seed))
        self.state = PoolState(cfg.all_servers(), cfg.zones, zone_weight=cfg.zone_weight, threshold=cfg.threshold)
        self.clients = ClientPopulation(cfg.clients, cfg, self.rng)
        self.n_steps = int(math.ceil(cfg.duration_s / cfg.step_s))
        self.tallies: Dict[Tuple[int, str], _ZoneWindow] = {}
        n_days = int(math.ceil(cfg.duration_s / DAY_S))
        self.ntp_daily = np.zeros((n_days, len(self.state)), dtype=np.int64)
        self.residual_daily: Dict[int, int] = {}

    def _tally(self, window: int, zone: str) -> _ZoneWindow:
        key = (window, zone)
        if key not in self.tallies:
            n = len(self.state)
            self.tallies[key] = _ZoneWindow(np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64))
        return self.tallies[key]

    def _attack_events(self, now: float) -> None:
        a = self.cfg.attack
        if a is None or not a.count:
            return
        att = self.state.attacker
        self.state.present[att] = a.present_at(now)
        self.state.responsive[att] = a.responsive_at(now)

    def _probe(self) -> None:
        m = self.cfg.monitor
        st = self.state
        for _ in range(m.probes_per_step):
            delta = np.where(st.responsive, m.good_delta, m.bad_delta)
            stepped = np.clip(m.decay * st.score + delta, SCORE_MIN, SCORE_MAX)
            st.score = np.where(st.present, stepped, st.score)

    def _resolve(self, now: float, window: int) -> None:
        cl = self.clients
        due = cl.due(now, self.cfg.resolution.failure_threshold)
        for zi, zone in enumerate(cl.zones):
            sel = np.flatnonzero(due & (cl.zone_index == zi))
            if not sel.size:
                continue
            _, rows = select_answers(zone, self.state, self.rng, int(sel.size), self.cfg.answer_size)
            t = self._tally(window, zone)
            t.queries += int(sel.size)
            if rows.shape[1]:
                np.add.at(t.inclusions, rows.ravel(), 1)
                np.add.at(t.first, rows[:, 0], 1)
                cl.cached[sel] = rows[:, 0]
            else:
                cl.cached[sel] = -1
            interval = self.cfg.resolution.draw(self.rng, int(sel.size))
            # first lookups start part-way through their cache lifetime
            stagger = np.where(cl.fresh[sel], self.rng.random(sel.size), 1.0)
            cl.next_resolve_at[sel] = now + interval * stagger
            cl.acquired_at[sel] = now
            cl.fresh[sel] = False
            cl.fails[sel] = 0

    def _query(self, now: float) -> None:
        cl = self.clients
        if not len(cl):
            return
        q = self.rng.poisson(cl.rate)
        has = cl.cached >= 0
        target = cl.cached[has]
        sent = q[has]
        counts = np.bincount(target, weights=sent, minlength=len(self.state)).astype(np.int64)
        self.ntp_daily[int(now // DAY_S)] += counts
        dead = np.zeros(len(cl), dtype=bool)
        dead[has] = ~self.state.responsive[target]
        cl.fails[dead] += q[dead]
        a = self.cfg.attack
        if a is not None and a.removal_s is not None and now >= a.removal_s:
            day = int((now - a.removal_s) // DAY_S)
            self.residual_daily[day] = self.residual_daily.get(day, 0) + int(counts[self.state.attacker].sum())

    def run(self) -> SimReport:
        cfg = self.cfg
        log.info(
            "poolsim.start scenario=%s seed=%d steps=%d servers=%d clients=%d",
            cfg.name,
            cfg.seed,
            self.n_steps,
            len(self.state),
            len(self.clients),
        )
        for k in range(self.n_steps):
            now = k * cfg.step_s
            window = int(now // cfg.window_s)
            self._attack_events(now)
            self._probe()
            self._resolve(now, window)
            self._query(now)
        report = self._report()
        log.info("poolsim.done scenario=%s dns_queries=%d ntp_queries=%d", cfg.name, report.dns_queries, report.ntp_queries)
        return report

    def _report(self) -> SimReport:
        cfg = self.cfg
        st = self.state
        order = sorted(range(len(st)), key=lambda i: address_sort_key(st.addresses[i]))
        attack_zone = cfg.attack.zones[0] if cfg.attack and cfg.attack.count else None

        rows: List[Dict[str, Any]] = []
        windows: Dict[int, Dict[str, Any]] = {}
        for (window, zone), t in sorted(self.tallies.items()):
            answered = int(t.first.sum())
            included = int(t.inclusions.sum())
            w = windows.setdefault(window, {"window": window, "dns_queries": 0, "attacker_share": None, "attacker_inclusion_share": None})
            w["dns_queries"] += t.queries
            if zone == attack_zone and answered:
                w["attacker_share"] = int(t.first[st.attacker].sum()) / answered
                w["attacker_inclusion_share"] = int(t.inclusions[st.attacker].sum()) / included
            for i in order:
                if not t.inclusions[i]:
                    continue
                rows.append(
                    {
                        "window": window,
                        "zone": zone,
                        "address": st.addresses[i],
                        "attacker": bool(st.attacker[i]),
                        "inclusions": int(t.inclusions[i]),
                        "first_position": int(t.first[i]),
                        "share": int(t.first[i]) / answered,
                        "inclusion_share": int(t.inclusions[i]) / included,
                        "queries": t.queries,
                    }
                )

        residual: List[Dict[str, Any]] = []
        attack = None
        if cfg.attack is not None:
            a = cfg.attack
            stop_day = None
            if a.removal_s is not None:
                if a.daemon_stop_s is not None and a.daemon_stop_s >= a.removal_s:
                    stop_day = int((a.daemon_stop_s - a.removal_s) // DAY_S)
                n_days = int(math.ceil((cfg.duration_s - a.removal_s) / DAY_S))
                residual = [
                    {
                        "day": d,
                        "queries": self.residual_daily.get(d, 0),
                        "daemon_stopped": stop_day is not None and d >= stop_day,
                    }
                    for d in range(n_days)
                ]
            attack = {
                "zones": list(a.zones),
                "count": a.count,
                "netspeed": a.netspeed,
                "addresses": [st.addresses[i] for i in np.flatnonzero(st.attacker)],
                "start_day": a.start_s / DAY_S,
                "removal_day": None if a.removal_s is None else a.removal_s / DAY_S,
                "daemon_stop_day": None if a.daemon_stop_s is None else a.daemon_stop_s / DAY_S,
                "daemon_stop_offset_days": stop_day,
            }

        servers = tuple(
            {
                "address": st.addresses[i],
                "attacker": bool(st.attacker[i]),
                "score": float(st.score[i]),
                "eligible": bool(st.eligible()[i]),
                "ntp_queries": int(self.ntp_daily[:, i].sum()),
            }
            for i in order
        )
        return SimReport(
            name=cfg.name,
            seed=cfg.seed,
            config_digest=cfg.digest,
            steps=self.n_steps,
            rows=tuple(rows),
            windows=tuple(windows[w] for w in sorted(windows)),
            residual=tuple(residual),
            servers=servers,
            dns_queries=sum(t.queries for t in self.tallies.values()),
            ntp_queries=int(self.ntp_daily.sum()),
            attack=attack,
        )


def run(cfg: SimConfig) -> SimReport:
    return Simulation(cfg).run()


def residual(cfg: SimConfig) -> List[Dict[str, Any]]:
    """Daily NTP queries reaching the attack servers after their removal."""
    if cfg.attack is None or cfg.attack.removal_s is None:
        raise ScenarioError("residual traffic needs an attack with removal_day")
    return list(run(cfg).residual)
