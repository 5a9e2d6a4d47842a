from __future__ import annotations

import ipaddress
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml

ACTIVE_SCORE = 10.0


@dataclass
class MockServer:
    server_id: int
    ip: str
    zones: List[str] = field(default_factory=list)
    score: float = 0.0
    netspeed: int = 0
    account: Optional[str] = None
    deleted: bool = False
    history: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def active(self) -> bool:
        return not self.deleted and self.score >= ACTIVE_SCORE


@dataclass
class MockPool:
    """Mutable pool state served by the mock app.

    Tests may change it between requests (advance answer counters, add
    servers, inject failing paths).
    """

    servers: Dict[int, MockServer] = field(default_factory=dict)
    answers: Dict[str, Dict[str, int]] = field(default_factory=dict)
    zones: Dict[str, Dict[str, int]] = field(default_factory=dict)
    fail_paths: Dict[str, int] = field(default_factory=dict)
    requests: List[str] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add_server(self, srv: MockServer) -> None:
        srv.ip = str(ipaddress.ip_address(srv.ip))
        with self._lock:
            self.servers[srv.server_id] = srv

    def by_ip(self, ip: str) -> Optional[MockServer]:
        for s in self.servers.values():
            if s.ip == ip:
                return s
        return None

    def advance_answers(self, ip: str, zone: str, delta: int) -> None:
        ip = str(ipaddress.ip_address(ip))
        with self._lock:
            zmap = self.answers.setdefault(ip, {})
            zmap[zone] = int(zmap.get(zone, 0)) + int(delta)

    def log_request(self, path: str) -> None:
        with self._lock:
            self.requests.append(path)

    def zone_counts(self, zone: str) -> Optional[Dict[str, Any]]:
        """Explicit zone entry if the fixture has one, else computed from servers.

        Unknown zones (no entry, no member server) return None.
        """
        explicit = self.zones.get(zone)
        members = [s for s in self.servers.values() if zone in s.zones]
        if explicit is None and not members:
            return None
        active = [s for s in members if s.active]
        computed = {
            "servers_v4": sum(1 for s in active if ipaddress.ip_address(s.ip).version == 4),
            "servers_v6": sum(1 for s in active if ipaddress.ip_address(s.ip).version == 6),
            "aggregate_netspeed": sum(s.netspeed for s in active),
        }
        out = {"zone": zone, **computed}
        for k in ("servers_v4", "servers_v6", "aggregate_netspeed"):
            if explicit and k in explicit:
                out[k] = int(explicit[k])
        return out


def _server_from(d: Mapping[str, Any]) -> MockServer:
    return MockServer(
        server_id=int(d["id"]),
        ip=str(d["ip"]),
        zones=[str(z) for z in d.get("zones") or []],
        score=float(d.get("score", 0.0)),
        netspeed=int(d.get("netspeed", 0)),
        account=(str(d["account"]) if d.get("account") else None),
        deleted=bool(d.get("deleted", False)),
        history=[(int(ts), float(sc)) for ts, sc in d.get("history") or []],
    )


def pool_from_mapping(raw: Mapping[str, Any]) -> MockPool:
    if int(raw.get("format_version", 1)) != 1:
        raise ValueError(f"invalid_fixture: unsupported format_version {raw.get('format_version')!r}")
    pool = MockPool()
    for d in raw.get("servers") or []:
        pool.add_server(_server_from(d))
    for ip, zmap in (raw.get("answers") or {}).items():
        pool.answers[str(ipaddress.ip_address(ip))] = {str(z): int(c) for z, c in (zmap or {}).items()}
    for zone, counts in (raw.get("zones") or {}).items():
        pool.zones[str(zone)] = {str(k): int(v) for k, v in (counts or {}).items()}
    return pool


def load_fixture(path: str | Path) -> MockPool:
    p = Path(path)
    raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"invalid_fixture: {p.name} must contain a mapping")
    return pool_from_mapping(raw)
