from __future__ import annotations

import ipaddress
import logging
import socket
import struct
import threading
import time
from collections import defaultdict, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Deque, Dict, Iterable, List, Optional, Protocol, Tuple

from .errors import InputValidationError, WireError
from .fingerprint import Fingerprint, WeakHints, address_sort_key, canonical_address
from .ratelimit import RateLimiter
from .wire import (
    NtpMode,
    NtpPacket,
    client_probe,
    decode_packet,
    encode_packet,
    random_transmit_timestamp,
)

log = logging.getLogger(__name__)

NTP_PORT = 123

# Linux values; the socket module does not export every one of these.
_IP_RECVTTL = getattr(socket, "IP_RECVTTL", 12)
_IP_TTL = getattr(socket, "IP_TTL", 2)
_IP_RECVTOS = getattr(socket, "IP_RECVTOS", 13)
_IP_TOS = getattr(socket, "IP_TOS", 1)


@dataclass(frozen=True)
class ProbePlan:
    targets: Tuple[str, ...] = ()
    probes_per_target: int = 2
    window_s: float = 60.0
    timeout_s: float = 3.0
    retries: int = 2
    spacing_s: float = 5.0
    max_pps: float = 50.0
    workers: int = 16
    weak_hints: bool = False

    def __post_init__(self) -> None:
        if self.probes_per_target < 1:
            raise InputValidationError("probes_per_target must be >= 1", code="invalid_probe_plan")
        if self.retries < 0 or self.timeout_s <= 0 or self.max_pps <= 0 or self.workers < 1:
            raise InputValidationError("retries/timeout/max_pps/workers out of range", code="invalid_probe_plan")
        if self.window_s < self.spacing_s * self.probes_per_target:
            raise InputValidationError(
                f"window {self.window_s}s shorter than spacing {self.spacing_s}s x {self.probes_per_target} probes",
                code="invalid_probe_plan",
            )

    @classmethod
    def for_targets(cls, targets: Iterable[str], **kw) -> "ProbePlan":
        uniq = sorted({canonical_address(t) for t in targets}, key=address_sort_key)
        return cls(targets=tuple(uniq), **kw)


def read_targets(path: str | Path) -> List[str]:
    out: List[str] = []
    for ln in Path(path).read_text(encoding="utf-8").splitlines():
        s = ln.split("#", 1)[0].strip()
        if s:
            out.append(canonical_address(s))
    return out


@dataclass(frozen=True)
class ProbeResponse:
    data: bytes
    ttl: Optional[int] = None
    tclass: Optional[int] = None


class Transport(Protocol):
    def exchange(self, address: str, payload: bytes, timeout_s: float, want_hints: bool) -> Optional[ProbeResponse]:
        ...


class UdpTransport:
    """One UDP socket per exchange; returns None on timeout."""

    def __init__(self, port: int = NTP_PORT) -> None:
        self.port = int(port)

    def _enable_hints(self, s: socket.socket, family: int) -> None:
        try:
            if family == socket.AF_INET6:
                s.setsockopt(socket.IPPROTO_IPV6, socket.IPV6_RECVHOPLIMIT, 1)
                s.setsockopt(socket.IPPROTO_IPV6, socket.IPV6_RECVTCLASS, 1)
            else:
                s.setsockopt(socket.IPPROTO_IP, _IP_RECVTTL, 1)
                s.setsockopt(socket.IPPROTO_IP, _IP_RECVTOS, 1)
        except (OSError, AttributeError) as e:
            log.debug("probe.hints_unavailable error=%s", e)

    @staticmethod
    def _parse_ancillary(anc) -> Tuple[Optional[int], Optional[int]]:
        ttl = tclass = None
        for level, ctype, cdata in anc:
            if not cdata:
                continue
            value = struct.unpack("i", cdata[:4])[0] if len(cdata) >= 4 else cdata[0]
            if level == socket.IPPROTO_IP and ctype == _IP_TTL:
                ttl = value & 0xFF
            elif level == socket.IPPROTO_IP and ctype == _IP_TOS:
                tclass = (cdata[0] >> 2) & 0x3F
            elif level == socket.IPPROTO_IPV6 and ctype == getattr(socket, "IPV6_HOPLIMIT", -1):
                ttl = value & 0xFF
            elif level == socket.IPPROTO_IPV6 and ctype == getattr(socket, "IPV6_TCLASS", -1):
                tclass = (value >> 2) & 0x3F
        return ttl, tclass

    def exchange(self, address: str, payload: bytes, timeout_s: float, want_hints: bool) -> Optional[ProbeResponse]:
        ip = ipaddress.ip_address(address)
        family = socket.AF_INET6 if ip.version == 6 else socket.AF_INET
        with socket.socket(family, socket.SOCK_DGRAM) as s:
            if want_hints:
                self._enable_hints(s, family)
            s.sendto(payload, (address, self.port))
            deadline = time.monotonic() + timeout_s
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                s.settimeout(remaining)
                try:
                    data, anc, _flags, src = s.recvmsg(2048, socket.CMSG_SPACE(4) * 4)
                except socket.timeout:
                    return None
                if ipaddress.ip_address(src[0]) != ip:
                    log.debug("probe.stray_datagram from=%s expected=%s", src[0], address)
                    continue
                ttl, tclass = self._parse_ancillary(anc) if want_hints else (None, None)
                return ProbeResponse(data=data, ttl=ttl, tclass=tclass)


class ReplayTransport:
    """Answers probes from previously recorded fingerprints.

    Each address replays its recorded responses in order, cycling when the
    recording is shorter than the probe plan. Addresses without a recording
    time out.
    """

    def __init__(self, recorded: Iterable[Fingerprint]) -> None:
        self._queues: Dict[str, Deque[Fingerprint]] = defaultdict(deque)
        for fp in sorted(recorded, key=lambda f: (address_sort_key(f.address), f.collected_at)):
            self._queues[fp.address].append(fp)
        self._lock = threading.Lock()

    def exchange(self, address: str, payload: bytes, timeout_s: float, want_hints: bool) -> Optional[ProbeResponse]:
        with self._lock:
            q = self._queues.get(address)
            if not q:
                return None
            fp = q.popleft()
            q.append(fp)
        request = decode_packet(payload)
        reply = NtpPacket(
            leap=fp.leap,
            version=fp.version,
            mode=int(NtpMode.SERVER),
            stratum=fp.stratum,
            poll=fp.poll,
            precision=fp.precision,
            root_dispersion=fp.root_dispersion,
            refid=fp.refid,
            reference_ts=fp.reference_ts,
            origin_ts=request.transmit_ts,
            receive_ts=request.transmit_ts,
            transmit_ts=request.transmit_ts,
        )
        hints = fp.weak_hints or WeakHints()
        return ProbeResponse(
            data=encode_packet(reply),
            ttl=hints.ip_ttl_or_hoplimit if want_hints else None,
            tclass=hints.dscp_or_trafficclass if want_hints else None,
        )


def _validate_reply(address: str, sent: NtpPacket, resp: ProbeResponse) -> Optional[NtpPacket]:
    try:
        pkt = decode_packet(resp.data)
    except WireError as e:
        log.warning("probe.decode_error address=%s error=%s", address, e)
        return None
    if pkt.mode != NtpMode.SERVER:
        log.warning("probe.discard address=%s reason=mode_%d", address, pkt.mode)
        return None
    if not pkt.is_supported_version():
        log.warning("probe.discard address=%s reason=version_%d", address, pkt.version)
        return None
    if pkt.origin_ts != sent.transmit_ts:
        log.warning("probe.discard address=%s reason=origin_mismatch", address)
        return None
    return pkt


@dataclass
class ProbeCampaign:
    targets: Tuple[str, ...]
    fingerprints: List[Fingerprint] = field(default_factory=list)
    unresponsive: List[str] = field(default_factory=list)

    @property
    def responsive(self) -> int:
        return len({fp.address for fp in self.fingerprints})

    @property
    def response_rate(self) -> float:
        return self.responsive / len(self.targets) if self.targets else 0.0

    def summary(self) -> Dict[str, object]:
        return {
            "kind": "probe_campaign",
            "targets": len(self.targets),
            "responsive": self.responsive,
            "unresponsive": len(self.unresponsive),
            "response_rate": round(self.response_rate, 6),
            "fingerprints": len(self.fingerprints),
        }


class Prober:
    def __init__(
        self,
        transport: Optional[Transport] = None,
        *,
        clock: Callable[[], float] = time.time,
        sleep: Callable[[float], None] = time.sleep,
        limiter: Optional[RateLimiter] = None,
    ) -> None:
        self.transport = transport or UdpTransport()
        self.clock = clock
        self.sleep = sleep
        self.limiter = limiter

    def _round(self, address: str, plan: ProbePlan) -> Optional[Fingerprint]:
        for attempt in range(plan.retries + 1):
            request = client_probe(random_transmit_timestamp(self.clock()))
            if self.limiter is not None:
                self.limiter.acquire()
            try:
                resp = self.transport.exchange(address, encode_packet(request), plan.timeout_s, plan.weak_hints)
            except OSError as e:
                log.info("probe.send_error address=%s attempt=%d error=%s", address, attempt, e)
                continue
            if resp is None:
                log.debug("probe.timeout address=%s attempt=%d", address, attempt)
                continue
            pkt = _validate_reply(address, request, resp)
            if pkt is None:
                continue
            hints = WeakHints(resp.ttl, resp.tclass) if plan.weak_hints else None
            return Fingerprint.from_packet(address, pkt, collected_at=self.clock(), weak_hints=hints)
        return None

    def probe(self, address: str, plan: ProbePlan) -> List[Fingerprint]:
        address = canonical_address(address)
        out: List[Fingerprint] = []
        for r in range(plan.probes_per_target):
            if r:
                self.sleep(plan.spacing_s)
            fp = self._round(address, plan)
            if fp is None and not out:
                log.info("probe.unresponsive address=%s", address)
                return []
            if fp is not None:
                out.append(fp)
        return out

    def run(self, plan: ProbePlan) -> ProbeCampaign:
        camp = ProbeCampaign(targets=plan.targets)
        if not plan.targets:
            return camp
        with ThreadPoolExecutor(max_workers=min(plan.workers, len(plan.targets))) as ex:
            results = list(ex.map(lambda a: (a, self.probe(a, plan)), plan.targets))
        for address, fps in results:
            if fps:
                camp.fingerprints.extend(fps)
            else:
                camp.unresponsive.append(address)
        log.info("probe.campaign_done targets=%d responsive=%d", len(plan.targets), camp.responsive)
        return camp


def probe(
    address: str,
    plan: ProbePlan,
    *,
    transport: Optional[Transport] = None,
    clock: Callable[[], float] = time.time,
    sleep: Callable[[float], None] = time.sleep,
    limiter: Optional[RateLimiter] = None,
) -> List[Fingerprint]:
    return Prober(transport, clock=clock, sleep=sleep, limiter=limiter).probe(address, plan)


def probe_many(
    plan: ProbePlan,
    *,
    transport: Optional[Transport] = None,
    clock: Callable[[], float] = time.time,
    sleep: Callable[[float], None] = time.sleep,
    limiter: Optional[RateLimiter] = None,
) -> ProbeCampaign:
    """Probe every target of the plan under one shared packets-per-second cap."""
    if limiter is None:
        limiter = RateLimiter.per_second(plan.max_pps, clock=time.monotonic if clock is time.time else clock, sleep=sleep)
    return Prober(transport, clock=clock, sleep=sleep, limiter=limiter).run(plan)
