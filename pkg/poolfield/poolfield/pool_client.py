"""Polite client for the pool website's enumeration and statistics endpoints.

Paths (relative to the base URL):

    /scores/{id}                        301 -> /scores/{ip}   (ID to address)
    /scores/{ip}                        HTML: zones, netspeed, account, status
    /scores/{ip}/json                   current score and score history
    /api/data/server/dns/answers/{ip}   cumulative DNS answers per zone
    /api/data/zone/counts/{zone}        server counts and aggregate netspeed

Every request goes through one shared RateLimiter. Redirects are parsed,
never followed. The pool's DNS is never queried.
"""
from __future__ import annotations

import csv
import ipaddress
import logging
import math
import random
import re
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Tuple
from urllib.parse import quote, unquote, urljoin, urlparse

import requests
from bs4 import BeautifulSoup
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential_jitter

from . import __version__
from .errors import InputValidationError, NotFoundError, ProtocolError, TransportError
from .fingerprint import canonical_address
from .ratelimit import RateLimiter

if TYPE_CHECKING:
    from .store import PoolStore

log = logging.getLogger(__name__)

SCORE_MIN = -100.0
SCORE_MAX = 20.0

_REDIRECT_CODES = {301, 302, 303, 307, 308}
_SCORES_PATH = re.compile(r"^/scores/(?P<ip>[^/?#]+)/?$")


@dataclass(frozen=True)
class RatePolicy:
    mean_inter_request_s: float = 5.0
    id_poll_interval_s: float = 90 * 60.0
    answers_poll_interval_s: float = 30 * 60.0
    jitter: float = 0.5

    def __post_init__(self) -> None:
        for name in ("mean_inter_request_s", "id_poll_interval_s", "answers_poll_interval_s"):
            if getattr(self, name) <= 0:
                raise InputValidationError(f"{name} must be positive", code="invalid_rate_policy")


@dataclass(frozen=True)
class ServerRecord:
    server_id: int
    address: str
    zones: Tuple[str, ...]
    score: float
    netspeed: int
    account: Optional[str]
    first_seen: float
    last_seen: float
    deleted: bool = False

    def __post_init__(self) -> None:
        if self.server_id < 1:
            raise InputValidationError(f"server_id must be >= 1, got {self.server_id}", code="invalid_server_record")
        if not SCORE_MIN <= self.score <= SCORE_MAX:
            raise InputValidationError(f"score {self.score} outside [-100, 20]", code="invalid_server_record")
        if self.netspeed < 0:
            raise InputValidationError(f"netspeed {self.netspeed} negative", code="invalid_server_record")

    @property
    def monitor_only(self) -> bool:
        return self.netspeed == 0

    @property
    def family(self) -> str:
        return "v6" if ipaddress.ip_address(self.address).version == 6 else "v4"

    def is_active(self, threshold: float = 10.0) -> bool:
        return not self.deleted and self.score >= threshold

    def to_record(self) -> Dict[str, Any]:
        rec = asdict(self)
        rec["zones"] = list(self.zones)
        rec["monitor_only"] = self.monitor_only
        return rec

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "ServerRecord":
        try:
            return cls(
                server_id=int(rec["server_id"]),
                address=canonical_address(rec["address"]),
                zones=tuple(sorted(str(z) for z in rec.get("zones") or ())),
                score=float(rec["score"]),
                netspeed=int(rec["netspeed"]),
                account=(str(rec["account"]) if rec.get("account") else None),
                first_seen=float(rec["first_seen"]),
                last_seen=float(rec["last_seen"]),
                deleted=bool(rec.get("deleted", False)),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, InputValidationError):
                raise
            raise InputValidationError(f"server record: {e}", code="invalid_server_record") from e


@dataclass(frozen=True)
class ZoneCounts:
    zone: str
    servers_v4: int
    servers_v6: int
    aggregate_netspeed: int
    fetched_at: float

    def __post_init__(self) -> None:
        if min(self.servers_v4, self.servers_v6, self.aggregate_netspeed) < 0:
            raise InputValidationError(f"negative counts for zone {self.zone}", code="invalid_zone_counts")


@dataclass(frozen=True)
class AnswerSample:
    address: str
    zone: str
    answer_count: int
    fetched_at: float


@dataclass(frozen=True)
class ScoreRow:
    server_id: int
    ts: int
    score: float


@dataclass(frozen=True)
class ServerPage:
    server_id: Optional[int]
    address: str
    zones: Tuple[str, ...]
    netspeed: int
    account: Optional[str]
    deleted: bool


class _Transient(Exception):
    pass


class PoolClient:
    def __init__(
        self,
        base_url: str,
        *,
        policy: RatePolicy = RatePolicy(),
        limiter: Optional[RateLimiter] = None,
        session: Optional[requests.Session] = None,
        timeout_s: float = 10.0,
        max_attempts: int = 4,
        backoff_initial_s: float = 1.0,
        backoff_max_s: float = 30.0,
        clock: Callable[[], float] = time.time,
        sleep: Callable[[float], None] = time.sleep,
        user_agent: Optional[str] = None,
    ) -> None:
        self.base_url = base_url.rstrip("/") + "/"
        self.policy = policy
        self.clock = clock
        self.sleep = sleep
        self.limiter = limiter or RateLimiter(policy.mean_inter_request_s, jitter=policy.jitter, sleep=sleep)
        self.session = session or requests.Session()
        self.session.headers.setdefault("User-Agent", user_agent or f"poolwatch/{__version__} (research measurement)")
        self.timeout_s = float(timeout_s)
        self.max_attempts = int(max_attempts)
        self.backoff_initial_s = float(backoff_initial_s)
        self.backoff_max_s = float(backoff_max_s)
        self.requests_sent = 0

    def close(self) -> None:
        self.session.close()

    def __enter__(self) -> "PoolClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -------------------------
    # transport
    # -------------------------
    def _send(self, url: str) -> requests.Response:
        self.limiter.acquire()
        self.requests_sent += 1
        try:
            resp = self.session.get(url, allow_redirects=False, timeout=self.timeout_s)
        except (requests.ConnectionError, requests.Timeout) as e:
            log.info("pool.transport_error url=%s error=%s", url, e)
            raise _Transient(str(e)) from e
        if resp.status_code == 429 or resp.status_code >= 500:
            log.info("pool.retryable_status url=%s status=%d", url, resp.status_code)
            raise _Transient(f"HTTP {resp.status_code}")
        return resp

    def get(self, path: str) -> requests.Response:
        url = urljoin(self.base_url, path.lstrip("/"))
        retrying = Retrying(
            stop=stop_after_attempt(self.max_attempts),
            wait=wait_exponential_jitter(initial=self.backoff_initial_s, max=self.backoff_max_s),
            retry=retry_if_exception_type(_Transient),
            sleep=self.sleep,
            reraise=True,
        )
        try:
            for attempt in retrying:
                with attempt:
                    return self._send(url)
        except _Transient as e:
            raise TransportError(f"GET {url} failed after {self.max_attempts} attempts: {e}") from e
        raise TransportError(f"GET {url}: no attempt made")

    @staticmethod
    def _json(resp: requests.Response) -> Any:
        try:
            return resp.json()
        except ValueError as e:
            raise ProtocolError(f"non-JSON body from {resp.url}") from e

    # -------------------------
    # endpoints
    # -------------------------
    def resolve_id(self, server_id: int) -> Optional[str]:
        """Address behind a server ID, or None when the ID is not allocated."""
        if int(server_id) < 1:
            raise InputValidationError(f"server_id must be >= 1, got {server_id}", code="invalid_server_id")
        resp = self.get(f"scores/{int(server_id)}")
        if resp.status_code == 404:
            return None
        if resp.status_code not in _REDIRECT_CODES:
            raise ProtocolError(f"/scores/{server_id}: expected redirect, got HTTP {resp.status_code}")
        location = resp.headers.get("Location") or ""
        m = _SCORES_PATH.match(urlparse(location).path)
        if not m:
            raise ProtocolError(f"/scores/{server_id}: malformed redirect target {location!r}")
        try:
            return canonical_address(unquote(m.group("ip")))
        except InputValidationError as e:
            raise ProtocolError(f"/scores/{server_id}: redirect target is not an address: {location!r}") from e

    def fetch_server_page(self, address: str) -> ServerPage:
        address = canonical_address(address)
        resp = self.get(f"scores/{quote(address, safe=':.')}")
        if resp.status_code == 404:
            raise NotFoundError(f"no server page for {address}")
        if resp.status_code != 200:
            raise ProtocolError(f"/scores/{address}: HTTP {resp.status_code}")
        return parse_server_page(resp.text, address)

    def fetch_scores(self, address: str) -> Tuple[float, List[Tuple[int, float]]]:
        """Current score and the (ts, score) history of one server."""
        address = canonical_address(address)
        resp = self.get(f"scores/{quote(address, safe=':.')}/json")
        if resp.status_code == 404:
            raise NotFoundError(f"no scores for {address}")
        data = self._json(resp)
        try:
            score = float(data["server"]["score"])
            history = [(int(h["ts"]), float(h["score"])) for h in data.get("history") or []]
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"/scores/{address}/json: unexpected shape ({e})") from e
        if not SCORE_MIN <= score <= SCORE_MAX:
            raise ProtocolError(f"/scores/{address}/json: score {score} outside [-100, 20]")
        return score, history

    def fetch_score_history(self, server_id: int, address: str) -> List[ScoreRow]:
        _, history = self.fetch_scores(address)
        rows = {ts: ScoreRow(int(server_id), ts, s) for ts, s in history}
        return [rows[t] for t in sorted(rows)]

    def fetch_server(self, server_id: int, address: str, *, first_seen: Optional[float] = None) -> ServerRecord:
        page = self.fetch_server_page(address)
        score, _ = self.fetch_scores(address)
        now = self.clock()
        return ServerRecord(
            server_id=int(server_id),
            address=page.address,
            zones=page.zones,
            score=score,
            netspeed=page.netspeed,
            account=page.account,
            first_seen=first_seen if first_seen is not None else now,
            last_seen=now,
            deleted=page.deleted,
        )

    def fetch_answers(self, address: str) -> List[AnswerSample]:
        address = canonical_address(address)
        resp = self.get(f"api/data/server/dns/answers/{quote(address, safe=':.')}")
        if resp.status_code == 404:
            return []
        if resp.status_code != 200:
            raise ProtocolError(f"answers/{address}: HTTP {resp.status_code}")
        data = self._json(resp)
        if not isinstance(data, dict):
            raise ProtocolError(f"answers/{address}: expected an object")
        now = self.clock()
        out: List[AnswerSample] = []
        for zone in sorted(data):
            try:
                count = int(data[zone])
            except (TypeError, ValueError) as e:
                raise ProtocolError(f"answers/{address}: count for {zone!r} not an integer") from e
            out.append(AnswerSample(address=address, zone=str(zone), answer_count=count, fetched_at=now))
        return out

    def fetch_zone_counts(self, zone: str) -> ZoneCounts:
        zone = str(zone).strip()
        if not zone:
            raise InputValidationError("empty zone code", code="invalid_zone")
        resp = self.get(f"api/data/zone/counts/{quote(zone, safe='@')}")
        if resp.status_code == 404:
            raise NotFoundError(f"unknown zone {zone!r}")
        if resp.status_code != 200:
            raise ProtocolError(f"zone/counts/{zone}: HTTP {resp.status_code}")
        data = self._json(resp)
        try:
            return ZoneCounts(
                zone=str(data.get("zone", zone)),
                servers_v4=int(data.get("servers_v4", 0)),
                servers_v6=int(data.get("servers_v6", 0)),
                aggregate_netspeed=int(data.get("aggregate_netspeed", 0)),
                fetched_at=self.clock(),
            )
        except (AttributeError, TypeError, ValueError) as e:
            raise ProtocolError(f"zone/counts/{zone}: unexpected shape ({e})") from e


def parse_server_page(html: str, address: str) -> ServerPage:
    soup = BeautifulSoup(html, "html.parser")
    root = soup.select_one("#server")
    if root is None:
        raise ProtocolError(f"/scores/{address}: server block missing")
    sid = root.get("data-server-id")
    zones = tuple(sorted({a.get_text(strip=True) for a in soup.select("td.zones a") if a.get_text(strip=True)}))
    speed_cell = soup.select_one("td.netspeed")
    try:
        netspeed = int(speed_cell.get("data-kbps")) if speed_cell is not None else 0
    except (TypeError, ValueError) as e:
        raise ProtocolError(f"/scores/{address}: netspeed not an integer") from e
    account = None
    acct_link = soup.select_one("td.account a[href]")
    if acct_link is not None:
        account = acct_link["href"].rstrip("/").rsplit("/", 1)[-1] or None
    status_cell = soup.select_one("td.status")
    deleted = bool(status_cell is not None and status_cell.get_text(strip=True).lower() == "deleted")
    return ServerPage(
        server_id=int(sid) if sid and str(sid).isdigit() else None,
        address=canonical_address(root.get("data-ip") or address),
        zones=zones,
        netspeed=netspeed,
        account=account,
        deleted=deleted,
    )


# -------------------------
# answer counters
# -------------------------
@dataclass(frozen=True)
class AnswerDelta:
    address: str
    zone: str
    start: float
    end: float
    delta: int
    reset: bool

    @property
    def rate(self) -> float:
        span = self.end - self.start
        return self.delta / span if span > 0 and not self.reset else 0.0


def answer_deltas(samples: Iterable[AnswerSample]) -> List[AnswerDelta]:
    """Per-(address, zone) increments between consecutive samples.

    Any decrease is an upstream counter reset: the interval is flagged and the
    next interval starts a new monotone segment.
    """
    series: Dict[Tuple[str, str], List[AnswerSample]] = defaultdict(list)
    for s in samples:
        series[(s.address, s.zone)].append(s)
    out: List[AnswerDelta] = []
    for (address, zone), items in sorted(series.items()):
        items.sort(key=lambda s: s.fetched_at)
        for prev, cur in zip(items, items[1:]):
            if cur.fetched_at <= prev.fetched_at:
                continue
            reset = cur.answer_count < prev.answer_count
            if reset:
                log.info("answers.counter_reset address=%s zone=%s", address, zone)
            out.append(
                AnswerDelta(
                    address=address,
                    zone=zone,
                    start=prev.fetched_at,
                    end=cur.fetched_at,
                    delta=0 if reset else cur.answer_count - prev.answer_count,
                    reset=reset,
                )
            )
    return out


def answer_rates(samples: Iterable[AnswerSample]) -> Dict[str, Any]:
    """Servers-per-second included in DNS answers, totalled per address family.

    Uses the latest non-reset interval of each (address, zone).
    """
    latest: Dict[Tuple[str, str], AnswerDelta] = {}
    for d in answer_deltas(samples):
        if d.reset:
            continue
        key = (d.address, d.zone)
        if key not in latest or d.end > latest[key].end:
            latest[key] = d
    totals = {"v4": 0.0, "v6": 0.0}
    by_zone: Dict[str, Dict[str, float]] = defaultdict(lambda: {"v4": 0.0, "v6": 0.0})
    for (address, zone), d in latest.items():
        fam = "v6" if ipaddress.ip_address(address).version == 6 else "v4"
        totals[fam] += d.rate
        by_zone[zone][fam] += d.rate
    return {"kind": "answer_rates", "v4": totals["v4"], "v6": totals["v6"], "by_zone": dict(sorted(by_zone.items()))}


# -------------------------
# score-history rows
# -------------------------
SCORE_COLUMNS = ("server_id", "ts", "score")


def write_score_rows(path: str | Path, rows: Iterable[ScoreRow]) -> int:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with p.open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(SCORE_COLUMNS)
        for r in rows:
            w.writerow([r.server_id, r.ts, repr(float(r.score))])
            n += 1
    return n


def read_score_rows(path: str | Path) -> List[ScoreRow]:
    p = Path(path)
    out: List[ScoreRow] = []
    with p.open("r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip() == "server_id":
                continue
            if len(row) < 3:
                raise InputValidationError(f"{p.name}:{lineno}: expected server_id,ts,score", code="invalid_score_row")
            try:
                sid, ts, score = int(row[0]), int(float(row[1])), float(row[2])
            except ValueError as e:
                raise InputValidationError(f"{p.name}:{lineno}: {e}", code="invalid_score_row") from e
            if not math.isfinite(score):
                raise InputValidationError(f"{p.name}:{lineno}: score not finite", code="invalid_score_row")
            out.append(ScoreRow(sid, ts, score))
    return out


# -------------------------
# enumeration
# -------------------------
@dataclass
class EnumerationCheckpoint:
    next_id: int = 1
    high_water: int = 0
    next_poll_at: Optional[float] = None
    updated_at: Optional[float] = None
    answers_next_poll_at: Optional[float] = None

    def poll_due(self, now: float) -> bool:
        return self.next_poll_at is None or now >= self.next_poll_at

    def answers_poll_due(self, now: float) -> bool:
        return self.answers_next_poll_at is None or now >= self.answers_next_poll_at

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EnumerationCheckpoint":
        return cls(
            next_id=int(d.get("next_id", 1)),
            high_water=int(d.get("high_water", 0)),
            next_poll_at=(float(d["next_poll_at"]) if d.get("next_poll_at") is not None else None),
            updated_at=(float(d["updated_at"]) if d.get("updated_at") is not None else None),
            answers_next_poll_at=(
                float(d["answers_next_poll_at"]) if d.get("answers_next_poll_at") is not None else None
            ),
        )


def enumerate_servers(
    client: PoolClient,
    store: "PoolStore",
    start_id: Optional[int] = None,
    *,
    gap_tolerance: int = 1,
    max_ids: Optional[int] = None,
    rng: Optional[random.Random] = None,
    force: bool = False,
) -> Iterator[ServerRecord]:
    """Walk server IDs upward from the checkpoint, recording every server found.

    Stops after `gap_tolerance` consecutive unallocated IDs and arms the
    next-ID poller one jittered `id_poll_interval` later. The checkpoint is
    saved after every ID, so a crash never causes completed IDs to be fetched
    again. An explicit start_id below the checkpoint is raised to it.

    While the poller is armed and its deadline has not passed, nothing is
    fetched unless `force` is set.
    """
    rng = rng or random.Random()
    cp = store.checkpoint
    if not force and not cp.poll_due(client.clock()):
        log.info("enumerate.not_due next_poll_at=%.0f next_id=%d", cp.next_poll_at, cp.next_id)
        return
    sid = max(int(start_id or 1), cp.next_id)
    if sid < 1:
        raise InputValidationError("start_id must be >= 1", code="invalid_start_id")
    first_miss: Optional[int] = None
    misses = 0
    fetched = 0
    at_gap = False
    while max_ids is None or fetched < max_ids:
        try:
            ip = client.resolve_id(sid)
            if ip is None:
                first_miss = sid if first_miss is None else first_miss
                misses += 1
                if misses >= max(1, gap_tolerance):
                    at_gap = True
                    break
                sid += 1
                continue
            known = store.servers.get(sid)
            rec = client.fetch_server(sid, ip, first_seen=known.first_seen if known else None)
        except TransportError:
            store.save_checkpoint(replace(cp, next_id=first_miss or sid, next_poll_at=None, updated_at=client.clock()))
            log.warning("enumerate.interrupted next_id=%d", first_miss or sid)
            raise
        store.record_server(rec)
        fetched += 1
        first_miss, misses = None, 0
        cp = replace(cp, next_id=sid + 1, high_water=max(cp.high_water, sid), next_poll_at=None, updated_at=client.clock())
        store.save_checkpoint(cp)
        sid += 1
        yield rec

    now = client.clock()
    next_id = first_miss if first_miss is not None else sid
    if not at_gap:
        # stopped by max_ids, not by a gap: the poller stays unarmed
        store.save_checkpoint(replace(cp, next_id=next_id, next_poll_at=None, updated_at=now))
        log.info("enumerate.paused fetched=%d next_id=%d", fetched, next_id)
        return
    interval = client.policy.id_poll_interval_s * rng.uniform(0.5, 1.5)
    store.save_checkpoint(replace(cp, next_id=next_id, next_poll_at=now + interval, updated_at=now))
    log.info("enumerate.done fetched=%d next_id=%d next_poll_in_s=%.0f", fetched, next_id, interval)



def poll_answers(
    client: PoolClient,
    store: "PoolStore",
    targets: Iterable[str],
    *,
    force: bool = False,
) -> List[AnswerSample]:
    """Fetch and record DNS answer counters for `targets`, at most once per answers poll interval.

    The counters refresh on the website's own schedule, so a poll before
    `answers_next_poll_at` fetches nothing and returns an empty list. The next
    deadline is armed only after every target was fetched.
    """
    now = client.clock()
    cp = store.checkpoint
    if not force and not cp.answers_poll_due(now):
        log.info("answers.not_due next_poll_at=%.0f", cp.answers_next_poll_at)
        return []
    got: List[AnswerSample] = []
    for address in targets:
        samples = client.fetch_answers(address)
        store.record_answers(samples)
        got.extend(samples)
    done = client.clock()
    interval = client.policy.answers_poll_interval_s
    store.save_checkpoint(replace(store.checkpoint, answers_next_poll_at=done + interval, updated_at=done))
    log.info("answers.done samples=%d next_poll_in_s=%.0f", len(got), interval)
    return got
