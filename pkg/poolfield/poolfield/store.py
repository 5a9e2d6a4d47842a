"""Append-only state directory for scraped pool data.

Layout of a state directory:

    events.jsonl      hash-chained event log (never rewritten)
    snapshot.json     periodic materialized view + position in the log
    checkpoint.json   enumeration progress (atomic replace)
    state.lock        present while a writer holds the directory

Replaying events.jsonl from the start reconstructs exactly the state that
snapshot.json + the events after it describe.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple

from .errors import InputValidationError, StateLockedError
from .hashutil import canonical_json, sha256_str
from .pool_client import AnswerSample, EnumerationCheckpoint, ServerRecord, ZoneCounts

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
EVENT_KINDS = ("server_seen", "server_changed", "answers_sampled", "zone_counts")

EVENTS_FILE = "events.jsonl"
SNAPSHOT_FILE = "snapshot.json"
CHECKPOINT_FILE = "checkpoint.json"
LOCK_FILE = "state.lock"


def _hash_event(prev_hash: Optional[str], body: Dict[str, Any]) -> str:
    return sha256_str((prev_hash or "") + "|" + canonical_json(body))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _lock_holder(lock: Path) -> Optional[int]:
    """PID written into `lock`, or None when the file is unreadable or empty."""
    try:
        text = lock.read_text(encoding="utf-8").strip()
    except OSError:
        return None
    return int(text) if text.isdigit() else None


def _pid_alive(pid: int) -> bool:
    if pid <= 0:
        return False
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    except OSError:
        return False
    return True


def iter_events(path: str | Path) -> Iterator[Dict[str, Any]]:
    p = Path(path)
    if not p.exists():
        return
    with p.open("r", encoding="utf-8") as f:
        for ln in f:
            if ln.strip():
                yield json.loads(ln)


def verify_chain(path: str | Path) -> Tuple[bool, int]:
    """Verify hash-chain integrity. Returns (ok, events_count)."""
    prev: Optional[str] = None
    n = 0
    for rec in iter_events(path):
        n += 1
        if rec.get("format_version") != FORMAT_VERSION or rec.get("kind") not in EVENT_KINDS:
            return False, n
        if (rec.get("prev_hash") or None) != prev:
            return False, n
        body = dict(rec)
        ev_hash = body.pop("event_hash", None)
        if str(ev_hash) != _hash_event(prev, body):
            return False, n
        prev = str(ev_hash)
    return True, n


@dataclass
class StoreState:
    """Materialized view of the event log."""

    servers: Dict[int, ServerRecord] = field(default_factory=dict)
    answers: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    zones: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    event_count: int = 0
    last_event_hash: Optional[str] = None

    def apply(self, ev: Dict[str, Any]) -> None:
        kind = ev.get("kind")
        payload = ev.get("payload") or {}
        if kind == "server_seen":
            rec = ServerRecord.from_record(payload["server"])
            self.servers[rec.server_id] = rec
        elif kind == "server_changed":
            sid = int(payload["server_id"])
            cur = self.servers[sid].to_record()
            cur.update(payload["changes"])
            self.servers[sid] = ServerRecord.from_record(cur)
        elif kind == "answers_sampled":
            for s in payload.get("samples") or []:
                self.answers[f"{s['address']}|{s['zone']}"] = {
                    "answer_count": int(s["answer_count"]),
                    "fetched_at": float(s["fetched_at"]),
                }
        elif kind == "zone_counts":
            self.zones[str(payload["zone"])] = dict(payload)
        else:
            raise InputValidationError(f"unknown event kind {kind!r}", code="corrupt_event_log")
        self.event_count += 1
        self.last_event_hash = ev.get("event_hash")

    def to_snapshot(self, checkpoint: EnumerationCheckpoint) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "event_count": self.event_count,
            "last_event_hash": self.last_event_hash,
            "servers": {str(k): v.to_record() for k, v in sorted(self.servers.items())},
            "answers": dict(sorted(self.answers.items())),
            "zones": dict(sorted(self.zones.items())),
            "checkpoint": checkpoint.to_dict(),
        }

    @classmethod
    def from_snapshot(cls, snap: Dict[str, Any]) -> "StoreState":
        if snap.get("format_version") != FORMAT_VERSION:
            raise InputValidationError(
                f"snapshot format_version {snap.get('format_version')!r} not supported", code="unsupported_format"
            )
        st = cls()
        st.servers = {int(k): ServerRecord.from_record(v) for k, v in (snap.get("servers") or {}).items()}
        st.answers = dict(snap.get("answers") or {})
        st.zones = dict(snap.get("zones") or {})
        st.event_count = int(snap.get("event_count", 0))
        st.last_event_hash = snap.get("last_event_hash")
        return st


def replay_events(events: Iterable[Dict[str, Any]]) -> StoreState:
    st = StoreState()
    for ev in events:
        st.apply(ev)
    return st


def _diff(old: ServerRecord, new: ServerRecord) -> Dict[str, Any]:
    a, b = old.to_record(), new.to_record()
    fixed = ("server_id", "first_seen", "last_seen", "monitor_only")
    changes = {k: b[k] for k in b if k not in fixed and a.get(k) != b[k]}
    # last_seen only moves forward
    if new.last_seen > old.last_seen:
        changes["last_seen"] = new.last_seen
    return changes


class PoolStore:
    """Single-writer store over a state directory.

    Opening for write takes `state.lock`; `PoolStore.read(state_dir)` loads a
    read-only view without the lock.
    """

    def __init__(self, state_dir: str | Path, *, snapshot_every: int = 100, readonly: bool = False) -> None:
        self.state_dir = Path(state_dir)
        self.snapshot_every = max(1, int(snapshot_every))
        self.readonly = readonly
        self._locked = False
        if not readonly:
            self.state_dir.mkdir(parents=True, exist_ok=True)
            self._acquire_lock()
        self.state = self._load()
        self.checkpoint = self._load_checkpoint()
        self._since_snapshot = 0

    @classmethod
    def read(cls, state_dir: str | Path) -> "PoolStore":
        return cls(state_dir, readonly=True)

    @property
    def events_path(self) -> Path:
        return self.state_dir / EVENTS_FILE

    @property
    def servers(self) -> Dict[int, ServerRecord]:
        return self.state.servers

    # -------------------------
    # lifecycle
    # -------------------------
    def _acquire_lock(self) -> None:
        lock = self.state_dir / LOCK_FILE
        for attempt in (0, 1):
            try:
                fd = os.open(str(lock), os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
            except FileExistsError as e:
                holder = _lock_holder(lock)
                if attempt == 0 and holder is not None and not _pid_alive(holder):
                    log.warning("store.stale_lock path=%s pid=%d; taking over", lock, holder)
                    lock.unlink(missing_ok=True)
                    continue
                raise StateLockedError(f"{lock} exists; another writer holds {self.state_dir}") from e
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                f.write(str(os.getpid()))
            self._locked = True
            return

    def close(self) -> None:
        if self.readonly:
            return
        if self._since_snapshot:
            self.write_snapshot()
        if self._locked:
            try:
                (self.state_dir / LOCK_FILE).unlink()
            except FileNotFoundError:
                pass
            self._locked = False

    def __enter__(self) -> "PoolStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _load(self) -> StoreState:
        snap_path = self.state_dir / SNAPSHOT_FILE
        st = StoreState()
        if snap_path.exists():
            st = StoreState.from_snapshot(json.loads(snap_path.read_text(encoding="utf-8")))
        skip = st.event_count
        for i, ev in enumerate(iter_events(self.events_path)):
            if i < skip:
                continue
            st.apply(ev)
        return st

    def _load_checkpoint(self) -> EnumerationCheckpoint:
        p = self.state_dir / CHECKPOINT_FILE
        if not p.exists():
            return EnumerationCheckpoint()
        data = json.loads(p.read_text(encoding="utf-8"))
        if data.get("format_version") != FORMAT_VERSION:
            raise InputValidationError("checkpoint format_version not supported", code="unsupported_format")
        return EnumerationCheckpoint.from_dict(data)

    # -------------------------
    # writes
    # -------------------------
    def _append(self, kind: str, ts: float, payload: Dict[str, Any]) -> Dict[str, Any]:
        if self.readonly:
            raise StateLockedError("store opened read-only")
        prev = self.state.last_event_hash
        body = {"format_version": FORMAT_VERSION, "kind": kind, "ts": float(ts), "prev_hash": prev, "payload": payload}
        record = dict(body)
        record["event_hash"] = _hash_event(prev, body)
        with self.events_path.open("a", encoding="utf-8", newline="\n") as f:
            f.write(canonical_json(record) + "\n")
        self.state.apply(record)
        self._since_snapshot += 1
        if self._since_snapshot >= self.snapshot_every:
            self.write_snapshot()
        return record

    def record_server(self, rec: ServerRecord) -> Optional[Dict[str, Any]]:
        """Log the first sighting or the changed fields of a server.

        Returns the appended event, or None when nothing changed.
        """
        old = self.state.servers.get(rec.server_id)
        if old is None:
            return self._append("server_seen", rec.last_seen, {"server": rec.to_record()})
        changes = _diff(old, rec)
        if not changes:
            return None
        return self._append("server_changed", rec.last_seen, {"server_id": rec.server_id, "changes": changes})

    def record_answers(self, samples: List[AnswerSample]) -> Optional[Dict[str, Any]]:
        if not samples:
            return None
        ts = max(s.fetched_at for s in samples)
        payload = {
            "samples": [
                {"address": s.address, "zone": s.zone, "answer_count": s.answer_count, "fetched_at": s.fetched_at}
                for s in samples
            ]
        }
        return self._append("answers_sampled", ts, payload)

    def record_zone_counts(self, zc: ZoneCounts) -> Dict[str, Any]:
        return self._append(
            "zone_counts",
            zc.fetched_at,
            {
                "zone": zc.zone,
                "servers_v4": zc.servers_v4,
                "servers_v6": zc.servers_v6,
                "aggregate_netspeed": zc.aggregate_netspeed,
                "fetched_at": zc.fetched_at,
            },
        )

    def save_checkpoint(self, cp: EnumerationCheckpoint) -> None:
        if self.readonly:
            raise StateLockedError("store opened read-only")
        self.checkpoint = cp
        data = {"format_version": FORMAT_VERSION, **cp.to_dict()}
        _atomic_write(self.state_dir / CHECKPOINT_FILE, canonical_json(data) + "\n")

    def write_snapshot(self) -> Path:
        p = self.state_dir / SNAPSHOT_FILE
        _atomic_write(p, canonical_json(self.state.to_snapshot(self.checkpoint)) + "\n")
        self._since_snapshot = 0
        log.debug("store.snapshot events=%d", self.state.event_count)
        return p

    # -------------------------
    # reads
    # -------------------------
    def iter_answer_samples(self) -> Iterator[AnswerSample]:
        for ev in iter_events(self.events_path):
            if ev.get("kind") != "answers_sampled":
                continue
            for s in ev["payload"]["samples"]:
                yield AnswerSample(s["address"], s["zone"], int(s["answer_count"]), float(s["fetched_at"]))

    def zone_counts(self) -> List[ZoneCounts]:
        return [
            ZoneCounts(
                zone=z,
                servers_v4=int(d["servers_v4"]),
                servers_v6=int(d["servers_v6"]),
                aggregate_netspeed=int(d["aggregate_netspeed"]),
                fetched_at=float(d["fetched_at"]),
            )
            for z, d in sorted(self.state.zones.items())
        ]

    def verify(self) -> Tuple[bool, int]:
        return verify_chain(self.events_path)
