from __future__ import annotations

import ipaddress
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple

from jsonschema import Draft202012Validator

from .errors import IncomparableFingerprints, InputValidationError
from .hashutil import canonical_json
from .wire import NtpPacket, NtpShort, NtpTimestamp, refid_label

DEFAULT_WINDOW_S = 60.0

FINGERPRINT_RECORD_SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": "https://poolwatch.invalid/schemas/fingerprint_record.schema.json",
    "title": "Fingerprint record",
    "type": "object",
    "additionalProperties": False,
    "required": [
        "address",
        "collected_at",
        "version",
        "stratum",
        "refid_hex",
        "precision",
        "poll",
        "reference_ts_hex",
        "root_dispersion_hex",
    ],
    "properties": {
        "address": {"type": "string", "minLength": 2},
        "collected_at": {"type": "number"},
        "version": {"type": "integer", "minimum": 0, "maximum": 7},
        "stratum": {"type": "integer", "minimum": 0, "maximum": 255},
        "refid_hex": {"type": "string", "pattern": "^[0-9a-f]{8}$"},
        "precision": {"type": "integer", "minimum": -128, "maximum": 127},
        "poll": {"type": "integer", "minimum": -128, "maximum": 127},
        "reference_ts_hex": {"type": "string", "pattern": "^[0-9a-f]{16}$"},
        "root_dispersion_hex": {"type": "string", "pattern": "^[0-9a-f]{8}$"},
        "leap": {"type": "integer", "minimum": 0, "maximum": 3},
        "ttl": {"type": ["integer", "null"], "minimum": 0, "maximum": 255},
        "dscp": {"type": ["integer", "null"], "minimum": 0, "maximum": 255},
    },
}

_RECORD_VALIDATOR = Draft202012Validator(FINGERPRINT_RECORD_SCHEMA)


def canonical_address(address: str) -> str:
    try:
        return str(ipaddress.ip_address(str(address).strip()))
    except ValueError as e:
        raise InputValidationError(f"not an IP address: {address!r}", code="invalid_address") from e


def address_sort_key(address: str) -> Tuple[int, int]:
    ip = ipaddress.ip_address(address)
    return (ip.version, int(ip))


@dataclass(frozen=True)
class WeakHints:
    """IP-layer values seen on the response; unreliable across paths."""

    ip_ttl_or_hoplimit: Optional[int] = None
    dscp_or_trafficclass: Optional[int] = None


@dataclass(frozen=True)
class Fingerprint:
    address: str
    collected_at: float
    version: int
    stratum: int
    refid: bytes
    precision: int
    poll: int
    reference_ts: NtpTimestamp
    root_dispersion: NtpShort
    leap: int = 0
    weak_hints: Optional[WeakHints] = None

    @classmethod
    def from_packet(
        cls,
        address: str,
        packet: NtpPacket,
        collected_at: float,
        weak_hints: Optional[WeakHints] = None,
    ) -> "Fingerprint":
        return cls(
            address=canonical_address(address),
            collected_at=float(collected_at),
            version=packet.version,
            stratum=packet.stratum,
            refid=bytes(packet.refid),
            precision=packet.precision,
            poll=packet.poll,
            reference_ts=packet.reference_ts,
            root_dispersion=packet.root_dispersion,
            leap=packet.leap,
            weak_hints=weak_hints,
        )

    @property
    def is_stratum1(self) -> bool:
        return self.stratum == 1

    def to_record(self) -> Dict[str, Any]:
        rec: Dict[str, Any] = {
            "address": self.address,
            "collected_at": self.collected_at,
            "version": self.version,
            "stratum": self.stratum,
            "refid_hex": self.refid.hex(),
            "precision": self.precision,
            "poll": self.poll,
            "reference_ts_hex": self.reference_ts.hex(),
            "root_dispersion_hex": self.root_dispersion.hex(),
            "leap": self.leap,
        }
        if self.weak_hints is not None:
            rec["ttl"] = self.weak_hints.ip_ttl_or_hoplimit
            rec["dscp"] = self.weak_hints.dscp_or_trafficclass
        return rec

    @classmethod
    def from_record(cls, rec: Dict[str, Any]) -> "Fingerprint":
        errors = sorted(_RECORD_VALIDATOR.iter_errors(rec), key=lambda e: list(e.path))
        if errors:
            raise InputValidationError(f"fingerprint record: {errors[0].message}", code="invalid_fingerprint_record")
        hints = None
        if "ttl" in rec or "dscp" in rec:
            hints = WeakHints(rec.get("ttl"), rec.get("dscp"))
        return cls(
            address=canonical_address(rec["address"]),
            collected_at=float(rec["collected_at"]),
            version=int(rec["version"]),
            stratum=int(rec["stratum"]),
            refid=bytes.fromhex(rec["refid_hex"]),
            precision=int(rec["precision"]),
            poll=int(rec["poll"]),
            reference_ts=NtpTimestamp.from_hex(rec["reference_ts_hex"]),
            root_dispersion=NtpShort.from_hex(rec["root_dispersion_hex"]),
            leap=int(rec.get("leap", 0)),
            weak_hints=hints,
        )


@dataclass(frozen=True)
class MatchKey:
    """Which fingerprint fields must be equal for two responses to match.

    The default uses the strong fields only. poll and the IP-layer hints are
    collected but stay out of the key unless explicitly switched on.
    """

    use_poll: bool = False
    use_ttl: bool = False
    use_dscp: bool = False
    use_root_dispersion: bool = False
    use_leap: bool = False

    STRONG_FIELDS = ("version", "stratum", "refid", "precision", "reference_ts")

    @property
    def fields(self) -> Tuple[str, ...]:
        out = list(self.STRONG_FIELDS)
        if self.use_poll:
            out.append("poll")
        if self.use_root_dispersion:
            out.append("root_dispersion")
        if self.use_leap:
            out.append("leap")
        if self.use_ttl:
            out.append("ttl")
        if self.use_dscp:
            out.append("dscp")
        return tuple(out)

    @classmethod
    def from_flags(cls, flags: Iterable[str]) -> "MatchKey":
        names = {str(f).strip().lower() for f in flags if str(f).strip()}
        unknown = names - {"poll", "ttl", "dscp", "root_dispersion", "leap"}
        if unknown:
            raise InputValidationError(f"unknown match fields: {sorted(unknown)}", code="invalid_match_key")
        return cls(
            use_poll="poll" in names,
            use_ttl="ttl" in names,
            use_dscp="dscp" in names,
            use_root_dispersion="root_dispersion" in names,
            use_leap="leap" in names,
        )

    def tuple_for(self, fp: Fingerprint) -> Tuple[Any, ...]:
        hints = fp.weak_hints or WeakHints()
        values = {
            "version": fp.version,
            "stratum": fp.stratum,
            "refid": fp.refid,
            "precision": fp.precision,
            "reference_ts": fp.reference_ts.as_int(),
            "poll": fp.poll,
            "root_dispersion": fp.root_dispersion.as_int(),
            "leap": fp.leap,
            "ttl": hints.ip_ttl_or_hoplimit,
            "dscp": hints.dscp_or_trafficclass,
        }
        return tuple(values[name] for name in self.fields)


DEFAULT_MATCH_KEY = MatchKey()


def fingerprints_match(
    a: Fingerprint,
    b: Fingerprint,
    key: MatchKey = DEFAULT_MATCH_KEY,
    window_s: float = DEFAULT_WINDOW_S,
) -> bool:
    """True iff every field of `key` is equal.

    Raises IncomparableFingerprints when the two responses were collected more
    than `window_s` apart; that is not the same as a mismatch.
    """
    if abs(a.collected_at - b.collected_at) > window_s:
        raise IncomparableFingerprints(
            f"{a.address} and {b.address} collected {abs(a.collected_at - b.collected_at):.1f}s apart (window {window_s}s)"
        )
    return key.tuple_for(a) == key.tuple_for(b)


def write_fingerprints(path: str | Path, fps: Iterable[Fingerprint]) -> int:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(fps, key=lambda f: (address_sort_key(f.address), f.collected_at))
    with p.open("w", encoding="utf-8", newline="\n") as f:
        for fp in ordered:
            f.write(canonical_json(fp.to_record()) + "\n")
    return len(ordered)


def iter_fingerprints(path: str | Path) -> Iterator[Fingerprint]:
    p = Path(path)
    for lineno, ln in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not ln.strip():
            continue
        try:
            rec = json.loads(ln)
        except json.JSONDecodeError as e:
            raise InputValidationError(f"{p.name}:{lineno}: {e.msg}", code="invalid_jsonl") from e
        yield Fingerprint.from_record(rec)


def read_fingerprints(path: str | Path) -> List[Fingerprint]:
    return list(iter_fingerprints(path))


def stratum1_sources(fps: Iterable[Fingerprint]) -> List[Dict[str, Any]]:
    """Clock-source labels of stratum-1 responders, most common first.

    Each address is counted once (its first stratum-1 response).
    """
    seen: Dict[str, str] = {}
    for fp in sorted(fps, key=lambda f: (address_sort_key(f.address), f.collected_at)):
        if fp.stratum != 1 or fp.address in seen:
            continue
        lab = refid_label(fp.stratum, fp.refid)
        seen[fp.address] = lab.label or lab.raw_hex
    counts = Counter(seen.values())
    total = sum(counts.values())
    return [
        {"refid": name, "servers": n, "fraction": (n / total if total else 0.0)}
        for name, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    ]
