"""48-byte NTP header codec and NTP-era timestamp arithmetic.

Only era 0 (1900-01-01 .. 2036-02-07) is supported. Bytes after the first 48
(extension fields, MACs) are ignored on decode.
"""
from __future__ import annotations

import enum
import secrets
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

from .errors import FieldRangeError, TimestampRangeError, TruncatedPacketError

NTP_HEADER_LEN = 48
NTP_UNIX_OFFSET = 2_208_988_800  # 25,567 days between 1900-01-01 and 1970-01-01
_U32 = 0xFFFFFFFF
_U16 = 0xFFFF

_HEADER = struct.Struct("!BBbbII4sQQQQ")


class NtpLeap(enum.IntEnum):
    NORMAL = 0
    INSERT = 1
    DELETE = 2
    UNSYNCHRONIZED = 3


class NtpMode(enum.IntEnum):
    RESERVED = 0
    SYMMETRIC_ACTIVE = 1
    SYMMETRIC_PASSIVE = 2
    CLIENT = 3
    SERVER = 4
    BROADCAST = 5
    CONTROL = 6
    PRIVATE = 7


SUPPORTED_VERSIONS = frozenset({1, 2, 3, 4})

# Clock-source refids observed at stratum 1 across the pool, plus the common
# RFC 5905 reference names.
KNOWN_CLOCK_SOURCES = {
    "GPS": "Global Positioning System",
    "GNSS": "Global Navigation Satellite System",
    "PPS": "pulse-per-second signal",
    "PPS0": "pulse-per-second signal, device 0",
    "kPPS": "kernel pulse-per-second discipline",
    "MRS": "multi reference source (Meinberg)",
    "MBGh": "Meinberg GPS receiver",
    "PTP0": "IEEE 1588 precision time protocol, device 0",
    "PHC0": "PTP hardware clock, device 0",
    "PTP": "IEEE 1588 precision time protocol",
    "DCF": "DCF77 longwave (Germany)",
    "MSF": "MSF longwave (UK)",
    "WWVB": "WWVB longwave (US)",
    "GAL": "Galileo positioning system",
    "GOES": "Geostationary Orbit Environment Satellite",
    "ATOM": "atomic clock",
    "LOCL": "uncalibrated local clock",
    "CDMA": "CDMA mobile network",
    "GLN": "GLONASS",
    "IRIG": "Inter-Range Instrumentation Group",
    "NIST": "NIST telephone modem",
    "ACTS": "NIST telephone modem",
    "USNO": "USNO telephone modem",
    "SHM": "shared memory driver",
}


def _check_range(name: str, value: int, lo: int, hi: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < lo or value > hi:
        raise FieldRangeError(f"{name}={value!r} not in [{lo}, {hi}]")
    return value


@dataclass(frozen=True, order=True)
class NtpTimestamp:
    """64-bit NTP timestamp: 32-bit seconds since 1900 plus a 32-bit binary fraction."""

    seconds: int = 0
    fraction: int = 0

    def __post_init__(self) -> None:
        _check_range("timestamp.seconds", self.seconds, 0, _U32)
        _check_range("timestamp.fraction", self.fraction, 0, _U32)

    def as_int(self) -> int:
        return (self.seconds << 32) | self.fraction

    @classmethod
    def from_int(cls, value: int) -> "NtpTimestamp":
        return cls((value >> 32) & _U32, value & _U32)

    def to_bytes(self) -> bytes:
        return struct.pack("!II", self.seconds, self.fraction)

    @classmethod
    def from_bytes(cls, b: bytes) -> "NtpTimestamp":
        if len(b) < 8:
            raise TruncatedPacketError(f"timestamp needs 8 bytes, got {len(b)}")
        s, f = struct.unpack("!II", bytes(b[:8]))
        return cls(s, f)

    def hex(self) -> str:
        return f"{self.as_int():016x}"

    @classmethod
    def from_hex(cls, s: str) -> "NtpTimestamp":
        return cls.from_int(int(s, 16))

    def to_unix_float(self) -> float:
        return (self.seconds - NTP_UNIX_OFFSET) + self.fraction / 2**32


@dataclass(frozen=True)
class NtpShort:
    """32-bit NTP short format (16.16 fixed point)."""

    seconds: int = 0
    fraction: int = 0

    def __post_init__(self) -> None:
        _check_range("short.seconds", self.seconds, 0, _U16)
        _check_range("short.fraction", self.fraction, 0, _U16)

    def as_int(self) -> int:
        return (self.seconds << 16) | self.fraction

    @classmethod
    def from_int(cls, value: int) -> "NtpShort":
        return cls((value >> 16) & _U16, value & _U16)

    def to_bytes(self) -> bytes:
        return struct.pack("!HH", self.seconds, self.fraction)

    @classmethod
    def from_bytes(cls, b: bytes) -> "NtpShort":
        if len(b) < 4:
            raise TruncatedPacketError(f"short needs 4 bytes, got {len(b)}")
        s, f = struct.unpack("!HH", bytes(b[:4]))
        return cls(s, f)

    def hex(self) -> str:
        return f"{self.as_int():08x}"

    @classmethod
    def from_hex(cls, s: str) -> "NtpShort":
        return cls.from_int(int(s, 16))

    def to_seconds(self) -> float:
        return self.seconds + self.fraction / 2**16


@dataclass(frozen=True)
class NtpPacket:
    leap: int = 0
    version: int = 0
    mode: int = 0
    stratum: int = 0
    poll: int = 0
    precision: int = 0
    root_delay: NtpShort = field(default_factory=NtpShort)
    root_dispersion: NtpShort = field(default_factory=NtpShort)
    refid: bytes = b"\x00\x00\x00\x00"
    reference_ts: NtpTimestamp = field(default_factory=NtpTimestamp)
    origin_ts: NtpTimestamp = field(default_factory=NtpTimestamp)
    receive_ts: NtpTimestamp = field(default_factory=NtpTimestamp)
    transmit_ts: NtpTimestamp = field(default_factory=NtpTimestamp)

    def is_supported_version(self) -> bool:
        return self.version in SUPPORTED_VERSIONS

    def validate(self) -> None:
        _check_range("leap", self.leap, 0, 3)
        _check_range("version", self.version, 0, 7)
        _check_range("mode", self.mode, 0, 7)
        _check_range("stratum", self.stratum, 0, 255)
        _check_range("poll", self.poll, -128, 127)
        _check_range("precision", self.precision, -128, 127)
        if not isinstance(self.refid, (bytes, bytearray)) or len(self.refid) != 4:
            raise FieldRangeError(f"refid must be 4 bytes, got {self.refid!r}")


def encode_packet(p: NtpPacket) -> bytes:
    p.validate()
    first = (p.leap << 6) | (p.version << 3) | p.mode
    out = _HEADER.pack(
        first,
        p.stratum,
        p.poll,
        p.precision,
        p.root_delay.as_int(),
        p.root_dispersion.as_int(),
        bytes(p.refid),
        p.reference_ts.as_int(),
        p.origin_ts.as_int(),
        p.receive_ts.as_int(),
        p.transmit_ts.as_int(),
    )
    assert len(out) == NTP_HEADER_LEN
    return out


def decode_packet(b: bytes) -> NtpPacket:
    if len(b) < NTP_HEADER_LEN:
        raise TruncatedPacketError(f"need {NTP_HEADER_LEN} bytes, got {len(b)}")
    first, stratum, poll, precision, rdelay, rdisp, refid, ref, org, rec, xmt = _HEADER.unpack(
        bytes(b[:NTP_HEADER_LEN])
    )
    return NtpPacket(
        leap=first >> 6,
        version=(first >> 3) & 0x7,
        mode=first & 0x7,
        stratum=stratum,
        poll=poll,
        precision=precision,
        root_delay=NtpShort.from_int(rdelay),
        root_dispersion=NtpShort.from_int(rdisp),
        refid=refid,
        reference_ts=NtpTimestamp.from_int(ref),
        origin_ts=NtpTimestamp.from_int(org),
        receive_ts=NtpTimestamp.from_int(rec),
        transmit_ts=NtpTimestamp.from_int(xmt),
    )


@dataclass(frozen=True)
class RefidLabel:
    """Decoded reference identifier.

    kind is "clock" for a printable stratum 0/1 source label, "nonstandard" for
    a stratum 0/1 refid with non-printable bytes, and "peer" for stratum >= 2
    where the value is an upstream IPv4 address or an IPv6 address hash.
    """

    kind: str
    label: Optional[str]
    raw_hex: str
    description: Optional[str] = None

    @property
    def is_clock(self) -> bool:
        return self.kind == "clock"


def refid_label(stratum: int, refid: bytes) -> RefidLabel:
    raw = bytes(refid)
    raw_hex = raw.hex()
    if stratum >= 2:
        return RefidLabel(kind="peer", label=None, raw_hex=raw_hex)
    text = raw.rstrip(b"\x00")
    if text and all(0x20 <= c < 0x7F for c in text):
        label = text.decode("ascii")
        return RefidLabel(kind="clock", label=label, raw_hex=raw_hex, description=KNOWN_CLOCK_SOURCES.get(label))
    return RefidLabel(kind="nonstandard", label=raw_hex, raw_hex=raw_hex)


def unix_to_ntp(unix_seconds: int) -> NtpTimestamp:
    secs = int(unix_seconds) + NTP_UNIX_OFFSET
    if secs < 0 or secs > _U32:
        raise TimestampRangeError(f"unix time {unix_seconds} outside NTP era 0")
    return NtpTimestamp(secs, 0)


def ntp_to_unix(ts: NtpTimestamp) -> int:
    return ts.seconds - NTP_UNIX_OFFSET


def unix_float_to_ntp(unix_seconds: float) -> NtpTimestamp:
    whole = int(unix_seconds // 1)
    frac = int(round((unix_seconds - whole) * 2**32))
    if frac > _U32:
        whole, frac = whole + 1, 0
    base = unix_to_ntp(whole)
    return NtpTimestamp(base.seconds, frac)


def datetime_to_ntp(dt: datetime) -> NtpTimestamp:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return unix_to_ntp(int(dt.timestamp() // 1))


def ntp_to_datetime(ts: NtpTimestamp) -> datetime:
    return datetime.fromtimestamp(ntp_to_unix(ts), tz=timezone.utc)


def random_transmit_timestamp(now_unix: float) -> NtpTimestamp:
    """Current seconds with a random fraction, used to correlate replies to probes."""
    base = unix_to_ntp(int(now_unix // 1))
    return NtpTimestamp(base.seconds, secrets.randbits(32))


def client_probe(transmit: NtpTimestamp) -> NtpPacket:
    return NtpPacket(leap=int(NtpLeap.NORMAL), version=4, mode=int(NtpMode.CLIENT), transmit_ts=transmit)
