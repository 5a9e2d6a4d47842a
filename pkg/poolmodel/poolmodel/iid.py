"""IPv6 interface-identifier classes.

Rules are tried in a fixed order and the first match wins:

    EUI64      bytes 3-4 of the IID are ff:fe (SLAAC from a MAC)
    EmbedIPv4  the IID spells an IPv4 address, either as 32 low bits under
               zero high bits or as four decimal-looking hextets (::192:0:2:1)
    EmbedPort  low 16 bits are the NTP port (0x7b, or 0x123 read as decimal)
               and at most 8 other bits are set
    LowByte    the top 48 bits of the IID are zero
    Privacy    at least `privacy_min_bits` bits set and no all-zero hextet
    Other      anything else
"""
from __future__ import annotations

import enum
import ipaddress
from collections import Counter
from typing import Any, Dict, Iterable, Optional

import netaddr

from poolfield.errors import InputValidationError

DEFAULT_PRIVACY_MIN_BITS = 28
_NTP_PORT_LOW16 = (0x007B, 0x0123)


class IidClass(str, enum.Enum):
    LOW_BYTE = "LowByte"
    EMBED_IPV4 = "EmbedIPv4"
    EMBED_PORT = "EmbedPort"
    EUI64 = "EUI64"
    PRIVACY = "Privacy"
    OTHER = "Other"


def iid_of(address: str) -> int:
    ip = ipaddress.ip_address(address)
    if ip.version != 6:
        raise InputValidationError(f"{address} is not IPv6", code="invalid_address")
    return int(ip) & ((1 << 64) - 1)


def _hextets(iid: int) -> list[int]:
    return [(iid >> shift) & 0xFFFF for shift in (48, 32, 16, 0)]


def _is_eui64(iid: int) -> bool:
    return (iid >> 24) & 0xFFFF == 0xFFFE


def _embeds_ipv4(iid: int) -> bool:
    if iid >> 32 == 0:
        first = (iid >> 24) & 0xFF
        return 1 <= first <= 223
    groups = _hextets(iid)
    digits = [f"{g:x}" for g in groups]
    if not all(d.isdigit() and int(d) <= 255 for d in digits):
        return False
    return int(digits[0]) > 0


def _embeds_port(iid: int) -> bool:
    return (iid & 0xFFFF) in _NTP_PORT_LOW16 and bin(iid >> 16).count("1") <= 8


def classify_iid(address: str, *, privacy_min_bits: int = DEFAULT_PRIVACY_MIN_BITS) -> IidClass:
    iid = iid_of(address)
    if _is_eui64(iid):
        return IidClass.EUI64
    if _embeds_ipv4(iid):
        return IidClass.EMBED_IPV4
    if _embeds_port(iid):
        return IidClass.EMBED_PORT
    if iid >> 16 == 0:
        return IidClass.LOW_BYTE
    if bin(iid).count("1") >= privacy_min_bits and 0 not in _hextets(iid):
        return IidClass.PRIVACY
    return IidClass.OTHER


def embedded_mac(address: str) -> Optional[str]:
    """MAC address behind an EUI-64 IID, or None for any other class."""
    iid = iid_of(address)
    if not _is_eui64(iid):
        return None
    words = netaddr.EUI(iid ^ (1 << 57), version=64).words
    octets = words[:3] + words[5:]
    return str(netaddr.EUI(":".join(f"{b:02x}" for b in octets), dialect=netaddr.mac_unix_expanded))


def iid_report(
    addresses: Iterable[str],
    active: Optional[Iterable[str]] = None,
    *,
    privacy_min_bits: int = DEFAULT_PRIVACY_MIN_BITS,
) -> Dict[str, Any]:
    """IID class counts and percentages for all IPv6 addresses and the active subset."""
    all_v6 = sorted({a for a in addresses if ipaddress.ip_address(a).version == 6})
    active_set = set(active) if active is not None else set(all_v6)
    classes = {a: classify_iid(a, privacy_min_bits=privacy_min_bits) for a in all_v6}

    def _table(members: list[str]) -> Dict[str, Any]:
        c = Counter(classes[a].value for a in members)
        n = len(members)
        return {
            "total": n,
            "counts": {k.value: c.get(k.value, 0) for k in IidClass},
            "percent": {k.value: (100.0 * c.get(k.value, 0) / n if n else 0.0) for k in IidClass},
        }

    return {
        "kind": "iid_report",
        "privacy_min_bits": privacy_min_bits,
        "all": _table(all_v6),
        "active": _table([a for a in all_v6 if a in active_set]),
        "classes": {a: classes[a].value for a in all_v6},
    }
