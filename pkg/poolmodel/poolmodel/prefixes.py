from __future__ import annotations

import ipaddress
import logging
from pathlib import Path
from typing import Dict, Iterable, Iterator, Optional, Tuple

import pytricia

from poolfield.errors import DuplicatePrefixError, InputValidationError

log = logging.getLogger(__name__)

TUNNEL_BROKER_V6 = "2001:470::/32"


class PrefixTable:
    """Announced prefixes and their origin ASN, one trie per address family."""

    def __init__(self, entries: Iterable[Tuple[str, int]] = ()) -> None:
        self._tries = {4: pytricia.PyTricia(32), 6: pytricia.PyTricia(128)}
        for prefix, asn in entries:
            self.add(prefix, asn)

    def __len__(self) -> int:
        return sum(len(t) for t in self._tries.values())

    def add(self, prefix: str, asn: int) -> str:
        try:
            net = ipaddress.ip_network(str(prefix).strip(), strict=False)
        except ValueError as e:
            raise InputValidationError(f"not a prefix: {prefix!r}", code="invalid_prefix") from e
        if int(asn) < 1:
            raise InputValidationError(f"ASN must be positive, got {asn}", code="invalid_prefix")
        key = str(net)
        trie = self._tries[net.version]
        if trie.has_key(key):
            raise DuplicatePrefixError(f"{key} listed twice (AS{trie[key]} and AS{asn})")
        trie.insert(key, int(asn))
        return key

    def lookup(self, address: str) -> Optional[int]:
        try:
            ip = ipaddress.ip_address(str(address).strip())
        except ValueError as e:
            raise InputValidationError(f"not an IP address: {address!r}", code="invalid_address") from e
        return self._tries[ip.version].get(str(ip))

    def covering(self, address: str) -> Optional[str]:
        ip = ipaddress.ip_address(address)
        return self._tries[ip.version].get_key(str(ip))

    def items(self) -> Iterator[Tuple[str, int]]:
        for v in (4, 6):
            trie = self._tries[v]
            for k in sorted(trie, key=lambda p: (int(ipaddress.ip_network(p).network_address), ipaddress.ip_network(p).prefixlen)):
                yield k, trie[k]


def lpm_lookup(table: PrefixTable, address: str) -> Optional[int]:
    """ASN of the most specific covering prefix, None when unrouted."""
    return table.lookup(address)


def load_prefix_table(path: str | Path) -> PrefixTable:
    """Read `prefix/length ASN` lines; v4 and v6 may be mixed, '#' starts a comment."""
    p = Path(path)
    table = PrefixTable()
    for lineno, ln in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        s = ln.split("#", 1)[0].strip()
        if not s:
            continue
        parts = s.replace(",", " ").split()
        if len(parts) != 2:
            raise InputValidationError(f"{p.name}:{lineno}: expected 'prefix/length ASN'", code="invalid_prefix")
        asn = parts[1].upper().removeprefix("AS")
        if not asn.isdigit():
            raise InputValidationError(f"{p.name}:{lineno}: bad ASN {parts[1]!r}", code="invalid_prefix")
        table.add(parts[0], int(asn))
    log.info("prefixes.loaded path=%s entries=%d", p.name, len(table))
    return table


def asn_map(table: PrefixTable, addresses: Iterable[str]) -> Dict[str, Optional[int]]:
    return {a: table.lookup(a) for a in addresses}


def in_tunnel_broker(address: str) -> bool:
    ip = ipaddress.ip_address(address)
    return ip.version == 6 and ip in ipaddress.ip_network(TUNNEL_BROKER_V6)
