from __future__ import annotations

import ipaddress
import random

import pytest

from poolfield.errors import DuplicatePrefixError, InputValidationError
from poolmodel.prefixes import PrefixTable, asn_map, in_tunnel_broker, load_prefix_table, lpm_lookup


def test_most_specific_prefix_wins() -> None:
    t = PrefixTable([("10.0.0.0/8", 64500), ("10.1.0.0/16", 64501)])
    assert lpm_lookup(t, "10.1.2.3") == 64501
    assert lpm_lookup(t, "10.2.0.1") == 64500


def test_uncovered_address_is_unrouted() -> None:
    t = PrefixTable([("10.0.0.0/8", 64500)])
    assert lpm_lookup(t, "192.0.2.1") is None


def test_families_do_not_mix() -> None:
    t = PrefixTable([("0.0.0.0/0", 64500)])
    assert lpm_lookup(t, "2001:db8::1") is None


def test_duplicate_prefix_rejected() -> None:
    t = PrefixTable([("10.0.0.0/8", 64500)])
    with pytest.raises(DuplicatePrefixError):
        t.add("10.0.0.0/8", 64501)


def test_bad_address_is_input_error() -> None:
    with pytest.raises(InputValidationError):
        PrefixTable().lookup("not-an-ip")


def _linear_scan(entries: list[tuple[str, int]], address: str) -> int | None:
    ip = ipaddress.ip_address(address)
    best = None
    for prefix, asn in entries:
        net = ipaddress.ip_network(prefix)
        if net.version == ip.version and ip in net and (best is None or net.prefixlen > best[0]):
            best = (net.prefixlen, asn)
    return best[1] if best else None


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_lookup_matches_linear_scan(seed: int) -> None:
    rng = random.Random(seed)
    seen: dict[str, int] = {}
    while len(seen) < 300:
        plen = rng.randint(8, 28)
        base = rng.choice([10, 172, 192]) << 24 | rng.getrandbits(24)
        net = ipaddress.ip_network((base, plen), strict=False)
        seen.setdefault(str(net), rng.randint(1, 65000))
    entries = list(seen.items())
    t = PrefixTable(entries)
    for _ in range(2000):
        addr = str(ipaddress.IPv4Address(rng.choice([10, 172, 192]) << 24 | rng.getrandbits(24)))
        assert lpm_lookup(t, addr) == _linear_scan(entries, addr)


def test_load_prefix_table(tmp_path) -> None:
    p = tmp_path / "prefixes.txt"
    p.write_text(
        "# origin table\n10.0.0.0/8 AS64500\n2001:db8::/32 64510  # v6\n\n10.1.0.0/16,64501\n",
        encoding="utf-8",
    )
    t = load_prefix_table(p)
    assert len(t) == 3
    assert asn_map(t, ["10.1.9.9", "2001:db8::5", "192.0.2.1"]) == {
        "10.1.9.9": 64501,
        "2001:db8::5": 64510,
        "192.0.2.1": None,
    }


def test_load_prefix_table_rejects_bad_line(tmp_path) -> None:
    p = tmp_path / "prefixes.txt"
    p.write_text("10.0.0.0/8\n", encoding="utf-8")
    with pytest.raises(InputValidationError):
        load_prefix_table(p)


def test_tunnel_broker_range() -> None:
    assert in_tunnel_broker("2001:470:1f0b::2")
    assert not in_tunnel_broker("2001:db8::2")
    assert not in_tunnel_broker("192.0.2.1")
