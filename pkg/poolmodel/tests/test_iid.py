from __future__ import annotations

import ipaddress

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poolfield.errors import InputValidationError
from poolmodel.iid import IidClass, classify_iid, embedded_mac, iid_report


@pytest.mark.parametrize(
    "address, expected",
    [
        ("2001:db8::1", IidClass.LOW_BYTE),
        ("2001:db8::211:22ff:fe33:4455", IidClass.EUI64),
        ("2001:db8::7b", IidClass.EMBED_PORT),
        ("2001:db8::c000:201", IidClass.EMBED_IPV4),
        ("2001:db8::192:0:2:1", IidClass.EMBED_IPV4),
        ("2001:db8::a3f1:9c2e:7b4d:e586", IidClass.PRIVACY),
        ("2001:db8::abcd:0:0:1", IidClass.OTHER),
    ],
)
def test_classify_examples(address: str, expected: IidClass) -> None:
    assert classify_iid(address) is expected


def test_eui64_takes_priority_over_low_bits() -> None:
    # low 16 bits are 0x007b but the ff:fe marker decides
    assert classify_iid("2001:db8::ff:fe00:7b") is IidClass.EUI64


def test_privacy_threshold_is_configurable() -> None:
    a = "2001:db8::a3f1:9c2e:7b4d:e586"
    assert classify_iid(a, privacy_min_bits=40) is IidClass.OTHER


@settings(max_examples=300, deadline=None)
@given(st.integers(min_value=0, max_value=(1 << 64) - 1))
def test_classification_is_total(iid: int) -> None:
    addr = str(ipaddress.IPv6Address((0x20010DB8 << 96) | iid))
    first = classify_iid(addr)
    assert isinstance(first, IidClass)
    assert classify_iid(addr) is first


def test_ipv4_rejected() -> None:
    with pytest.raises(InputValidationError):
        classify_iid("192.0.2.1")


def test_embedded_mac() -> None:
    assert embedded_mac("2001:db8::211:22ff:fe33:4455") == "00:11:22:33:44:55"
    assert embedded_mac("2001:db8::1") is None


def test_report_counts_and_percentages() -> None:
    addrs = ["2001:db8::1", "2001:db8::2", "2001:db8::211:22ff:fe33:4455", "2001:db8::7b", "192.0.2.1"]
    rep = iid_report(addrs, active=["2001:db8::1", "2001:db8::7b"])
    assert rep["kind"] == "iid_report"
    assert rep["all"]["total"] == 4
    assert rep["all"]["counts"]["LowByte"] == 2
    assert rep["all"]["percent"]["LowByte"] == pytest.approx(50.0)
    assert rep["active"]["total"] == 2
    assert rep["active"]["counts"]["EmbedPort"] == 1
    assert sum(rep["all"]["counts"].values()) == 4
