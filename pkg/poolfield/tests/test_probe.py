from __future__ import annotations

from typing import Optional

import pytest

from poolfield.errors import InputValidationError
from poolfield.fingerprint import WeakHints
from poolfield.probe import ProbePlan, ProbeResponse, Prober, ReplayTransport, probe, probe_many, read_targets
from poolfield.ratelimit import FakeClock
from poolfield.wire import NtpMode, NtpPacket, NtpTimestamp, decode_packet, encode_packet
from support.synthetic import make_fp


def test_plan_requires_window_to_cover_all_probes() -> None:
    with pytest.raises(InputValidationError):
        ProbePlan(probes_per_target=3, spacing_s=30.0, window_s=60.0)
    plan = ProbePlan.for_targets(["2001:DB8::1", "192.0.2.1", "192.0.2.1"])
    assert plan.targets == ("192.0.2.1", "2001:db8::1")


def test_read_targets_skips_comments(tmp_path) -> None:
    p = tmp_path / "targets.txt"
    p.write_text("# pool members\n192.0.2.1\n\n2001:DB8::7b  # v6\n", encoding="utf-8")
    assert read_targets(p) == ["192.0.2.1", "2001:db8::7b"]


def test_replayed_probe_reproduces_fingerprint() -> None:
    clock = FakeClock(1_700_000_000.0)
    recorded = make_fp("192.0.2.10", 0.0, stratum=1, refid=b"GPS\x00", precision=-20)
    plan = ProbePlan.for_targets(["192.0.2.10"])
    fps = probe("192.0.2.10", plan, transport=ReplayTransport([recorded]), clock=clock.time, sleep=clock.sleep)
    assert len(fps) == 2
    assert fps[1].collected_at - fps[0].collected_at == pytest.approx(plan.spacing_s)
    for fp in fps:
        assert (fp.stratum, fp.refid, fp.precision, fp.reference_ts) == (1, b"GPS\x00", -20, recorded.reference_ts)


class _BadOrigin:
    def exchange(self, address: str, payload: bytes, timeout_s: float, want_hints: bool) -> Optional[ProbeResponse]:
        req = decode_packet(payload)
        wrong = NtpTimestamp.from_int((req.transmit_ts.as_int() + 1) & (2**64 - 1))
        return ProbeResponse(encode_packet(NtpPacket(version=4, mode=int(NtpMode.SERVER), stratum=2, origin_ts=wrong)))


class _WrongVersion:
    def exchange(self, address: str, payload: bytes, timeout_s: float, want_hints: bool) -> Optional[ProbeResponse]:
        req = decode_packet(payload)
        return ProbeResponse(encode_packet(NtpPacket(version=0, mode=int(NtpMode.SERVER), origin_ts=req.transmit_ts)))


@pytest.mark.parametrize("transport", [_BadOrigin(), _WrongVersion()])
def test_invalid_replies_are_discarded(transport) -> None:
    clock = FakeClock()
    plan = ProbePlan.for_targets(["192.0.2.10"], retries=1)
    assert probe("192.0.2.10", plan, transport=transport, clock=clock.time, sleep=clock.sleep) == []


def test_weak_hints_recorded_only_when_requested() -> None:
    clock = FakeClock()
    rec = make_fp("2001:db8::123", 0.0, weak_hints=WeakHints(57, 46))
    transport = ReplayTransport([rec])
    plain = Prober(transport, clock=clock.time, sleep=clock.sleep).probe("2001:db8::123", ProbePlan())
    hinted = Prober(transport, clock=clock.time, sleep=clock.sleep).probe("2001:db8::123", ProbePlan(weak_hints=True))
    assert plain[0].weak_hints is None
    assert hinted[0].weak_hints == WeakHints(57, 46)


def test_campaign_response_rate() -> None:
    clock = FakeClock(1_700_000_000.0)
    targets = [f"10.0.{i // 250}.{i % 250 + 1}" for i in range(1000)]
    recorded = [make_fp(a, 0.0) for a in targets[:911]]
    plan = ProbePlan.for_targets(targets, retries=1, max_pps=1000.0, workers=8)
    camp = probe_many(plan, transport=ReplayTransport(recorded), clock=clock.time, sleep=clock.sleep)
    assert camp.responsive == 911
    assert len(camp.unresponsive) == 89
    assert camp.response_rate == pytest.approx(0.911)
    assert len(camp.fingerprints) == 2 * 911
    assert camp.summary()["kind"] == "probe_campaign"
