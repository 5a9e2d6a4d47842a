from __future__ import annotations

import random
from typing import Dict, List, Tuple

from poolfield.fingerprint import Fingerprint
from poolfield.wire import NtpShort, NtpTimestamp


def make_fp(address: str, t: float, **overrides) -> Fingerprint:
    base = dict(
        address=address,
        collected_at=float(t),
        version=4,
        stratum=2,
        refid=bytes([192, 0, 2, 99]),
        precision=-23,
        poll=10,
        reference_ts=NtpTimestamp(3_900_000_000, 123_456),
        root_dispersion=NtpShort(0, 900),
        leap=0,
    )
    base.update(overrides)
    return Fingerprint(**base)


def alias_population(
    rng: random.Random,
    *,
    hosts: int = 200,
    max_addrs: int = 13,
    probes: int = 2,
    spacing_s: float = 5.0,
    drift: float = 0.05,
) -> Tuple[List[Fingerprint], Dict[str, int]]:
    """Fingerprints of `hosts` multi-homed NTP hosts plus the true host of each address.

    Every host gets its own reference timestamp. With probability `drift` per
    probe round a host resyncs partway through the round, so the addresses
    probed after that point report the new reference timestamp.
    """
    fps: List[Fingerprint] = []
    truth: Dict[str, int] = {}
    for h in range(hosts):
        k = rng.randint(1, max_addrs)
        addrs = [f"10.{h // 250}.{h % 250}.{i + 1}" for i in range(k)]
        for a in addrs:
            truth[a] = h
        ref = 3_900_000_000 + h * 1000
        refid = bytes([198, 51, 100, h % 256])
        t0 = h * 1000.0
        for r in range(probes):
            resync_at = rng.randrange(k) if rng.random() < drift else None
            for i, a in enumerate(addrs):
                if resync_at is not None and i == resync_at:
                    ref += 64
                fps.append(
                    make_fp(
                        a,
                        t0 + r * spacing_s + i * 0.01,
                        refid=refid,
                        reference_ts=NtpTimestamp(ref, 0),
                        poll=rng.choice([6, 10]),
                    )
                )
    return fps, truth
