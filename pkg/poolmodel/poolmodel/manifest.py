"""Run manifests: what a subcommand read, with which settings, and what it wrote.

The identity digest covers everything except the wall-clock timestamps and
the run id, so two runs with equal identity digests must produce equal
outputs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

from poolfield.hashutil import canonical_json, sha256_file, sha256_str

from . import __version__

MANIFEST_FILE = "run_manifest.json"
_VOLATILE = ("started_utc", "finished_utc", "run_id", "outputs")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class InputDigest:
    path: str
    sha256: Optional[str]


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    inputs: Tuple[InputDigest, ...] = ()
    config_digest: Optional[str] = None
    seed: Optional[int] = None
    params: Mapping[str, Any] = field(default_factory=dict)
    tool_version: str = __version__
    run_id: Optional[str] = None
    started_utc: str = ""
    finished_utc: str = ""
    outputs: Tuple[InputDigest, ...] = ()

    @classmethod
    def start(
        cls,
        subcommand: str,
        inputs: Iterable[str | Path] = (),
        *,
        config: Optional[Mapping[str, Any]] = None,
        seed: Optional[int] = None,
        params: Optional[Mapping[str, Any]] = None,
        run_id: Optional[str] = None,
    ) -> "RunManifest":
        return cls(
            subcommand=subcommand,
            inputs=tuple(digest_path(p) for p in inputs),
            config_digest=sha256_str(canonical_json(dict(config))) if config is not None else None,
            seed=seed,
            params=json.loads(canonical_json(dict(params or {}))),
            run_id=run_id,
            started_utc=_utc_now(),
        )

    def finish(self, outputs: Iterable[str | Path] = ()) -> "RunManifest":
        return replace(self, finished_utc=_utc_now(), outputs=tuple(digest_path(p) for p in outputs))

    def to_record(self) -> Dict[str, Any]:
        rec = asdict(self)
        rec["kind"] = "run_manifest"
        rec["params"] = dict(self.params)
        rec["identity_sha256"] = self.identity_digest()
        return rec

    def identity_digest(self) -> str:
        rec = asdict(self)
        rec["params"] = dict(self.params)
        for k in _VOLATILE:
            rec.pop(k, None)
        return sha256_str(canonical_json(rec))

    def write(self, out_dir: str | Path) -> Path:
        p = Path(out_dir) / MANIFEST_FILE
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(self.to_record(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p


def digest_path(path: str | Path) -> InputDigest:
    """Digest of a file, or of a directory's files in sorted relative order."""
    p = Path(path)
    if p.is_file():
        return InputDigest(str(p), sha256_file(p))
    if p.is_dir():
        parts = [
            f"{f.relative_to(p).as_posix()}:{sha256_file(f)}"
            for f in sorted(x for x in p.rglob("*") if x.is_file() and x.name != "state.lock")
        ]
        return InputDigest(str(p), sha256_str("\n".join(parts)))
    return InputDigest(str(p), None)


def read_manifest(path: str | Path) -> Dict[str, Any]:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_FILE
    return json.loads(p.read_text(encoding="utf-8"))
