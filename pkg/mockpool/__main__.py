from __future__ import annotations

import argparse
import ipaddress

from .config import allow_remote, fixture_path, mock_host, mock_log_level, mock_port


def _is_loopback(h: str) -> bool:
    hs = (h or "").strip()
    if hs in ("127.0.0.1", "localhost", "::1"):
        return True
    try:
        return ipaddress.ip_address(hs).is_loopback
    except ValueError:
        return False


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(prog="mockpool")
    sub = parser.add_subparsers(dest="cmd")
    s = sub.add_parser("serve", help="Serve the mock pool endpoints (default).")
    s.add_argument("--host", default=None)
    s.add_argument("--port", type=int, default=None)
    s.add_argument("--fixture", default=None, help="Fixture YAML (default: MOCKPOOL_FIXTURE or bundled).")

    args = parser.parse_args(argv)
    host = getattr(args, "host", None) or mock_host()
    port = getattr(args, "port", None) or mock_port()
    fixture = getattr(args, "fixture", None) or str(fixture_path())

    # no auth: loopback only unless explicitly allowed
    if not _is_loopback(host) and not allow_remote():
        raise RuntimeError(f"Refusing to bind mockpool to host={host!r}; set MOCKPOOL_ALLOW_REMOTE=1 to override.")

    try:
        import uvicorn
    except ImportError as e:
        raise RuntimeError("uvicorn not installed. Run: pip install -r requirements.txt") from e

    from .app import create_app
    from .fixtures import load_fixture

    uvicorn.run(create_app(load_fixture(fixture)), host=host, port=port, log_level=mock_log_level())


if __name__ == "__main__":
    main()
