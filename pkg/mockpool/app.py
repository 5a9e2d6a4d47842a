from __future__ import annotations

import html
import ipaddress
import logging
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, JSONResponse, RedirectResponse, Response

from . import __version__
from .config import fixture_path
from .fixtures import MockPool, MockServer, load_fixture

log = logging.getLogger("mockpool")


def _canonical_ip(key: str) -> Optional[str]:
    try:
        return str(ipaddress.ip_address(key))
    except ValueError:
        return None


def _not_found(what: str) -> JSONResponse:
    return JSONResponse({"error": "not found", "what": what}, status_code=404)


def render_server_page(srv: MockServer) -> str:
    ip = html.escape(srv.ip)
    zone_links = " ".join(f'<a href="/zone/{html.escape(z)}">{html.escape(z)}</a>' for z in sorted(srv.zones))
    rows = [
        f'<tr><th>Zones</th><td class="zones">{zone_links}</td></tr>',
        f'<tr><th>Net speed</th><td class="netspeed" data-kbps="{srv.netspeed}">{srv.netspeed} kbps</td></tr>',
    ]
    if srv.account:
        acct = html.escape(srv.account)
        rows.append(f'<tr><th>Account</th><td class="account"><a href="/a/{acct}">{acct}</a></td></tr>')
    rows.append(f'<tr><th>Status</th><td class="status">{"deleted" if srv.deleted else "active"}</td></tr>')
    return (
        "<!DOCTYPE html><html><head>"
        f"<title>pool.ntp.org: Statistics for {ip}</title></head><body>"
        f'<div id="server" data-server-id="{srv.server_id}" data-ip="{ip}">'
        f"<h3>{ip}</h3><table class=\"server-meta\">{''.join(rows)}</table>"
        "</div></body></html>"
    )


def create_app(pool: Optional[MockPool] = None) -> FastAPI:
    pool = pool if pool is not None else load_fixture(fixture_path())
    app = FastAPI(title="mockpool", version=__version__)
    app.state.pool = pool

    @app.middleware("http")
    async def _record_and_fail(request: Request, call_next):
        path = request.url.path
        pool.log_request(path)
        status = pool.fail_paths.get(path)
        if status:
            return Response(status_code=int(status))
        return await call_next(request)

    @app.get("/healthz")
    def healthz() -> dict:
        return {"ok": True, "servers": len(pool.servers)}

    @app.get("/scores/{key}")
    def scores(key: str) -> Response:
        if key.isdigit():
            srv = pool.servers.get(int(key))
            if srv is None:
                return _not_found(f"server id {key}")
            return RedirectResponse(url=f"/scores/{srv.ip}", status_code=301)
        ip = _canonical_ip(key)
        srv = pool.by_ip(ip) if ip else None
        if srv is None:
            return _not_found(f"server {key}")
        return HTMLResponse(render_server_page(srv))

    @app.get("/scores/{key}/json")
    def scores_json(key: str) -> Response:
        ip = _canonical_ip(key)
        srv = pool.by_ip(ip) if ip else None
        if srv is None:
            return _not_found(f"server {key}")
        history = [{"ts": ts, "score": sc, "monitor_id": None} for ts, sc in srv.history]
        return JSONResponse({"history": history, "server": {"ip": srv.ip, "score": srv.score}})

    @app.get("/api/data/server/dns/answers/{key}")
    def dns_answers(key: str) -> Response:
        ip = _canonical_ip(key)
        if ip is None or ip not in pool.answers:
            return _not_found(f"answers for {key}")
        return JSONResponse(dict(sorted(pool.answers[ip].items())))

    @app.get("/api/data/zone/counts/{zone}")
    def zone_counts(zone: str) -> Response:
        counts = pool.zone_counts(zone)
        if counts is None:
            return _not_found(f"zone {zone}")
        return JSONResponse(counts)

    return app
