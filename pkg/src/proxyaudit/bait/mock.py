"""Mock proxies with scripted misbehaviour, for hermetic funnel tests."""

from __future__ import annotations

import asyncio
import logging
import random
import socket
import ssl
import struct
from dataclasses import dataclass, field
from typing import Optional

from ..httpwire import (
    HOP_BY_HOP,
    ProtocolError,
    encode_head,
    header_value,
    host_port,
    insecure_client_context,
    read_body,
    read_head,
    set_nodelay,
    without,
)
from ..model import DeltaKind, HeaderDelta, ProxyEndpoint
from ..tlsstream import TlsStream
from .certs import server_context

log = logging.getLogger(__name__)

LOGIN_PAGE = (
    b"<!DOCTYPE html>\n<html><head><title>Sign in</title></head><body>\n"
    b"<h1>Proxy authentication required</h1>\n"
    b"<form method=\"post\" action=\"/login\"><input name=\"user\"><input name=\"pass\" type=\"password\">"
    b"<button>Sign in</button></form>\n</body></html>\n"
)

RELAY = "relay"
INJECT_SCRIPT = "inject-script"
ALTER_HTML = "alter-html"
TLS_MITM = "tls-mitm"
LOGIN_WALL = "login-wall"
BLACKHOLE = "blackhole"
TCP_RESET = "tcp-reset"
SLOW_DRIP = "slow-drip"
HEADER_REWRITE = "header-rewrite"

KINDS = (RELAY, INJECT_SCRIPT, ALTER_HTML, TLS_MITM, LOGIN_WALL, BLACKHOLE, TCP_RESET, SLOW_DRIP, HEADER_REWRITE)
_ALWAYS = (RELAY, LOGIN_WALL, BLACKHOLE, TCP_RESET)


@dataclass(frozen=True)
class MockBehavior:
    """What a mock proxy does to the traffic it relays.

    ``reveal`` controls the anonymity headers added upstream: ``none``
    (elite), ``via`` (anonymous) or ``xff`` (transparent).
    """

    kind: str
    payload: bytes = b""
    edits: tuple[tuple[bytes, bytes], ...] = ()
    cert: str = "mitm"
    rate: int = 0
    header_rewrites: tuple[HeaderDelta, ...] = ()
    manipulation_probability: float = 1.0
    reveal: str = "none"
    page: bytes = LOGIN_PAGE
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown mock behavior {self.kind!r}")
        if not 0.0 <= self.manipulation_probability <= 1.0:
            raise ValueError("manipulation_probability must lie in [0, 1]")
        if self.kind in _ALWAYS and self.manipulation_probability != 1.0:
            raise ValueError(f"{self.kind} always applies; probability must be 1")
        if self.kind == SLOW_DRIP and self.rate <= 0:
            raise ValueError("slow-drip needs a positive byte rate")
        if self.reveal not in ("none", "via", "xff"):
            raise ValueError(f"bad reveal mode {self.reveal!r}")

    @classmethod
    def relay(cls, reveal: str = "none") -> "MockBehavior":
        return cls(RELAY, reveal=reveal)

    @classmethod
    def inject_script(cls, payload: bytes = b"<script src=\"http://ads.example/inject.js\"></script>",
                      probability: float = 1.0, seed: Optional[int] = None) -> "MockBehavior":
        return cls(INJECT_SCRIPT, payload=payload, manipulation_probability=probability, seed=seed)

    @classmethod
    def alter_html(cls, edits, probability: float = 1.0, seed: Optional[int] = None) -> "MockBehavior":
        return cls(ALTER_HTML, edits=tuple(edits), manipulation_probability=probability, seed=seed)

    @classmethod
    def tls_mitm(cls, cert: str = "mitm") -> "MockBehavior":
        return cls(TLS_MITM, cert=cert)

    @classmethod
    def login_wall(cls, page: bytes = LOGIN_PAGE) -> "MockBehavior":
        return cls(LOGIN_WALL, page=page)

    @classmethod
    def blackhole(cls) -> "MockBehavior":
        return cls(BLACKHOLE)

    @classmethod
    def tcp_reset(cls) -> "MockBehavior":
        return cls(TCP_RESET)

    @classmethod
    def slow_drip(cls, rate: int) -> "MockBehavior":
        return cls(SLOW_DRIP, rate=rate)

    @classmethod
    def header_rewrite(cls, deltas, probability: float = 1.0, seed: Optional[int] = None) -> "MockBehavior":
        return cls(HEADER_REWRITE, header_rewrites=tuple(deltas), manipulation_probability=probability, seed=seed)


def apply_header_deltas(headers, deltas, direction: str):
    out = list(headers)
    for d in deltas:
        if d.direction != direction:
            continue
        if d.kind is DeltaKind.ADDED:
            out.append((d.name, d.observed_value))
        elif d.kind is DeltaKind.REMOVED:
            out = without(out, [d.name])
        else:
            out = [(n, d.observed_value if n.lower() == d.name else v) for n, v in out]
    return out


class MockProxy:
    def __init__(self, behavior: MockBehavior) -> None:
        self.behavior = behavior
        self.rng = random.Random(behavior.seed)
        self.manipulations = 0
        self.requests = 0
        self._server: Optional[asyncio.AbstractServer] = None
        self._tasks: set[asyncio.Task] = set()
        self.host = "127.0.0.1"
        self.port = 0

    @property
    def endpoint(self) -> ProxyEndpoint:
        return ProxyEndpoint(self.host, self.port)

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> "MockProxy":
        self._server = await asyncio.start_server(self._handle, host, port, backlog=1024)
        self.host = host
        self.port = self._server.sockets[0].getsockname()[1]
        return self

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            for t in list(self._tasks):
                t.cancel()
            await asyncio.gather(*self._tasks, return_exceptions=True)
            await self._server.wait_closed()
            self._server = None

    def _roll(self) -> bool:
        p = self.behavior.manipulation_probability
        return p >= 1.0 or self.rng.random() < p

    async def _handle(self, reader, writer) -> None:
        task = asyncio.current_task()
        self._tasks.add(task)
        b = self.behavior
        try:
            if b.kind == BLACKHOLE:
                while await reader.read(65536):
                    pass
                return
            line, headers = await read_head(reader)
            self.requests += 1
            if b.kind == TCP_RESET:
                sock = writer.get_extra_info("socket")
                sock.setsockopt(socket.SOL_SOCKET, socket.SO_LINGER, struct.pack("ii", 1, 0))
                writer.transport.abort()
                return
            method, target = (line.split(" ") + ["", ""])[:2]
            if b.kind == LOGIN_WALL:
                writer.write(_response(200, "OK", [("Content-Type", "text/html")], b.page))
            elif method == "CONNECT":
                await self._connect(target, reader, writer)
            elif target.startswith("http://"):
                peer = writer.get_extra_info("peername")[0]
                await self._forward(method, target, headers, peer, writer, upstream_tls=False)
            else:
                writer.write(_response(400, "Bad Request", [("Content-Type", "text/plain")], b"absolute URI required\n"))
            await writer.drain()
        except (EOFError, ProtocolError, ConnectionError, asyncio.IncompleteReadError, ssl.SSLError, OSError):
            pass
        except Exception:  # pragma: no cover
            log.exception("mock proxy handler failed")
        finally:
            self._tasks.discard(task)
            if not writer.transport.is_closing():
                writer.close()

    async def _connect(self, target: str, reader, writer) -> None:
        host, _, port = target.rpartition(":")
        if self.behavior.kind == TLS_MITM:
            writer.write(b"HTTP/1.1 200 Connection established\r\n\r\n")
            tls = TlsStream(reader, writer, server_context(self.behavior.cert), server_side=True)
            await tls.handshake()
            line, headers = await read_head(tls.reader)
            method, path = (line.split(" ") + ["", ""])[:2]
            peer = writer.get_extra_info("peername")[0]
            await self._forward(method, f"https://{host}:{port}{path}", headers, peer, tls, upstream_tls=True)
            await tls.drain()
            return
        up_r, up_w = await asyncio.open_connection(host, int(port))
        set_nodelay(up_w)
        writer.write(b"HTTP/1.1 200 Connection established\r\n\r\n")
        try:
            await asyncio.gather(self._pipe(reader, up_w, 0), self._pipe(up_r, writer, self.behavior.rate))
        finally:
            up_w.close()

    async def _pipe(self, src, dst, rate: int) -> None:
        try:
            while data := await src.read(65536):
                await self._send(dst, data, rate)
        finally:
            if hasattr(dst, "can_write_eof") and dst.can_write_eof() and not dst.transport.is_closing():
                dst.write_eof()

    async def _send(self, dst, data: bytes, rate: int) -> None:
        if rate <= 0:
            dst.write(data)
            await dst.drain()
            return
        step = max(1, rate // 20)
        for i in range(0, len(data), step):
            dst.write(data[i : i + step])
            await dst.drain()
            await asyncio.sleep(len(data[i : i + step]) / rate)

    async def _forward(self, method: str, url: str, headers, peer: str, client_w, upstream_tls: bool) -> None:
        b = self.behavior
        host, port, _, target = host_port(url)
        up_r, up_w = await asyncio.open_connection(host, port)
        set_nodelay(up_w)
        stream_r, stream_w = up_r, up_w
        if upstream_tls:
            tls = TlsStream(up_r, up_w, insecure_client_context(), server_hostname=host)
            await tls.handshake()
            stream_r, stream_w = tls.reader, tls
        try:
            req = without(headers, HOP_BY_HOP) + [("Connection", "close")]
            if b.reveal == "via":
                req.append(("Via", "1.1 mockproxy"))
            elif b.reveal == "xff":
                req.append(("X-Forwarded-For", peer))
            if b.kind == HEADER_REWRITE:
                req = apply_header_deltas(req, b.header_rewrites, "request")
            stream_w.write(encode_head(f"{method} {target} HTTP/1.1", req))
            line, resp_headers = await read_head(stream_r)
            body = bytearray()
            await read_body(stream_r, resp_headers, body)
        finally:
            if upstream_tls:
                stream_w.close()
            else:
                up_w.close()
        body = self._manipulate(resp_headers, bytes(body))
        resp_headers = without(resp_headers, HOP_BY_HOP | {"content-length", "transfer-encoding"})
        resp_headers += [("Content-Length", str(len(body))), ("Connection", "close")]
        if b.kind == HEADER_REWRITE and self._roll():
            self.manipulations += 1
            resp_headers = apply_header_deltas(resp_headers, b.header_rewrites, "response")
        await self._send(client_w, encode_head(line, resp_headers) + body, b.rate if b.kind == SLOW_DRIP else 0)

    def _manipulate(self, headers, body: bytes) -> bytes:
        b = self.behavior
        is_html = (header_value(headers, "content-type") or "").startswith("text/html")
        if b.kind == INJECT_SCRIPT and is_html and b"</body>" in body:
            if self._roll():
                self.manipulations += 1
                at = body.rindex(b"</body>")
                return body[:at] + b.payload + body[at:]
        elif b.kind == ALTER_HTML and is_html and b.edits:
            if self._roll():
                self.manipulations += 1
                for old, new in b.edits:
                    body = body.replace(old, new)
        return body


def _response(status: int, reason: str, headers, body: bytes) -> bytes:
    return encode_head(f"HTTP/1.1 {status} {reason}", list(headers) + [
        ("Content-Length", str(len(body))), ("Connection", "close")]) + body


async def spawn_mock_proxy(behavior: MockBehavior, host: str = "127.0.0.1", port: int = 0) -> MockProxy:
    return await MockProxy(behavior).start(host, port)
