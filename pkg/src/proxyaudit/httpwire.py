"""Minimal HTTP/1.1 framing over asyncio streams.

Only what the origin, the mock proxies and the prober need: request/response
heads, Content-Length / chunked / read-to-close bodies, and a client that
fetches a URL directly or through a proxy (absolute-URI or CONNECT).
Bodies are accumulated into caller-owned buffers so that a deadline hit
mid-transfer still leaves the partial content available.
"""

from __future__ import annotations

import asyncio
import errno
import ssl
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence
from urllib.parse import urlsplit

from .model import FailureKind, Headers
from .tlsstream import TlsStream

MAX_HEAD = 64 * 1024
HOP_BY_HOP = frozenset({"connection", "proxy-connection", "keep-alive", "te", "trailer", "upgrade"})


class ProtocolError(Exception):
    pass


async def read_head(reader) -> tuple[str, Headers]:
    """Read a start line and header block; header order and case are kept."""
    try:
        raw = await reader.readuntil(b"\r\n\r\n")
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            raise EOFError("connection closed before any data") from None
        raise ProtocolError("truncated message head") from None
    except asyncio.LimitOverrunError:
        raise ProtocolError("message head too large") from None
    lines = raw[:-4].decode("latin-1").split("\r\n")
    headers: Headers = []
    for line in lines[1:]:
        name, sep, value = line.partition(":")
        if not sep:
            raise ProtocolError(f"malformed header line {line!r}")
        headers.append((name.strip(), value.strip()))
    return lines[0], headers


def header_value(headers: Sequence[tuple[str, str]], name: str) -> Optional[str]:
    name = name.lower()
    for n, v in headers:
        if n.lower() == name:
            return v
    return None


def without(headers: Sequence[tuple[str, str]], names) -> Headers:
    names = {n.lower() for n in names}
    return [(n, v) for n, v in headers if n.lower() not in names]


async def read_body(reader, headers: Sequence[tuple[str, str]], sink: bytearray, *, request: bool = False) -> None:
    """Append the message body to ``sink``.

    Requests without a length have no body; responses without one run to EOF.
    """
    te = (header_value(headers, "transfer-encoding") or "").lower()
    length = header_value(headers, "content-length")
    if "chunked" in te:
        while True:
            size_line = await reader.readline()
            if not size_line:
                raise asyncio.IncompleteReadError(b"", None)
            size = int(size_line.split(b";")[0].strip() or b"0", 16)
            if size == 0:
                while (await reader.readline()) not in (b"\r\n", b"\n", b""):
                    pass
                return
            await _read_exact_into(reader, size, sink)
            await reader.readline()
    elif length is not None:
        await _read_exact_into(reader, int(length), sink)
    elif not request:
        while chunk := await reader.read(65536):
            sink += chunk


async def _read_exact_into(reader, n: int, sink: bytearray) -> None:
    while n > 0:
        chunk = await reader.read(min(n, 65536))
        if not chunk:
            raise asyncio.IncompleteReadError(b"", n)
        sink += chunk
        n -= len(chunk)


def encode_head(start_line: str, headers: Sequence[tuple[str, str]]) -> bytes:
    lines = [start_line] + [f"{n}: {v}" for n, v in headers]
    return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1")


def host_port(url: str) -> tuple[str, int, str, str]:
    """(host, port, scheme, origin-form target) of an absolute URL."""
    parts = urlsplit(url)
    scheme = parts.scheme.lower()
    port = parts.port or (443 if scheme == "https" else 80)
    target = parts.path or "/"
    if parts.query:
        target += "?" + parts.query
    return parts.hostname or "", port, scheme, target


def insecure_client_context() -> ssl.SSLContext:
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
    ctx.check_hostname = False
    ctx.verify_mode = ssl.CERT_NONE
    return ctx


def set_nodelay(writer) -> None:
    sock = writer.get_extra_info("socket")
    if sock is not None:
        import socket

        try:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError:
            pass


@dataclass
class FetchResult:
    url: str
    status: Optional[int] = None
    headers: Headers = field(default_factory=list)
    body: bytearray = field(default_factory=bytearray)
    sent_headers: Headers = field(default_factory=list)
    connect_ms: int = 0
    total_ms: int = 0
    started: float = 0.0  # monotonic seconds
    finished: float = 0.0
    complete: bool = False
    failure: Optional[FailureKind] = None
    error: Optional[str] = None  # non-timeout, non-reset problems (closed, protocol, refused CONNECT)
    peer_chain: list[bytes] = field(default_factory=list)  # DER, leaf first, TLS fetches only

    @property
    def ok(self) -> bool:
        return self.complete and self.failure is None and self.error is None


def classify_oserror(exc: BaseException) -> Optional[FailureKind]:
    if isinstance(exc, (ConnectionResetError, ConnectionRefusedError, BrokenPipeError)):
        return FailureKind.TCP_RESET
    if isinstance(exc, OSError) and exc.errno in (errno.EHOSTUNREACH, errno.ENETUNREACH):
        return FailureKind.ICMP_UNREACHABLE
    return None


DEFAULT_HEADERS: Headers = [
    ("User-Agent", "proxyaudit/0.1"),
    ("Accept", "*/*"),
    ("Cache-Control", "no-cache"),
    ("Connection", "close"),
]


async def fetch(
    url: str,
    *,
    proxy: Optional[tuple[str, int]] = None,
    headers: Optional[Sequence[tuple[str, str]]] = None,
    connect_timeout: float = 3.0,
    max_duration: float = 30.0,
    tls_context: Optional[ssl.SSLContext] = None,
    result: Optional[FetchResult] = None,
) -> FetchResult:
    """GET ``url``, directly or via ``proxy``, under one overall deadline.

    HTTP URLs go through the proxy as absolute-URI requests; HTTPS URLs
    are tunnelled with CONNECT and TLS is negotiated end to end without
    certificate verification (the peer chain is captured instead).
    Never raises for network problems; they are reported on the result.
    """
    res = result or FetchResult(url)
    res.started = time.monotonic()
    extra = list(headers) if headers is not None else list(DEFAULT_HEADERS)
    host, port, scheme, target = host_port(url)
    authority = host if port == (443 if scheme == "https" else 80) else f"{host}:{port}"
    writer = None
    connected = False

    async def run() -> None:
        nonlocal writer, connected
        dest = proxy or (host, port)
        reader, writer = await asyncio.wait_for(asyncio.open_connection(*dest), connect_timeout)
        connected = True
        set_nodelay(writer)
        res.connect_ms = _ms_since(res.started)
        stream_r, stream_w = reader, writer
        if scheme == "https":
            if proxy is not None:
                writer.write(encode_head(f"CONNECT {host}:{port} HTTP/1.1", [("Host", f"{host}:{port}")]))
                line, _ = await read_head(reader)
                code = _status_code(line)
                if code != 200:
                    res.error = f"connect-refused:{code}"
                    return
            tls = TlsStream(reader, writer, tls_context or insecure_client_context(), server_hostname=host)
            await tls.handshake()
            res.peer_chain = tls.peer_chain()
            stream_r, stream_w = tls.reader, tls
        req_target = url if (proxy is not None and scheme == "http") else target
        sent = [("Host", authority)] + extra
        res.sent_headers = list(sent)
        stream_w.write(encode_head(f"GET {req_target} HTTP/1.1", sent))
        line, resp_headers = await read_head(stream_r)
        res.status = _status_code(line)
        res.headers = resp_headers
        await read_body(stream_r, resp_headers, res.body)
        res.complete = True

    try:
        await asyncio.wait_for(run(), max_duration)
    except asyncio.TimeoutError:
        res.failure = FailureKind.DURATION_TIMEOUT if connected else FailureKind.CONNECT_TIMEOUT
    except (EOFError, asyncio.IncompleteReadError):
        res.error = "closed"
    except ProtocolError as exc:
        res.error = f"protocol:{exc}"
    except ssl.SSLError as exc:
        res.error = f"tls:{exc.reason or exc}"
    except OSError as exc:
        res.failure = classify_oserror(exc)
        if res.failure is None:
            res.error = f"os:{exc.__class__.__name__}"
    finally:
        if writer is not None:
            writer.close()
    res.finished = time.monotonic()
    res.total_ms = _ms_since(res.started)
    return res


def _status_code(line: str) -> Optional[int]:
    parts = line.split(" ", 2)
    if len(parts) < 2 or not parts[0].startswith("HTTP/"):
        raise ProtocolError(f"bad status line {line!r}")
    try:
        return int(parts[1])
    except ValueError:
        raise ProtocolError(f"bad status code in {line!r}") from None


def _ms_since(start: float) -> int:
    return max(0, int(round((time.monotonic() - start) * 1000)))
