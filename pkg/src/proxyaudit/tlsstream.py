"""TLS over an already-open asyncio stream pair, via ``ssl.MemoryBIO``.

Used for TLS inside CONNECT tunnels, on both the client side (prober) and
the server side (intercepting mock proxy).
"""

from __future__ import annotations

import asyncio
import ssl
from typing import Optional


class TlsStream:
    """Wraps a plaintext (reader, writer) pair.

    After :meth:`handshake`, decrypted bytes arrive on ``self.reader`` (a
    regular ``asyncio.StreamReader``) and :meth:`write` encrypts outgoing data.
    """

    def __init__(self, reader, writer, context: ssl.SSLContext, *, server_side: bool = False,
                 server_hostname: Optional[str] = None) -> None:
        self._raw_reader = reader
        self._raw_writer = writer
        self._in = ssl.MemoryBIO()
        self._out = ssl.MemoryBIO()
        self._obj = context.wrap_bio(self._in, self._out, server_side=server_side,
                                     server_hostname=None if server_side else server_hostname)
        self.reader = asyncio.StreamReader(limit=1 << 20)
        self._pump: Optional[asyncio.Task] = None

    def _flush(self) -> None:
        data = self._out.read()
        if data:
            self._raw_writer.write(data)

    async def handshake(self) -> None:
        while True:
            try:
                self._obj.do_handshake()
                break
            except ssl.SSLWantReadError:
                self._flush()
                data = await self._raw_reader.read(65536)
                if not data:
                    raise EOFError("peer closed during TLS handshake")
                self._in.write(data)
        self._flush()
        self._pump = asyncio.ensure_future(self._run_pump())

    async def _run_pump(self) -> None:
        try:
            eof = False
            while True:
                # bytes left over from the handshake read are drained first
                while True:
                    try:
                        plain = self._obj.read(65536)
                    except ssl.SSLWantReadError:
                        break
                    except (ssl.SSLZeroReturnError, ssl.SSLEOFError):
                        plain = b""
                    if not plain:
                        self.reader.feed_eof()
                        return
                    self.reader.feed_data(plain)
                self._flush()
                if eof:
                    self.reader.feed_eof()
                    return
                data = await self._raw_reader.read(65536)
                if data:
                    self._in.write(data)
                else:
                    self._in.write_eof()
                    eof = True
        except (ConnectionError, ssl.SSLError, OSError) as exc:
            self.reader.set_exception(exc)
        except asyncio.CancelledError:
            self.reader.feed_eof()
            raise

    def write(self, data: bytes) -> None:
        self._obj.write(data)
        self._flush()

    async def drain(self) -> None:
        await self._raw_writer.drain()

    def peer_chain(self) -> list[bytes]:
        """DER certificates presented by the peer, leaf first."""
        sslobj = getattr(self._obj, "_sslobj", None)
        getter = getattr(sslobj, "get_unverified_chain", None) or getattr(self._obj, "get_unverified_chain", None)
        if getter is not None:
            chain = getter() or []
            return [c if isinstance(c, bytes) else c.public_bytes(ssl._ssl.ENCODING_DER) for c in chain]
        leaf = self._obj.getpeercert(binary_form=True)
        return [leaf] if leaf else []

    def close(self) -> None:
        if self._pump is not None:
            self._pump.cancel()
        self._raw_writer.close()
