"""Run the bait origin and a mock-proxy fleet on a background event loop.

The fleet lives on its own thread so that probers and auditors can drive
it from their own loops (or from plain synchronous code).
"""

from __future__ import annotations

import asyncio
import threading
from typing import Iterable, Optional

from ..model import ProxyEndpoint
from .certs import server_context
from .mock import MockBehavior, MockProxy
from .origin import Origin, serve_bait
from .site import landing_site


def fleet_address(i: int) -> str:
    """Distinct loopback address for the i-th fleet member (127.0.x.y)."""
    return f"127.0.{1 + i // 250}.{1 + i % 250}"


class Harness:
    def __init__(self) -> None:
        self.loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self.loop.run_forever, name="proxyaudit-harness", daemon=True)
        self._thread.start()
        self.origins: list[Origin] = []
        self.proxies: list[MockProxy] = []

    def call(self, coro, timeout: Optional[float] = None):
        return asyncio.run_coroutine_threadsafe(coro, self.loop).result(timeout)

    def serve_bait(self, host: str = "127.0.0.1", http_port: int = 0, tls_port: Optional[int] = 0) -> Origin:
        origin = self.call(serve_bait(host, http_port, tls_port))
        self.origins.append(origin)
        return origin

    def serve_site(self, name: str, size: int = 10_240, host: str = "127.0.0.1", tls_cert: Optional[str] = None) -> Origin:
        """A plain landing-page site (HTTP, plus HTTPS when ``tls_cert`` names a fixture)."""
        ctx = server_context(tls_cert) if tls_cert else None
        origin = self.call(Origin(landing_site(name, size), ctx, name=name).start(host, 0, 0 if ctx else None))
        self.origins.append(origin)
        return origin

    def spawn(self, behavior: MockBehavior, host: str = "127.0.0.1", port: int = 0) -> MockProxy:
        proxy = self.call(MockProxy(behavior).start(host, port))
        self.proxies.append(proxy)
        return proxy

    def spawn_fleet(self, behaviors: Iterable[MockBehavior], start: int = 0) -> list[MockProxy]:
        async def go(items):
            return await asyncio.gather(*(MockProxy(b).start(fleet_address(start + i)) for i, b in enumerate(items)))

        proxies = list(self.call(go(list(behaviors))))
        self.proxies.extend(proxies)
        return proxies

    def stop_proxy(self, endpoint: ProxyEndpoint) -> None:
        for p in list(self.proxies):
            if p.endpoint.key == endpoint.key:
                self.call(p.close())
                self.proxies.remove(p)

    def close(self) -> None:
        async def shutdown():
            await asyncio.gather(*(p.close() for p in self.proxies), return_exceptions=True)
            await asyncio.gather(*(o.close() for o in self.origins), return_exceptions=True)

        if self.loop.is_running():
            try:
                self.call(shutdown(), timeout=30)
            finally:
                self.loop.call_soon_threadsafe(self.loop.stop)
                self._thread.join(timeout=10)
        self.proxies.clear()
        self.origins.clear()

    def __enter__(self) -> "Harness":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
