"""Recurring page-download-time measurements through working proxies."""

from __future__ import annotations

import asyncio
import logging
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import AsyncIterator, Awaitable, Callable, Iterable, Optional, Union

from .analysis.similarity import similarity_score
from .httpwire import fetch
from .model import PerfSample, ProxyEndpoint, now_ms

log = logging.getLogger(__name__)


@dataclass
class SiteLists:
    http_sites: list[str]
    https_sites: list[str]

    @classmethod
    def from_files(cls, http_path, https_path) -> "SiteLists":
        def read(p):
            return [ln.strip() for ln in Path(p).read_text().splitlines() if ln.strip() and not ln.startswith("#")]

        return cls(read(http_path), read(https_path))

    def validate(self) -> None:
        if not self.http_sites or not self.https_sites:
            raise ValueError("both HTTP and HTTPS site lists must be non-empty")
        for url in self.http_sites:
            if not url.startswith("http://"):
                raise ValueError(f"not an http URL: {url}")
        for url in self.https_sites:
            if not url.startswith("https://"):
                raise ValueError(f"not an https URL: {url}")


async def measure_pdt(
    endpoint: ProxyEndpoint,
    target_url: str,
    reference: bytes,
    *,
    max_duration: float = 30.0,
    connect_timeout: float = 3.0,
    vantage_id: str = "local",
    clock: Callable[[], int] = now_ms,
) -> PerfSample:
    """Download one landing page through ``endpoint``; time it and score it."""
    sampled_at = clock()
    res = await fetch(target_url, proxy=(endpoint.ip, endpoint.port),
                      connect_timeout=connect_timeout, max_duration=max_duration)
    scheme = "https" if target_url.startswith("https://") else "http"
    body = bytes(res.body)
    if not res.ok:
        failure = res.failure.value if res.failure else res.error
        return PerfSample(endpoint, target_url, scheme, None, 0.0, len(body), sampled_at, True, failure, vantage_id)
    return PerfSample(endpoint, target_url, scheme, res.total_ms, similarity_score(reference, body),
                      len(body), sampled_at, False, None, vantage_id)


class SystemClock:
    def now(self) -> float:
        return time.monotonic()

    def wall_ms(self) -> int:
        return now_ms()

    async def sleep(self, seconds: float) -> None:
        await asyncio.sleep(max(0.0, seconds))


class VirtualClock:
    """Scheduling time that advances only when the scheduler sleeps.

    Network I/O still happens in real time; it just costs no virtual time,
    which lets a multi-minute schedule run in seconds.
    """

    def __init__(self, start_ms: Optional[int] = None) -> None:
        self._t = 0.0
        self._epoch_ms = now_ms() if start_ms is None else start_ms

    def now(self) -> float:
        return self._t

    def wall_ms(self) -> int:
        return self._epoch_ms + int(round(self._t * 1000))

    async def sleep(self, seconds: float) -> None:
        self._t += max(0.0, seconds)
        await asyncio.sleep(0)


Measure = Callable[[ProxyEndpoint, str, bytes], Awaitable[PerfSample]]
ReferenceFetch = Callable[[str], Awaitable[bytes]]


async def direct_reference(url: str, max_duration: float = 30.0) -> bytes:
    res = await fetch(url, max_duration=max_duration)
    return bytes(res.body)


@dataclass
class SchedulerStats:
    rounds: int = 0
    samples: int = 0
    # worst overshoot (seconds) of any endpoint's gap beyond the revisit interval
    lag: float = 0.0
    per_endpoint: dict = field(default_factory=dict)


class PerfScheduler:
    """Sample every working endpoint at least once per ``revisit_interval``.

    Each round visits every endpoint in the current working set once; rounds
    start every ``pace`` seconds (default: the revisit interval). Per
    endpoint, every ``https_every``-th test targets a random HTTPS site and
    the rest a random HTTP site.
    """

    def __init__(
        self,
        working_set: Union[Iterable[ProxyEndpoint], Callable[[], Iterable[ProxyEndpoint]]],
        sites: SiteLists,
        measure: Measure,
        *,
        revisit_interval: float = 300.0,
        https_every: int = 10,
        parallelism: int = 64,
        pace: Optional[float] = None,
        reference: ReferenceFetch = direct_reference,
        clock=None,
        seed: Optional[int] = None,
    ) -> None:
        sites.validate()
        if revisit_interval <= 0 or https_every < 1:
            raise ValueError("revisit interval must be positive and https_every >= 1")
        self._working = working_set if callable(working_set) else (lambda ws=list(working_set): ws)
        self.sites = sites
        self.measure = measure
        self.revisit_interval = revisit_interval
        self.https_every = https_every
        self.parallelism = parallelism
        self.pace = revisit_interval if pace is None else pace
        if self.pace > revisit_interval:
            raise ValueError("pace cannot exceed the revisit interval")
        self.reference = reference
        self.clock = clock or SystemClock()
        self.rng = random.Random(seed)
        self.counters: dict[tuple[str, int], int] = {}
        self.last_sample: dict[tuple[str, int], float] = {}
        self.stats = SchedulerStats()

    def next_target(self, endpoint: ProxyEndpoint) -> str:
        n = self.counters.get(endpoint.key, 0) + 1
        self.counters[endpoint.key] = n
        if n % self.https_every == 0:
            return self.rng.choice(self.sites.https_sites)
        return self.rng.choice(self.sites.http_sites)

    async def run(self, duration: Optional[float] = None, rounds: Optional[int] = None) -> AsyncIterator[PerfSample]:
        """Yield samples until ``duration`` (clock seconds) or ``rounds`` elapse."""
        if rounds is not None and rounds <= 0:
            return
        t0 = self.clock.now()
        sem = asyncio.Semaphore(self.parallelism)
        while True:
            round_start = self.clock.now()
            if duration is not None and round_start - t0 >= duration:
                return
            endpoints = list(dict.fromkeys(self._working()))
            if endpoints:
                plan = [(ep, self.next_target(ep)) for ep in endpoints]
                refs = {}
                for url in sorted({u for _, u in plan}):
                    refs[url] = await self.reference(url)

                async def one(ep, url):
                    async with sem:
                        return await self.measure(ep, url, refs[url])

                for ep, _ in plan:
                    prev = self.last_sample.get(ep.key)
                    if prev is not None:
                        self.stats.lag = max(self.stats.lag, (self.clock.now() - prev) - self.revisit_interval)
                    self.last_sample[ep.key] = self.clock.now()
                for sample in await asyncio.gather(*(one(ep, url) for ep, url in plan)):
                    self.stats.samples += 1
                    self.stats.per_endpoint[sample.endpoint.key] = self.stats.per_endpoint.get(sample.endpoint.key, 0) + 1
                    yield sample
            self.stats.rounds += 1
            if rounds is not None and self.stats.rounds >= rounds:
                return
            elapsed = self.clock.now() - round_start
            if elapsed > self.pace:
                log.warning("perf round took %.1fs, longer than the %.1fs pace", elapsed, self.pace)
            await self.clock.sleep(self.pace - elapsed)


def schedule_perf(working_set, sites: SiteLists, measure: Measure, revisit_interval: float = 300.0,
                  https_ratio: float = 0.1, **kw) -> PerfScheduler:
    every = round(1 / https_ratio)
    if abs(every * https_ratio - 1) > 1e-9:
        raise ValueError("https_ratio must be 1/n for an integer n")
    return PerfScheduler(working_set, sites, measure, revisit_interval=revisit_interval, https_every=every, **kw)
