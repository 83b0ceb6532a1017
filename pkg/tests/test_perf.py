import asyncio

import pytest

from proxyaudit.bait import MockBehavior
from proxyaudit.model import PerfSample, ProxyEndpoint
from proxyaudit.perf import PerfScheduler, SiteLists, VirtualClock, measure_pdt, schedule_perf

SITES = SiteLists(["http://a.test/", "http://b.test/"], ["https://s.test/"])


def _fake_measure(log):
    async def measure(ep, url, ref):
        log.append((ep, url))
        return PerfSample(ep, url, url.split(":")[0], 10, 1.0, 100, 0, False)

    return measure


async def _no_ref(url):
    return b""


def _collect(sched, **kw):
    async def go():
        return [s async for s in sched.run(**kw)]

    return asyncio.run(go())


def test_every_tenth_test_is_https_and_interval_is_kept():
    eps = [ProxyEndpoint("192.0.2.1", p) for p in range(1, 6)]
    log = []
    sched = PerfScheduler(eps, SITES, _fake_measure(log), revisit_interval=300, reference=_no_ref,
                          clock=VirtualClock(0), seed=1)
    samples = _collect(sched, duration=300 * 20)
    assert len(samples) == 100
    for ep in eps:
        urls = [u for e, u in log if e == ep]
        assert len(urls) == 20
        assert [i for i, u in enumerate(urls, 1) if u.startswith("https")] == [10, 20]
    assert sched.stats.lag == 0.0


def test_lag_reports_overrun_rounds():
    clock = VirtualClock(0)
    eps = [ProxyEndpoint("192.0.2.1", 1)]

    async def measure(ep, url, ref):
        await clock.sleep(400)  # each measurement eats more than the interval
        return PerfSample(ep, url, "http", 1, 1.0, 1, 0, False)

    sched = PerfScheduler(eps, SITES, measure, revisit_interval=300, reference=_no_ref, clock=clock)
    _collect(sched, rounds=3)
    assert sched.stats.lag == pytest.approx(100.0)


def test_working_set_callable_is_reread_every_round():
    current = [ProxyEndpoint("192.0.2.1", 1)]
    log = []
    sched = PerfScheduler(lambda: list(current), SITES, _fake_measure(log), revisit_interval=10,
                          reference=_no_ref, clock=VirtualClock(0))

    async def go():
        n = 0
        async for _ in sched.run(rounds=3):
            n += 1
            if n == 1:
                current.append(ProxyEndpoint("192.0.2.2", 2))

    asyncio.run(go())
    assert len(log) == 5


def test_schedule_perf_validates_ratio_and_sites():
    with pytest.raises(ValueError):
        schedule_perf([], SITES, _fake_measure([]), https_ratio=0.3)
    with pytest.raises(ValueError):
        SiteLists(["https://x/"], ["https://y/"]).validate()
    with pytest.raises(ValueError):
        PerfScheduler([], SITES, _fake_measure([]), revisit_interval=10, pace=20)


def test_measure_pdt_through_loopback_proxies(harness, fast_config):
    site = harness.serve_site("landing", 8000, tls_cert="ref-a")
    relay = harness.spawn(MockBehavior.relay()).endpoint
    hole = harness.spawn(MockBehavior.blackhole()).endpoint
    ref = site.objects["/"][0]

    async def go():
        ok = await measure_pdt(relay, site.base_url + "/", ref, max_duration=2)
        tls = await measure_pdt(relay, site.tls_base_url + "/", ref, max_duration=2)
        bad = await measure_pdt(hole, site.base_url + "/", ref, max_duration=0.5)
        return ok, tls, bad

    ok, tls, bad = asyncio.run(go())
    assert not ok.failed and ok.similarity == 1.0 and ok.bytes == len(ref) and ok.pdt_ms is not None
    assert tls.scheme == "https" and tls.similarity == 1.0
    assert bad.failed and bad.pdt_ms is None and bad.failure == "duration-timeout"
