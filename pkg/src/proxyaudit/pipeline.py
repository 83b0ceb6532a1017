"""Wiring of the funnel phases to the ledger, shared by the CLI and the demo."""

from __future__ import annotations

import asyncio
import functools
import logging
import tempfile
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Optional

from .audit import audit_behavior, run_audits
from .bait.harness import Harness
from .bait.mock import MockBehavior
from .bait.site import INDEX, OBJECT_1KB
from .config import Config
from .ingest import merge_candidates, parse_candidate_list, read_potential_list, write_potential_list
from .ledger.geo import GeoTable
from .ledger.report import Report, build_report
from .ledger.store import Ledger
from .model import BehaviorVerdict, HostCategory, ProbeOutcome, ProxyEndpoint, day_of, utc_today
from .perf import PerfScheduler, SiteLists, measure_pdt
from .probe import local_lookup, probe_endpoint, run_phase2

log = logging.getLogger(__name__)


def load_geo(cfg: Config) -> GeoTable:
    return GeoTable.load(cfg.geo_table) if cfg.geo_table else GeoTable.fixture()


def load_candidates(path) -> list[ProxyEndpoint]:
    """A potential list written by ``ingest``, or a raw ``ip:port`` list."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"candidate list not found: {path}")
    try:
        return read_potential_list(path)
    except ValueError:
        return parse_candidate_list(path.read_bytes(), str(path), utc_today()).endpoints


def working_set(ledger: Ledger, window_days: int, today: Optional[date] = None) -> list[ProxyEndpoint]:
    """Endpoints with a Working probe in the last ``window_days`` days, most recent first."""
    today = today or utc_today()
    horizon = today - timedelta(days=window_days - 1)
    latest: dict[tuple, ProbeOutcome] = {}
    for p in ledger.records("probe"):
        if p.category is HostCategory.WORKING and day_of(p.probed_at) >= horizon:
            if p.endpoint.key not in latest or p.probed_at >= latest[p.endpoint.key].probed_at:
                latest[p.endpoint.key] = p
    ordered = sorted(latest.values(), key=lambda p: (-p.probed_at, p.endpoint.sort_key()))
    return [ProxyEndpoint(p.endpoint.ip, p.endpoint.port) for p in ordered]


@dataclass
class ProbePhaseResult:
    outcomes: list[ProbeOutcome] = field(default_factory=list)
    skipped: list[ProxyEndpoint] = field(default_factory=list)


async def probe_phase(ledger: Optional[Ledger], candidates: Iterable[ProxyEndpoint], cfg: Config, bait_url: str,
                      origin_lookup, client_ip: Optional[str] = None) -> ProbePhaseResult:
    probe = functools.partial(
        probe_endpoint, bait_url=bait_url.rstrip("/") + OBJECT_1KB, origin_lookup=origin_lookup,
        client_ip=client_ip or cfg.client_ip, connect_timeout=cfg.connect_timeout,
        max_duration=cfg.probe_max_duration, threshold=cfg.similarity_threshold,
    )
    run = run_phase2(candidates, probe, cfg.probe_parallelism, cfg.probe_budget)
    out = ProbePhaseResult()
    async for outcome in run:
        if ledger is not None:
            ledger.append(outcome)
        out.outcomes.append(outcome)
    out.skipped = run.skipped
    if run.skipped:
        log.warning("budget exhausted: %d endpoint(s) left untested", len(run.skipped))
    return out


async def audit_phase(ledger: Optional[Ledger], endpoints: Iterable[ProxyEndpoint], cfg: Config, bait_url: str,
                      tls_url: Optional[str] = None, reference_urls: Optional[dict] = None):
    audit = functools.partial(
        audit_behavior, bait_url=bait_url, max_duration=cfg.audit_max_duration,
        connect_timeout=cfg.connect_timeout, tls_url=tls_url, reference_urls=reference_urls,
        tls_max_duration=cfg.tls_max_duration,
    )
    verdicts, inactive = await run_audits(endpoints, lambda ep: audit(ep), cfg.audit_parallelism)
    if ledger is not None:
        for v in verdicts:
            ledger.append(v)
    return verdicts, inactive


async def perf_phase(ledger: Optional[Ledger], endpoints, sites: SiteLists, cfg: Config, *,
                     duration: Optional[float] = None, rounds: Optional[int] = None, **kw) -> PerfScheduler:
    measure = functools.partial(measure_pdt, max_duration=cfg.perf_max_duration,
                                connect_timeout=cfg.connect_timeout, vantage_id=cfg.vantage_id)
    every = round(1 / cfg.https_ratio)
    sched = PerfScheduler(endpoints, sites, lambda ep, url, ref: measure(ep, url, ref),
                          revisit_interval=cfg.revisit_interval, https_every=every,
                          parallelism=cfg.perf_parallelism, **kw)
    async for sample in sched.run(duration=duration, rounds=rounds):
        if ledger is not None:
            ledger.append(sample)
    return sched


# --- hermetic demo -------------------------------------------------------

FLEET_KINDS = {
    "relay": lambda seed, rate: MockBehavior.relay(),
    "via": lambda seed, rate: MockBehavior.relay(reveal="via"),
    "xff": lambda seed, rate: MockBehavior.relay(reveal="xff"),
    "inject": lambda seed, rate: MockBehavior.inject_script(seed=seed),
    "alter": lambda seed, rate: MockBehavior.alter_html([(b"<title>", b"<title>Deal! ")], seed=seed),
    "mitm": lambda seed, rate: MockBehavior.tls_mitm(),
    "login": lambda seed, rate: MockBehavior.login_wall(),
    "blackhole": lambda seed, rate: MockBehavior.blackhole(),
    "reset": lambda seed, rate: MockBehavior.tcp_reset(),
    "slow": lambda seed, rate: MockBehavior.slow_drip(rate),
}


def parse_fleet(spec: str) -> list[tuple[str, int]]:
    """``relay=90,inject=10`` -> [("relay", 90), ("inject", 10)]."""
    out = []
    for item in filter(None, (s.strip() for s in spec.split(","))):
        name, sep, count = item.partition("=")
        name = name.strip().lower()
        if name not in FLEET_KINDS:
            raise ValueError(f"unknown fleet member kind {name!r} (known: {', '.join(sorted(FLEET_KINDS))})")
        try:
            n = int(count) if sep else 1
        except ValueError:
            raise ValueError(f"bad count in {item!r}") from None
        if n < 0:
            raise ValueError(f"negative count in {item!r}")
        out.append((name, n))
    if not out or sum(n for _, n in out) == 0:
        raise ValueError("fleet is empty")
    if sum(n for _, n in out) > 1000:
        raise ValueError("fleet larger than 1000 members")
    return out


def fleet_behaviors(fleet: list[tuple[str, int]], seed: int = 0, slow_rate: int = 1000) -> list[tuple[str, MockBehavior]]:
    out = []
    for name, n in fleet:
        for _ in range(n):
            out.append((name, FLEET_KINDS[name](seed + len(out), slow_rate)))
    return out


@dataclass
class DemoResult:
    report: Report
    ledger_path: Path
    truth: dict[tuple[str, int], str]
    outcomes: list[ProbeOutcome]
    verdicts: list[BehaviorVerdict]


def run_demo(fleet_spec: str, cfg: Config, workdir: Optional[Path] = None, seed: int = 0,
             slow_rate: int = 1000, perf_rounds: int = 1) -> DemoResult:
    """Bait origin + mock fleet on loopback, then ingest, probe, audit, perf and report."""
    fleet = parse_fleet(fleet_spec)
    workdir = Path(workdir or tempfile.mkdtemp(prefix="proxyaudit-demo-"))
    workdir.mkdir(parents=True, exist_ok=True)
    ledger_path = workdir / "ledger.jsonl"
    geo = load_geo(cfg)
    members = fleet_behaviors(fleet, seed, slow_rate)
    with Harness() as h:
        origin = h.serve_bait()
        ref_a = h.serve_site("ref-a", tls_cert="ref-a")
        ref_b = h.serve_site("ref-b", tls_cert="ref-b")
        proxies = h.spawn_fleet(b for _, b in members)
        truth = {p.endpoint.key: name for p, (name, _) in zip(proxies, members)}

        raw = "".join(f"{p.endpoint.ip}:{p.endpoint.port}\n" for p in proxies).encode()
        today = utc_today()
        candidates = merge_candidates([], parse_candidate_list(raw, "demo-fleet", today).endpoints)
        write_potential_list(workdir / "potential.txt", candidates)

        references = {"ref-a": ref_a.tls_base_url + "/", "ref-b": ref_b.tls_base_url + "/"}
        sites = SiteLists([ref_a.base_url + "/", ref_b.base_url + "/"], [ref_a.tls_base_url + "/"])

        async def funnel():
            with Ledger(ledger_path, writable=True) as ledger:
                probed = await probe_phase(ledger, candidates, cfg, origin.base_url, local_lookup(origin))
                working = [o.endpoint for o in probed.outcomes if o.category is HostCategory.WORKING]
                working = [ProxyEndpoint(e.ip, e.port) for e in sorted(working, key=lambda e: e.sort_key())]
                verdicts, _ = await audit_phase(ledger, working, cfg, origin.base_url,
                                                origin.tls_base_url + INDEX, references)
                if perf_rounds and working:
                    await perf_phase(ledger, working, sites, cfg, rounds=perf_rounds, seed=seed)
                return probed.outcomes, verdicts

        outcomes, verdicts = asyncio.run(funnel())

    report = build_report(Ledger(ledger_path).records(), geo=geo)
    report.write(workdir / "report")
    return DemoResult(report, ledger_path, truth, outcomes, verdicts)
