"""``proxyaudit`` command line: one subcommand per funnel phase, plus reports, the service and a demo."""

from __future__ import annotations

import argparse
import asyncio
import logging
import sys
from datetime import date
from pathlib import Path

from . import pipeline
from .analysis.clustering import cluster_manipulations
from .config import ConfigError, load_config, parse_duration
from .ingest import CandidateSource, ingest_sources, write_potential_list
from .ledger.report import build_report
from .ledger.store import Ledger, LedgerError
from .model import BehaviorVerdict, ManipulationEvidence, utc_today

log = logging.getLogger("proxyaudit")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or configuration: exit status 2."""


def _date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a YYYY-MM-DD date: {text!r}") from None


def _duration(text: str) -> float:
    try:
        return parse_duration(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def cmd_ingest(args, cfg) -> int:
    out = Path(args.out or cfg.potential_list)
    existing = pipeline.load_candidates(out) if out.is_file() else []
    sources = []
    for i, src in enumerate(args.source):
        if not Path(src).is_file():
            raise UsageError(f"source list not found: {src}")
        sources.append(CandidateSource(f"file-{i}:{src}", "file", src))
    merged, malformed = ingest_sources(sources, args.as_of or utc_today(), existing)
    write_potential_list(out, merged)
    print(f"{len(merged)} candidate(s) written to {out}; {malformed} malformed line(s) skipped")
    return EXIT_OK


def cmd_serve_bait(args, cfg) -> int:
    from .bait.origin import serve_bait

    async def main():
        origin = await serve_bait(args.host, args.http_port, args.tls_port)
        print(f"bait origin on {origin.base_url} and {origin.tls_base_url}", flush=True)
        try:
            await asyncio.Event().wait()
        finally:
            await origin.close()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_probe(args, cfg) -> int:
    from .probe import http_lookup

    path = args.list or cfg.potential_list
    try:
        candidates = pipeline.load_candidates(path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    if args.parallelism:
        cfg.probe_parallelism = args.parallelism
    if args.budget:
        cfg.probe_budget = args.budget
    with Ledger(cfg.ledger, writable=True) as ledger:
        res = asyncio.run(pipeline.probe_phase(ledger, candidates, cfg, cfg.bait_url, http_lookup(cfg.bait_url)))
    counts: dict[str, int] = {}
    for o in res.outcomes:
        counts[o.category.value] = counts.get(o.category.value, 0) + 1
    print(" ".join(f"{k}={v}" for k, v in sorted(counts.items())) or "no outcomes",
          f"skipped={len(res.skipped)}")
    return EXIT_OK


def cmd_audit(args, cfg) -> int:
    if args.parallelism:
        cfg.audit_parallelism = args.parallelism
    with Ledger(cfg.ledger, writable=True) as ledger:
        endpoints = pipeline.working_set(ledger, args.window_days or cfg.working_window_days)
        verdicts, inactive = asyncio.run(pipeline.audit_phase(
            ledger, endpoints, cfg, cfg.bait_url, cfg.bait_tls_url or None, cfg.references()))
    counts: dict[str, int] = {}
    for v in verdicts:
        counts[v.behavior.value] = counts.get(v.behavior.value, 0) + 1
    print(" ".join(f"{k}={v}" for k, v in sorted(counts.items())) or "no verdicts", f"inactive={len(inactive)}")
    return EXIT_OK


def cmd_perf(args, cfg) -> int:
    sites = pipeline.SiteLists.from_files(args.http_list or cfg.http_sites, args.https_list or cfg.https_sites)
    try:
        sites.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.interval:
        cfg.revisit_interval = args.interval
    with Ledger(cfg.ledger, writable=True) as ledger:
        window = cfg.working_window_days

        def current():
            return pipeline.working_set(Ledger(cfg.ledger), window)

        sched = asyncio.run(pipeline.perf_phase(ledger, current, sites, cfg, duration=args.duration, rounds=args.rounds))
    print(f"rounds={sched.stats.rounds} samples={sched.stats.samples} lag={sched.stats.lag:.1f}s")
    return EXIT_OK


def _hex_preview(data: bytes, n: int = 48) -> str:
    return data[:n].hex(" ") + (" ..." if len(data) > n else "")


def _text_preview(data: bytes, n: int = 120) -> str:
    text = data[:n].decode("utf-8", errors="replace")
    return "".join(c if c.isprintable() else "." for c in text) + (" ..." if len(data) > n else "")


def cluster_report(evidence) -> str:
    clusters = cluster_manipulations(evidence)
    lines = [f"{len(clusters)} cluster(s) over {sum(c.size for c in clusters)} distinct payload(s)"]
    for i, c in enumerate(clusters, 1):
        lines.append("")
        lines.append(f"cluster {i}: {c.size} payload(s), {len(c.endpoints)} endpoint(s)")
        lines.append(f"  exemplar hex : {_hex_preview(c.exemplar)}")
        lines.append(f"  exemplar text: {_text_preview(c.exemplar)}")
        lines.append(f"  endpoints    : {', '.join(str(e) for e in c.endpoints)}")
    return "\n".join(lines) + "\n"


def ledger_evidence(ledger: Ledger) -> list[ManipulationEvidence]:
    seen, out = set(), []
    for rec in ledger.records():
        items = rec.evidence if isinstance(rec, BehaviorVerdict) else (rec,) if isinstance(rec, ManipulationEvidence) else ()
        for ev in items:
            key = (ev.endpoint.key, ev.object_path, ev.payload, ev.observed_at)
            if key not in seen:
                seen.add(key)
                out.append(ev)
    return out


def cmd_cluster(args, cfg) -> int:
    text = cluster_report(ledger_evidence(Ledger(cfg.ledger)))
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    if args.start and args.end and args.end < args.start:
        raise UsageError("--to is before --from")
    report = build_report(Ledger(cfg.ledger).records(), args.start, args.end, geo=pipeline.load_geo(cfg))
    if args.out:
        report.write(args.out)
    sys.stdout.write(report.text())
    return EXIT_OK


def cmd_serve(args, cfg) -> int:
    from .service import SelectionService, ServiceServer

    port = cfg.service_port if args.port is None else args.port
    interval = args.snapshot_interval or cfg.snapshot_interval
    with Ledger(cfg.ledger, writable=True) as ledger:
        service = SelectionService(ledger, pipeline.load_geo(cfg), cfg.working_window_days)
        server = ServiceServer(service, cfg.bind_host, port, interval)
        print(f"selection service on {server.url}", flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.httpd.server_close()
    return EXIT_OK


def cmd_demo(args, cfg) -> int:
    try:
        pipeline.parse_fleet(args.fleet)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = pipeline.run_demo(args.fleet, cfg, args.workdir, args.seed, args.slow_rate, args.perf_rounds)
    sys.stdout.write(result.report.text())
    print(f"\nledger: {result.ledger_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proxyaudit", description="Audit free HTTP(S) proxies against a bait origin.")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--ledger", help="ledger path (overrides the configuration)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="merge candidate lists into the potential list")
    s.add_argument("--source", action="append", required=True, help="candidate list file (repeatable)")
    s.add_argument("--as-of", type=_date, help="sighting date stamped on every entry (default: today, UTC)")
    s.add_argument("--out", help="potential list path")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("serve-bait", help="run the bait origin")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--http-port", type=int, default=8000)
    s.add_argument("--tls-port", type=int, default=8443)
    s.set_defaults(func=cmd_serve_bait)

    s = sub.add_parser("probe", help="probe the potential list for working proxies")
    s.add_argument("--list", help="potential list path")
    s.add_argument("--parallelism", type=int)
    s.add_argument("--budget", type=_duration)
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("audit", help="audit recently working proxies for tampering")
    s.add_argument("--window-days", type=int)
    s.add_argument("--parallelism", type=int)
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("perf", help="recurring page download timing")
    s.add_argument("--http-list")
    s.add_argument("--https-list")
    s.add_argument("--interval", type=_duration)
    s.add_argument("--duration", type=_duration, help="stop after this long (default: run forever)")
    s.add_argument("--rounds", type=int)
    s.set_defaults(func=cmd_perf)

    s = sub.add_parser("cluster", help="cluster manipulation payloads found by audits")
    s.add_argument("--out")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("report", help="day series, rollups and per-proxy statistics")
    s.add_argument("--from", dest="start", type=_date)
    s.add_argument("--to", dest="end", type=_date)
    s.add_argument("--out", help="directory for CSV series and summary.txt")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("serve", help="selection and usage-statistics service")
    s.add_argument("--port", type=int)
    s.add_argument("--snapshot-interval", type=_duration)
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("demo", help="run the whole funnel against a loopback mock fleet")
    s.add_argument("--fleet", default="relay=90,inject=10",
                   help=f"kind=count list; kinds: {', '.join(sorted(pipeline.FLEET_KINDS))}")
    s.add_argument("--workdir", type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--slow-rate", type=int, default=1000, help="bytes/s for slow members")
    s.add_argument("--perf-rounds", type=int, default=1)
    s.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.ledger:
            cfg.ledger = args.ledger
        return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"proxyaudit: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LedgerError as exc:
        print(f"proxyaudit: ledger error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:  # phase failure; the ledger is append-only so it stays consistent
        log.debug("unhandled", exc_info=True)
        print(f"proxyaudit: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
