import csv
import json
import random
from datetime import date, timedelta
from importlib import resources

import pytest

from factories import ms, perf, probe, usage, verdict
from oracles import geo_scan, recount_days
from proxyaudit.ledger import GeoTable, Ledger, LedgerError, LedgerLocked, build_report, compute_stats, lifetime_uptime, stats_csv
from proxyaudit.ledger import codec
from proxyaudit.model import BehaviorClass, HostCategory, ProxyEndpoint, ValidationError

A = ProxyEndpoint("127.0.1.5", 8080)
B = ProxyEndpoint("127.0.1.70", 3128)
C = ProxyEndpoint("203.0.113.9", 80)
D1 = date(2024, 1, 1)


# --- store -----------------------------------------------------------------

def test_append_assigns_increasing_seq_and_survives_reopen(tmp_path):
    path = tmp_path / "l.jsonl"
    with Ledger(path, writable=True) as led:
        assert led.append(probe(A, HostCategory.WORKING, ms(D1))) == 1
        assert led.append(verdict(A, BehaviorClass.TRUSTED, ms(D1))) == 2
    with Ledger(path, writable=True) as led:
        assert led.append(perf(A, 50, ms(D1))) == 3
    objs = [json.loads(line) for line in path.read_text().splitlines()]
    assert [(o["kind"], o["seq"]) for o in objs] == [("probe", 1), ("verdict", 2), ("perf", 3)]
    assert all({"kind", "seq", "ts"} <= set(o) for o in objs)


def test_every_kind_round_trips(tmp_path):
    recs = [
        probe(A, HostCategory.WORKING, ms(D1)),
        probe(B, HostCategory.UNRESPONSIVE, ms(D1)),
        verdict(A, BehaviorClass.SUSPICIOUS, ms(D1), https=True),
        perf(A, 70, ms(D1)),
        perf(A, None, ms(D1), failed=True),
        usage(geo_localized=True, nav_error="ERR_TIMED_OUT"),
        verdict(B, BehaviorClass.SUSPICIOUS, ms(D1)).evidence[0],
    ]
    with Ledger(tmp_path / "l.jsonl", writable=True) as led:
        led.extend(recs)
        assert list(led.records()) == recs
        assert list(led.records("perf")) == recs[3:5]


def test_torn_tail_is_dropped_on_open(tmp_path):
    path = tmp_path / "l.jsonl"
    with Ledger(path, writable=True) as led:
        led.append(probe(A, HostCategory.WORKING, ms(D1)))
    with open(path, "ab") as fh:
        fh.write(b'{"kind":"probe","seq":2,"ts"')
    assert len(list(Ledger(path).records())) == 1  # readers skip it too
    with Ledger(path, writable=True) as led:
        assert led.append(probe(B, HostCategory.OTHER, ms(D1))) == 2
    assert len(list(Ledger(path).records())) == 2


def test_non_increasing_seq_is_detected(tmp_path):
    path = tmp_path / "l.jsonl"
    line = json.dumps({"kind": "perf", "seq": 1, "ts": 0, **codec.encode(perf(A, 1, 0))[2]})
    path.write_text(line + "\n" + line + "\n")
    with pytest.raises(LedgerError):
        Ledger(path)


def test_single_writer_lock(tmp_path):
    path = tmp_path / "l.jsonl"
    with Ledger(path, writable=True):
        with pytest.raises(LedgerLocked):
            Ledger(path, writable=True)
        Ledger(path)  # readers are fine
    Ledger(path, writable=True).close()


def test_pii_usage_is_rejected_before_it_reaches_the_store():
    payload = codec.usage_to(usage())
    payload["nav_error"] = "could not reach 10.1.2.3"
    with pytest.raises(ValidationError) as e:
        codec.usage_from(payload)
    assert e.value.reason == "pii"
    payload = codec.usage_to(usage())
    payload["referrer"] = "x"
    with pytest.raises(ValidationError) as e:
        codec.usage_from(payload)
    assert e.value.reason == "invalid"


# --- geo -------------------------------------------------------------------

def _fixture_rows():
    text = (resources.files("proxyaudit.ledger") / "data" / "geo_fixture.csv").read_text()
    rows = []
    for rec in csv.reader(text.splitlines()):
        if rec and not rec[0].startswith("#") and rec[0] != "cidr":
            rows.append((rec[0], rec[1], int(rec[2]), rec[3]))
    return rows


def test_geo_fixture_examples():
    g = GeoTable.fixture()
    assert g.lookup("192.0.2.77")[:2] == ("FR", 64496)
    assert g.lookup("8.8.8.8") == ("ZZ", 0, "unknown")
    assert g.lookup("127.0.1.63").country == "FR"  # last address of the /26
    assert g.lookup("127.0.1.64").country == "DE"
    assert g.lookup("10.1.0.1").country == "FR" and g.lookup("10.2.0.1").country == "US"


def test_geo_matches_brute_force_scan():
    g = GeoTable.fixture()
    rows = _fixture_rows()
    rng = random.Random(0)
    probes = ["127.0.1.0", "127.0.1.255", "127.0.3.255", "10.255.255.255", "10.1.255.255", "203.0.113.255"]
    probes += [f"{rng.choice([10, 127, 192, 198, 203])}.{rng.randrange(256)}.{rng.randrange(256)}.{rng.randrange(256)}"
               for _ in range(3000)]
    for ip in probes:
        assert tuple(g.lookup(ip)) == geo_scan(rows, ip), ip


def test_missing_geo_database_is_an_error(tmp_path):
    with pytest.raises(FileNotFoundError):
        GeoTable.load(tmp_path / "nope.csv")


# --- lifetime / uptime -----------------------------------------------------

def test_lifetime_uptime_examples():
    assert lifetime_uptime({D1}) == (1, 1)
    assert lifetime_uptime({D1, date(2024, 1, 5)}) == (5, 2)
    full = {D1 + timedelta(days=i) for i in range(10)}
    assert lifetime_uptime(full) == (10, 10)
    with pytest.raises(ValueError):
        lifetime_uptime(set())


def test_stats_rollup_and_replay_determinism(tmp_path):
    path = tmp_path / "l.jsonl"
    d5 = date(2024, 1, 5)
    with Ledger(path, writable=True) as led:
        led.append(probe(A, HostCategory.WORKING, ms(D1)))
        led.append(verdict(A, BehaviorClass.SUSPICIOUS, ms(D1)))
        led.append(verdict(A, BehaviorClass.TRUSTED, ms(d5), https=True))
        led.append(verdict(B, BehaviorClass.TRUSTED, ms(d5)))
        for i, pdt in enumerate([300, 100, 200, 900]):
            led.append(perf(B, pdt, ms(d5, 1 + i)))
        led.append(perf(B, 5, ms(date(2024, 1, 3))))  # older than 24 h: excluded
    first = stats_csv(compute_stats(Ledger(path).records(), GeoTable.fixture()))
    second = stats_csv(compute_stats(Ledger(path).records(), GeoTable.fixture()))
    assert first == second
    stats = {s.endpoint.key: s for s in compute_stats(Ledger(path).records(), GeoTable.fixture())}
    a, b = stats[A.key], stats[B.key]
    assert (a.lifetime_days, a.uptime_days, a.ever_suspicious, a.https_support) == (5, 2, True, True)
    assert a.latest_behavior is BehaviorClass.TRUSTED and a.country == "FR"
    assert (b.lifetime_days, b.uptime_days, b.ever_suspicious, b.country) == (1, 1, False, "DE")
    assert b.recent_median_pdt_ms == 250


def test_probe_only_endpoints_have_no_stats():
    assert compute_stats([probe(A, HostCategory.WORKING, ms(D1))]) == []


# --- reports ---------------------------------------------------------------

def test_report_day_counts_example():
    recs = [verdict(A, BehaviorClass.TRUSTED, ms(D1)), verdict(B, BehaviorClass.SUSPICIOUS, ms(D1)),
            verdict(C, BehaviorClass.UNRATED, ms(D1))]
    rep = build_report(recs, D1, D1)
    assert rep.behavior_series == [(D1, {"active": 3, "trusted": 1, "suspicious": 1, "unrated": 1})]
    assert rep.suspicious_fraction == pytest.approx(1 / 3)


def test_empty_window_is_all_zero():
    rep = build_report([verdict(A, BehaviorClass.TRUSTED, ms(D1))], date(2023, 5, 1), date(2023, 5, 3))
    assert len(rep.probe_series) == 3
    assert all(sum(c.values()) == 0 for _, c in rep.probe_series + rep.behavior_series)
    assert rep.suspicious_fraction == 0.0 and rep.stats == []
    assert build_report([]).text().count("0") >= 5


def test_report_window_rejects_reversed_bounds():
    with pytest.raises(ValueError):
        build_report([], date(2024, 1, 2), date(2024, 1, 1))


@pytest.mark.parametrize("seed", range(5))
def test_report_series_match_brute_force_recount(tmp_path, seed):
    rng = random.Random(seed)
    eps = [ProxyEndpoint(f"127.0.1.{i + 1}", 8000 + i) for i in range(40)]
    path = tmp_path / "l.jsonl"
    with Ledger(path, writable=True, fsync=False) as led:
        for _ in range(rng.randint(200, 1000)):
            ep = rng.choice(eps)
            at = ms(D1 + timedelta(days=rng.randrange(6)), rng.randrange(24))
            if rng.random() < 0.6:
                led.append(probe(ep, rng.choice(list(HostCategory)), at))
            else:
                led.append(verdict(ep, rng.choice(list(BehaviorClass)), at))
    raw = list(Ledger(path).raw())
    cats, beh = recount_days(raw)
    rep = build_report(Ledger(path).records(), D1, D1 + timedelta(days=5))
    for day, counts in rep.probe_series:
        assert counts == {c.value: cats[day][c.value] for c in HostCategory}
    for day, counts in rep.behavior_series:
        assert counts == {k: beh[day][k] for k in ("active", "trusted", "suspicious", "unrated")}


def test_report_files_and_geo_rollup(tmp_path):
    recs = [probe(A, HostCategory.WORKING, ms(D1)), probe(B, HostCategory.WORKING, ms(D1)),
            verdict(A, BehaviorClass.TRUSTED, ms(D1)), verdict(B, BehaviorClass.SUSPICIOUS, ms(D1)),
            perf(A, 100, ms(D1)), perf(B, 40, ms(D1))]
    rep = build_report(recs, geo=GeoTable.fixture())
    assert rep.countries == [("DE", 1, 1), ("FR", 1, 0)]
    assert rep.pdt["trusted"] == (1, 100.0, 100.0) and rep.pdt["suspicious"] == (1, 40.0, 40.0)
    assert rep.lifetime_cdf == [(1, 1.0)]
    written = {p.name for p in rep.write(tmp_path / "out")}
    assert {"summary.txt", "categories_by_day.csv", "proxy_stats.csv", "countries.csv"} <= written
