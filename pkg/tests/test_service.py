import json
import urllib.error
import urllib.request
from datetime import date

import pytest

from factories import ms, perf, probe, usage, verdict
from proxyaudit.ledger import GeoTable, Ledger
from proxyaudit.ledger import codec
from proxyaudit.model import AnonymityLevel, BehaviorClass, HostCategory, ProxyEndpoint, ValidationError
from proxyaudit.service import (
    NO_MATCH_ANONYMITY,
    NO_MATCH_COUNTRY,
    NO_TRUSTED,
    SelectionQuery,
    SelectionService,
    ServiceServer,
    Snapshot,
    select_proxy,
    usage_summary,
)

TODAY = date(2024, 6, 10)
FR1 = ProxyEndpoint("127.0.1.10", 8080)    # FR
FR2 = ProxyEndpoint("127.0.1.20", 8080)    # FR
DE = ProxyEndpoint("127.0.1.100", 8080)    # DE
US = ProxyEndpoint("127.0.1.150", 8080)    # US


def _records(pdts, anonymity=None, extra=()):
    recs = []
    for ep, pdt in pdts.items():
        recs.append(probe(ep, HostCategory.WORKING, ms(TODAY, 1), (anonymity or {}).get(ep, AnonymityLevel.ELITE)))
        recs.append(verdict(ep, BehaviorClass.TRUSTED, ms(TODAY, 2)))
        if pdt is not None:
            recs.append(perf(ep, pdt, ms(TODAY, 3)))
    return recs + list(extra)


def _snap(recs, as_of=None):
    return Snapshot.from_records(recs, GeoTable.fixture(), as_of or ms(TODAY, 20))


def test_selects_lowest_median_pdt():
    sel, reason = select_proxy(_snap(_records({FR1: 3400, DE: 1200})))
    assert reason is None and sel.endpoint == DE and sel.recent_median_pdt_ms == 1200 and sel.country == "DE"


def test_reason_codes():
    snap = _snap(_records({FR1: 100}, {FR1: AnonymityLevel.ANONYMOUS}))
    assert select_proxy(snap, SelectionQuery("US")) == (None, NO_MATCH_COUNTRY)
    assert select_proxy(snap, SelectionQuery("FR", AnonymityLevel.ELITE)) == (None, NO_MATCH_ANONYMITY)
    assert select_proxy(snap, SelectionQuery("FR", AnonymityLevel.ANONYMOUS))[0].endpoint == FR1
    assert select_proxy(_snap([]), SelectionQuery()) == (None, NO_TRUSTED)


def test_ever_suspicious_and_stale_and_unrated_are_excluded():
    old = ms(date(2024, 5, 10))
    recs = _records({FR1: 100, FR2: 500, DE: 50, US: 10}, extra=[
        verdict(FR1, BehaviorClass.SUSPICIOUS, old),            # caught once last month
        verdict(DE, BehaviorClass.UNRATED, ms(TODAY, 5)),       # latest verdict unrated
    ])
    recs = [r for r in recs if not (getattr(r, "endpoint", None) == US and hasattr(r, "behavior"))]
    recs.append(verdict(US, BehaviorClass.TRUSTED, ms(date(2024, 6, 1))))  # 9 days ago
    sel, _ = select_proxy(_snap(recs))
    assert sel.endpoint == FR2


def test_ties_break_on_uptime_then_endpoint():
    recs = _records({FR1: 100, FR2: 100, DE: 100})
    recs.append(verdict(FR2, BehaviorClass.TRUSTED, ms(date(2024, 6, 8))))
    assert select_proxy(_snap(recs))[0].endpoint == FR2
    assert select_proxy(_snap(_records({FR2: 100, FR1: 100})))[0].endpoint == FR1


def test_rank_is_invariant_under_pdt_scaling():
    base = {FR1: 420, FR2: 380, DE: 900}
    a = select_proxy(_snap(_records(base)))[0].endpoint
    b = select_proxy(_snap(_records({k: v * 7 for k, v in base.items()})))[0].endpoint
    assert a == b == FR2


def test_query_validation():
    with pytest.raises(ValidationError):
        SelectionQuery("France")
    with pytest.raises(ValidationError):
        SelectionQuery.parse("FR", "stealthy")
    assert SelectionQuery.parse("fr", "Elite") == SelectionQuery("FR", AnonymityLevel.ELITE)


def test_usage_summary_arithmetic():
    two = [usage(http_bytes=100, geo_localized=True), usage(http_bytes=300, geo_localized=False)]
    assert usage_summary(two)["geo_localized"]["bytes"] == 0.25
    assert usage_summary([usage(proxy_country="US") for _ in range(10)])["countries"]["US"]["downloads"] == 1.0
    empty = usage_summary([])
    assert empty["downloads"] == 0 and empty["geo_localized"] == {"downloads": 0.0, "bytes": 0.0}


def _get(url):
    with urllib.request.urlopen(url, timeout=5) as r:
        return r.status, json.loads(r.read())


def _post(url, body):
    req = urllib.request.Request(url, data=json.dumps(body).encode(), method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=5) as r:
            return r.status, json.loads(r.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


def test_http_endpoints(tmp_path):
    path = tmp_path / "l.jsonl"
    with Ledger(path, writable=True) as led:
        led.extend(_records({FR1: 800, DE: 300}))
    with Ledger(path, writable=True) as led:
        svc = SelectionService(led, GeoTable.fixture(), clock=lambda: ms(TODAY, 20))
        with ServiceServer(svc, port=0, snapshot_interval=3600) as srv:
            status, body = _get(srv.url + "/v1/select")
            assert status == 200 and body["proxy"]["endpoint"] == str(DE)
            assert _get(srv.url + "/v1/select?country=US")[1] == {"proxy": None, "reason": "no-match-country"}
            assert _get(srv.url + "/v1/select?country=FR&anonymity=elite")[1]["proxy"]["endpoint"] == str(FR1)
            with pytest.raises(urllib.error.HTTPError):
                _get(srv.url + "/v1/select?country=XYZ")

            good = codec.usage_to(usage(geo_localized=True))
            assert _post(srv.url + "/v1/usage", good) == (200, {"accepted": True, "reason": None})
            assert _post(srv.url + "/v1/usage", {**good, "nav_error": "http://x.example/"})[1]["reason"] == "pii"
            assert _post(srv.url + "/v1/usage", {**good, "https_bytes": -5})[1]["reason"] == "invalid"
            summary = _get(srv.url + "/v1/summary")[1]
            assert summary["downloads"] == 1
            assert summary["proxies_per_country"] == {"DE": 1, "FR": 1}
    assert len(list(Ledger(path).records("usage"))) == 1
