import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ap_brute_force, lcs_recursive, levenshtein_recursive, similarity_oracle
from proxyaudit.analysis import (
    SimilarityMatrix,
    affinity_propagation,
    aggregate_header_stats,
    cluster_manipulations,
    header_diff,
    levenshtein,
    net_similarity,
    similarity_score,
)
from proxyaudit.analysis.similarity import lcs_length, tokenize
from proxyaudit.model import DeltaKind, EvidenceKind, ManipulationEvidence, ProxyEndpoint

ALPHABET = b"ab c\nd"


def _rand_bytes(rng, max_len=12):
    return bytes(rng.choice(ALPHABET) for _ in range(rng.randint(0, max_len)))


# --- token similarity ------------------------------------------------------

def test_similarity_matches_recursive_oracle():
    rng = random.Random(4)
    for _ in range(500):
        a, b = _rand_bytes(rng), _rand_bytes(rng)
        assert similarity_score(a, b) == similarity_oracle(a, b)


def test_similarity_edge_cases():
    assert similarity_score(b"", b"") == 1.0
    assert similarity_score(b"a", b"") == 0.0
    assert similarity_score(b"", b"a") == 0.0
    assert similarity_score(b"x y z", b"x y z") == 1.0
    assert similarity_score(b"a b c d", b"a b") == 0.5


def test_tokenize_whitespace_runs():
    assert tokenize(b"  a\tb\r\n c  ") == [b"a", b"b", b"c"]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 5), max_size=40), st.lists(st.integers(0, 5), max_size=40))
def test_lcs_bitparallel_matches_recursion(a, b):
    assert lcs_length(a, b) == lcs_recursive(a, b)


@settings(max_examples=100, deadline=None)
@given(st.binary(max_size=60), st.binary(max_size=60))
def test_similarity_symmetric_and_bounded(a, b):
    s = similarity_score(a, b)
    assert 0.0 <= s <= 1.0
    assert s == similarity_score(b, a)


# --- edit distance ---------------------------------------------------------

def test_levenshtein_matches_recursive_oracle():
    rng = random.Random(5)
    for _ in range(500):
        a, b = _rand_bytes(rng), _rand_bytes(rng)
        assert levenshtein(a, b) == levenshtein_recursive(a, b)


def test_levenshtein_known_values():
    assert levenshtein(b"kitten", b"sitting") == 3
    assert levenshtein(b"", b"abc") == 3
    assert levenshtein(b"flaw", b"lawn") == 2


def test_levenshtein_long_inputs_exceed_a_machine_word():
    rng = random.Random(1)
    a = bytes(rng.choice(b"acgt") for _ in range(150))
    b = bytearray(a)
    del b[10:13]
    b[100:100] = b"zz"
    assert levenshtein(a, bytes(b)) == 5


@settings(max_examples=150, deadline=None)
@given(st.binary(max_size=30), st.binary(max_size=30), st.binary(max_size=30))
def test_levenshtein_metric_axioms(a, b, c):
    assert levenshtein(a, b) == levenshtein(b, a)
    assert (levenshtein(a, b) == 0) == (a == b)
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
    assert abs(len(a) - len(b)) <= levenshtein(a, b) <= max(len(a), len(b))


# --- affinity propagation --------------------------------------------------

def test_affinity_matches_brute_force_optimum():
    rng = random.Random(7)
    hits = 0
    for _ in range(100):
        n = rng.randint(2, 8)
        strings = [_rand_bytes(rng, 10) for _ in range(n)]
        d = np.array([[levenshtein(x, y) for y in strings] for x in strings], dtype=float)
        S = SimilarityMatrix(-d)
        res = affinity_propagation(S)
        got = net_similarity(S, res.exemplar_of)
        if abs(got - ap_brute_force((-d).tolist(), S.preference)) <= 1e-9:
            hits += 1
    assert hits >= 95


def test_affinity_recovers_planted_clusters():
    for seed in range(20):
        rng = random.Random(seed)
        base_a = bytes(rng.choice(b"abcdefgh") for _ in range(30))
        base_b = bytes(rng.choice(b"stuvwxyz") for _ in range(30))

        def mutate(s):
            s = bytearray(s)
            s[rng.randrange(len(s))] = rng.choice(b"abcdefghstuvwxyz")
            return bytes(s)

        group_a = [mutate(base_a) for _ in range(4)]
        group_b = [mutate(base_b) for _ in range(4)]
        pts = group_a + group_b
        d = np.array([[levenshtein(x, y) for y in pts] for x in pts], dtype=float)
        res = affinity_propagation(SimilarityMatrix(-d))
        labels = [res.exemplar_of[i] for i in range(8)]
        assert len(set(labels[:4])) == 1 and len(set(labels[4:])) == 1
        assert labels[0] != labels[4]


def test_affinity_singleton_and_validation():
    res = affinity_propagation(SimilarityMatrix(np.zeros((1, 1))))
    assert res.exemplar_of == {0: 0}
    with pytest.raises(ValueError):
        SimilarityMatrix(np.zeros((0, 0)))
    with pytest.raises(ValueError):
        SimilarityMatrix(np.array([[0.0, np.inf], [1.0, 0.0]]))


def test_affinity_is_deterministic():
    rng = random.Random(3)
    pts = [_rand_bytes(rng, 10) for _ in range(8)]
    d = np.array([[levenshtein(x, y) for y in pts] for x in pts], dtype=float)
    a = affinity_propagation(SimilarityMatrix(-d))
    b = affinity_propagation(SimilarityMatrix(-d))
    assert a.exemplar_of == b.exemplar_of


# --- headers ---------------------------------------------------------------

def test_header_diff_kinds():
    base = [("Host", "bait"), ("Accept", "*/*"), ("User-Agent", "ua")]
    seen = [("host", "bait"), ("user-agent", "other"), ("Via", "1.1 squid")]
    deltas = {(d.name, d.kind) for d in header_diff("request", base, seen)}
    assert deltas == {("accept", DeltaKind.REMOVED), ("user-agent", DeltaKind.MODIFIED), ("via", DeltaKind.ADDED)}


def test_header_diff_ignores_case_whitespace_and_list_splitting():
    base = [("Cache-Control", "no-cache,  max-age=0")]
    assert header_diff("request", base, [("cache-control", "no-cache, max-age=0")]) == []
    split = [("Accept", "a"), ("Accept", "b")]
    assert header_diff("request", [("Accept", "a, b")], split) == []


def test_header_diff_identity_is_empty():
    hs = [("A", "1"), ("B", "2"), ("A", "3")]
    assert header_diff("response", hs, hs) == []


def test_aggregate_header_stats_fractions_and_watchlist():
    eps = [ProxyEndpoint("192.0.2.1", p) for p in range(1, 5)]
    deltas = []
    for ep in eps[:2]:
        deltas += [(ep, d) for d in header_diff("response", [], [("Set-Cookie", "x=1")])]
    deltas += [(eps[0], d) for d in header_diff("request", [], [("Via", "1.1 x")])]
    deltas += [(eps[0], d) for d in header_diff("request", [], [("Via", "1.1 y")])]
    stats = aggregate_header_stats(deltas, eps)
    assert stats.probed == 4
    assert stats.table[("response", "set-cookie", "added")] == 0.5
    assert stats.table[("request", "via", "added")] == 0.25
    assert ("response", "set-cookie", "added") in stats.watchlist
    assert stats.top(1)[0][0] == ("response", "set-cookie", "added")


# --- clustering ------------------------------------------------------------

def test_cluster_manipulations_groups_similar_payloads():
    ep1, ep2, ep3 = (ProxyEndpoint("192.0.2.9", p) for p in (1, 2, 3))

    def ev(ep, payload):
        return ManipulationEvidence(ep, "/index.html", EvidenceKind.INJECTED, payload, "html", 0)

    ads = [b'<script src="http://ads.example/a.js"></script>', b'<script src="http://ads.example/b.js"></script>',
           b'<script src="http://ads.example/c.js"></script>']
    miner = [b"<iframe src=//coin.example/mine?id=1 width=0>", b"<iframe src=//coin.example/mine?id=2 width=0>"]
    evidence = [ev(ep1, ads[0]), ev(ep2, ads[1]), ev(ep2, ads[2]), ev(ep3, miner[0]), ev(ep3, miner[1]),
                ev(ep1, ads[0])]
    clusters = cluster_manipulations(evidence)
    assert [c.size for c in clusters] == [3, 2]
    assert set(clusters[0].payloads) == set(ads)
    assert clusters[0].endpoints == [ep1, ep2]
    assert clusters[1].endpoints == [ep3]
    assert cluster_manipulations([]) == []
