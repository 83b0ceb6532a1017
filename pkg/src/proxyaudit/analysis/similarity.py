"""Token-level content similarity between expected and received bytes."""

from __future__ import annotations

import re

_TOKEN = re.compile(rb"\S+")


def tokenize(data: bytes) -> list[bytes]:
    """Split into maximal runs of non-whitespace bytes."""
    return _TOKEN.findall(data)


def lcs_length(a: list, b: list) -> int:
    """Length of the longest common subsequence of two sequences.

    Bit-parallel formulation: one machine-word-free integer per row keeps
    this fast enough for pages with thousands of tokens.
    """
    # shared prefix/suffix are always part of an LCS
    lo = 0
    while lo < len(a) and lo < len(b) and a[lo] == b[lo]:
        lo += 1
    hi = 0
    while hi < len(a) - lo and hi < len(b) - lo and a[-1 - hi] == b[-1 - hi]:
        hi += 1
    a = a[lo : len(a) - hi]
    b = b[lo : len(b) - hi]
    if not a or not b:
        return lo + hi
    if len(a) < len(b):
        a, b = b, a
    match: dict = {}
    for i, tok in enumerate(a):
        match[tok] = match.get(tok, 0) | (1 << i)
    m = len(a)
    full = (1 << m) - 1
    row = full
    for tok in b:
        u = row & match.get(tok, 0)
        row = ((row + u) | (row - u)) & full
    return lo + hi + m - bin(row).count("1")


def similarity_score(expected: bytes, received: bytes) -> float:
    """Fraction of tokens the two byte strings have in common, in [0, 1]."""
    te = tokenize(expected)
    tr = tokenize(received)
    if not te and not tr:
        return 1.0
    if not te or not tr:
        return 0.0
    return lcs_length(te, tr) / max(len(te), len(tr))
