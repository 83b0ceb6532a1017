"""Levenshtein distance over byte strings."""

from __future__ import annotations


def levenshtein(a: bytes, b: bytes) -> int:
    """Minimum number of unit-cost insertions, deletions and substitutions.

    Uses the bit-vector recurrence of Myers/Hyyrö with Python integers as
    arbitrary-width bit vectors, so each row of the DP costs a handful of
    big-integer operations instead of ``len(a)`` Python steps.
    """
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    m = len(a)
    if not b:
        return m
    peq: dict[int, int] = {}
    for i, c in enumerate(a):
        peq[c] = peq.get(c, 0) | (1 << i)
    mask = (1 << m) - 1
    high = 1 << (m - 1)
    pv = mask
    mv = 0
    score = m
    for c in b:
        eq = peq.get(c, 0)
        xv = eq | mv
        xh = ((((eq & pv) + pv) & mask) ^ pv) | eq
        ph = mv | (~(xh | pv) & mask)
        mh = pv & xh
        if ph & high:
            score += 1
        elif mh & high:
            score -= 1
        ph = ((ph << 1) | 1) & mask
        mh = (mh << 1) & mask
        pv = mh | (~(xv | ph) & mask)
        mv = ph & xv
    return score
