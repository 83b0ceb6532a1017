"""Affinity propagation clustering by responsibility/availability messages."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

# scale of the deterministic jitter used to break exact ties between points
_TIE_JITTER = 1e-12


@dataclass
class SimilarityMatrix:
    """Pairwise similarities plus the self-preference placed on the diagonal.

    When ``preference`` is omitted it defaults to the median of the
    off-diagonal entries.
    """

    s: np.ndarray
    preference: Optional[float] = None

    def __post_init__(self) -> None:
        self.s = np.array(self.s, dtype=float)
        if self.s.ndim != 2 or self.s.shape[0] != self.s.shape[1]:
            raise ValueError("similarity matrix must be square")
        if self.n == 0:
            raise ValueError("cannot cluster zero points")
        off = self.s[~np.eye(self.n, dtype=bool)]
        if not np.all(np.isfinite(off)):
            raise ValueError("off-diagonal similarities must be finite")
        if self.preference is None:
            self.preference = float(np.median(off)) if off.size else 0.0

    @property
    def n(self) -> int:
        return self.s.shape[0]

    def with_preference(self) -> np.ndarray:
        s = self.s.copy()
        np.fill_diagonal(s, self.preference)
        return s


@dataclass
class ClusterAssignment:
    exemplar_of: dict[int, int]
    clusters: dict[int, list[int]] = field(default_factory=dict)
    converged: bool = True
    iterations: int = 0

    @property
    def exemplars(self) -> list[int]:
        return sorted(self.clusters)


def net_similarity(S: SimilarityMatrix, exemplar_of: dict[int, int]) -> float:
    """Sum of point-to-exemplar similarities plus one preference per exemplar."""
    s = S.with_preference()
    return float(sum(s[i, k] for i, k in exemplar_of.items()))


def assign(s: np.ndarray, exemplars: list[int]) -> dict[int, int]:
    """Map every point to its most similar exemplar (lowest index on ties)."""
    ex = sorted(exemplars)
    cols = s[:, ex]
    out = {}
    for i in range(s.shape[0]):
        out[i] = i if i in ex else ex[int(np.argmax(cols[i]))]
    return out


def affinity_propagation(
    S: SimilarityMatrix,
    damping: float = 0.5,
    max_iters: int = 1000,
    convergence_iters: int = 100,
) -> ClusterAssignment:
    if not 0.0 < damping < 1.0:
        raise ValueError("damping must lie strictly between 0 and 1")
    n = S.n
    s = S.with_preference()
    if n == 1:
        return ClusterAssignment({0: 0}, {0: [0]}, True, 0)

    # deterministic jitter so symmetric duplicates do not oscillate forever
    rng = np.random.default_rng(0)
    scale = np.abs(s).max() or 1.0
    sj = s + _TIE_JITTER * scale * rng.standard_normal((n, n))

    R = np.zeros((n, n))
    A = np.zeros((n, n))
    idx = np.arange(n)
    last: Optional[np.ndarray] = None
    stable = 0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        # responsibilities: subtract the best competing (a + s), or the runner-up on the argmax
        AS = A + sj
        best = np.argmax(AS, axis=1)
        first = AS[idx, best]
        AS[idx, best] = -np.inf
        second = AS.max(axis=1)
        competitor = np.repeat(first[:, None], n, axis=1)
        competitor[idx, best] = second
        R = damping * R + (1 - damping) * (sj - competitor)

        # availabilities
        Rp = np.maximum(R, 0)
        np.fill_diagonal(Rp, 0)
        col = Rp.sum(axis=0)
        Anew = np.minimum(0, np.diag(R)[None, :] + col[None, :] - Rp)
        np.fill_diagonal(Anew, col)
        A = damping * A + (1 - damping) * Anew

        ex = (np.diag(A) + np.diag(R)) > 0
        if last is not None and np.array_equal(ex, last):
            stable += 1
        else:
            stable = 0
        last = ex
        if stable >= convergence_iters and ex.any():
            converged = True
            break

    exemplars = [int(k) for k in np.flatnonzero(np.diag(A) + np.diag(R) > 0)]
    if not exemplars:
        # degenerate run: fall back to the single strongest self-evidence
        exemplars = [int(np.argmax(np.diag(A) + np.diag(R)))]
        converged = False
    if not converged:
        log.warning("affinity propagation did not converge after %d iterations", it)
    exemplar_of = assign(s, exemplars)
    clusters: dict[int, list[int]] = {k: [] for k in exemplars}
    for i, k in exemplar_of.items():
        clusters[k].append(i)
    return ClusterAssignment(exemplar_of, clusters, converged, it)
