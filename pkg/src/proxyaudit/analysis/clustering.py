"""Group manipulation payloads around exemplars for human inspection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..model import ManipulationEvidence, ProxyEndpoint
from .affinity import SimilarityMatrix, affinity_propagation
from .editdistance import levenshtein

MAX_PAYLOAD = 16 * 1024


@dataclass
class ManipulationCluster:
    exemplar: bytes
    payloads: list[bytes]
    endpoints: list[ProxyEndpoint]

    @property
    def size(self) -> int:
        return len(self.payloads)


def distance_matrix(payloads: Sequence[bytes]) -> np.ndarray:
    n = len(payloads)
    cut = [p[:MAX_PAYLOAD] for p in payloads]
    d = np.zeros((n, n))
    for i in range(n):
        for k in range(i + 1, n):
            d[i, k] = d[k, i] = levenshtein(cut[i], cut[k])
    return d


def cluster_manipulations(evidence: Sequence[ManipulationEvidence]) -> list[ManipulationCluster]:
    """Cluster unique payloads by edit distance; largest clusters first."""
    owners: dict[bytes, list[ProxyEndpoint]] = {}
    for ev in evidence:
        eps = owners.setdefault(ev.payload, [])
        if ev.endpoint not in eps:
            eps.append(ev.endpoint)
    unique = sorted(owners)
    if not unique:
        return []
    result = affinity_propagation(SimilarityMatrix(-distance_matrix(unique)))
    clusters = []
    for ex, members in result.clusters.items():
        eps: list[ProxyEndpoint] = []
        for m in members:
            for ep in owners[unique[m]]:
                if ep not in eps:
                    eps.append(ep)
        clusters.append(ManipulationCluster(unique[ex], [unique[m] for m in members], sorted(eps, key=lambda e: e.sort_key())))
    clusters.sort(key=lambda c: (-c.size, c.exemplar))
    return clusters
