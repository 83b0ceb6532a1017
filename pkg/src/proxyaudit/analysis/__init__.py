from .affinity import ClusterAssignment, SimilarityMatrix, affinity_propagation, net_similarity
from .clustering import ManipulationCluster, cluster_manipulations
from .editdistance import levenshtein
from .headers import HeaderStats, aggregate_header_stats, header_diff
from .similarity import similarity_score

__all__ = [
    "ClusterAssignment",
    "HeaderStats",
    "ManipulationCluster",
    "SimilarityMatrix",
    "affinity_propagation",
    "aggregate_header_stats",
    "cluster_manipulations",
    "header_diff",
    "levenshtein",
    "net_similarity",
    "similarity_score",
]
