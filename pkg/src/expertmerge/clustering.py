"""Frequency-ranked centres, weight-space assignment, and the A / B matrices.

``A`` (M x N) sums original routing weights per cluster; ``B`` (N x M) holds
the intra-cluster combination weights, which are relative usage frequencies.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .numerics import cosine_similarity

METRICS = ("cosine", "dot", "euclidean")


@dataclass(frozen=True, eq=False)
class ClusterPlan:
    assignment: np.ndarray  # (N,) cluster index of every original expert
    centers: np.ndarray  # (M,) expert index of each cluster's centre
    a_matrix: np.ndarray
    b_matrix: np.ndarray
    frequencies: np.ndarray
    uniform_fallback: tuple = ()  # clusters whose frequencies summed to zero

    @property
    def n_original(self):
        return self.assignment.size

    @property
    def n_merged(self):
        return self.centers.size

    def members(self, cluster):
        return np.flatnonzero(self.assignment == cluster)

    def weights(self, cluster):
        """B-weights of ``members(cluster)``, in member order."""
        return self.b_matrix[self.members(cluster), cluster]

    @classmethod
    def from_assignment(cls, assignment, frequencies, centers=None):
        assignment = np.asarray(assignment, dtype=np.int64)
        frequencies = np.asarray(frequencies, dtype=np.float64)
        if assignment.ndim != 1 or assignment.size == 0:
            raise ContractViolation("assignment must be a non-empty 1-D sequence")
        if frequencies.shape != assignment.shape:
            raise ContractViolation("one frequency per expert is required")
        m = int(assignment.max()) + 1
        if assignment.min() < 0 or np.unique(assignment).size != m:
            raise ContractViolation("cluster indices must cover 0..M-1 with no empty cluster")
        if centers is None:
            # most-used member, lowest index on ties
            centers = [
                int(min(np.flatnonzero(assignment == c), key=lambda j: (-frequencies[j], j)))
                for c in range(m)
            ]
        centers = np.asarray(centers, dtype=np.int64)
        if centers.size != m or np.any(assignment[centers] != np.arange(m)):
            raise ContractViolation("every centre must belong to its own cluster")
        b, fallback = build_b(assignment, frequencies, m)
        return cls(assignment, centers, build_a(assignment, m), b, frequencies, fallback)


def build_a(assignment, m):
    assignment = np.asarray(assignment, dtype=np.int64)
    a = np.zeros((m, assignment.size))
    a[assignment, np.arange(assignment.size)] = 1.0
    return a


def build_b(assignment, frequencies, m=None):
    """Column ``i`` holds ``f_j / sum_{k in C_i} f_k`` on the members ``j`` of C_i.

    Returns ``(B, fallback)``; clusters with zero total frequency get uniform
    weights and are listed in ``fallback``.
    """
    assignment = np.asarray(assignment, dtype=np.int64)
    frequencies = np.asarray(frequencies, dtype=np.float64)
    if np.any(frequencies < 0):
        raise ContractViolation("frequencies must be non-negative")
    if m is None:
        m = int(assignment.max()) + 1
    b = np.zeros((assignment.size, m))
    fallback = []
    for c in range(m):
        members = np.flatnonzero(assignment == c)
        if members.size == 0:
            raise ContractViolation(f"cluster {c} is empty")
        total = frequencies[members].sum()
        if total > 0:
            b[members, c] = frequencies[members] / total
        else:
            b[members, c] = 1.0 / members.size
            fallback.append(c)
    return b, tuple(fallback)


def select_centers(stats, m):
    freqs = np.asarray(getattr(stats, "frequencies", stats), dtype=np.float64)
    n = freqs.size
    if not 1 <= m <= n:
        raise ContractViolation(f"number of clusters must be in [1, {n}], got {m}")
    return np.argsort(-freqs, kind="stable")[:m]


def _routing_features(expert):
    return np.concatenate([expert.w_up.ravel(), expert.w_gate.ravel()])


def expert_distance(a, b, metric="cosine"):
    """Distance between the concatenated (W_U, W_G) of two experts. W_D is ignored."""
    if a.w_gate.shape != b.w_gate.shape:
        raise ContractViolation(
            f"experts have different shapes {a.w_gate.shape} and {b.w_gate.shape}"
        )
    u, v = _routing_features(a), _routing_features(b)
    if metric == "cosine":
        return 1.0 - cosine_similarity(u, v)
    if metric == "dot":
        return -float(np.dot(u, v))
    if metric == "euclidean":
        return float(np.linalg.norm(u - v))
    raise ContractViolation(f"unknown metric {metric!r}; expected one of {METRICS}")


def assign_clusters(layer, stats, m, metric="cosine"):
    """One-shot nearest-centre clustering of ``layer.experts`` into ``m`` groups."""
    centers = select_centers(stats, m)
    n = layer.n_experts
    assignment = np.empty(n, dtype=np.int64)
    assignment[centers] = np.arange(m)
    # ties go to the centre with the lowest expert index
    by_index = sorted(range(m), key=lambda c: centers[c])
    center_set = set(centers.tolist())
    for j in range(n):
        if j in center_set:
            continue
        dists = [expert_distance(layer.experts[j], layer.experts[centers[c]], metric) for c in by_index]
        assignment[j] = by_index[int(np.argmin(dists))]
    freqs = np.asarray(getattr(stats, "frequencies", stats), dtype=np.float64)
    return ClusterPlan.from_assignment(assignment, freqs, centers)
