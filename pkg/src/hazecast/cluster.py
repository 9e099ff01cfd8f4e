"""Agglomerative clustering with a trimmed weighted distance and quartile-window linkage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from ._kernels_py import quartile_bounds
from .errors import EmptyCluster, InvalidK, ShapeMismatch, SingleCluster, TooFewSegments, ValidationError, ZeroSumSeries


@dataclass(frozen=True)
class Dendrogram:
    merges: tuple  # (id_a, id_b, distance, new_id)
    leaf_count: int

    def to_records(self) -> list:
        return [
            {"a": int(a), "b": int(b), "distance": float(d), "new_id": int(c)} for a, b, d, c in self.merges
        ]


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    k: int
    medoids: tuple

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


def _as_matrix(segments) -> np.ndarray:
    X = np.asarray([np.asarray(getattr(s, "values", s), dtype=np.float64).ravel() for s in segments])
    if X.ndim != 2:
        raise ShapeMismatch("segments must share one length")
    return X


def series_distance(x_p, x_q) -> float:
    """Weighted squared difference, sorted descending and averaged between the
    2nd and 3rd quartile positions (1-based ``ceil(T/2)`` .. ``ceil(3T/4)``)."""
    x_p = np.asarray(x_p, dtype=np.float64).ravel()
    x_q = np.asarray(x_q, dtype=np.float64).ravel()
    if x_p.size != x_q.size:
        raise ShapeMismatch("series lengths differ")
    if x_p.size < 4:
        raise ValidationError("series_distance needs T >= 4")
    if x_p.sum() == 0 or x_q.sum() == 0:
        raise ZeroSumSeries("series sum is zero; weights undefined")
    return kernels._kernels_py.series_distance(x_p, x_q)


def cluster_linkage(c_p, c_q, pairdist) -> float:
    """Mean of cross-pair distances ranked in [ceil(N/2), ceil(3N/4)] (value bounds inclusive).

    ``pairdist`` is the full pairwise distance matrix; clusters are index lists.
    """
    c_p, c_q = list(c_p), list(c_q)
    if not c_p or not c_q:
        raise EmptyCluster("linkage needs two nonempty clusters")
    D = np.asarray(pairdist, dtype=np.float64)
    return kernels._kernels_py.window_mean(D[np.ix_(c_p, c_q)].ravel())


def pairwise_distances(segments) -> np.ndarray:
    X = _as_matrix(segments)
    if X.shape[1] < 4:
        raise ValidationError("series_distance needs T >= 4")
    zero = np.flatnonzero(X.sum(axis=1) == 0)
    if zero.size:
        raise ZeroSumSeries(f"segment(s) {zero.tolist()} sum to zero")
    return kernels.distance_matrix(X)


def agglomerate(segments=None, distances=None) -> Dendrogram:
    """Build the merge tree; pass ``distances`` to reuse a precomputed matrix."""
    D = pairwise_distances(segments) if distances is None else np.asarray(distances, dtype=np.float64)
    if D.shape[0] < 2:
        raise TooFewSegments("agglomerate needs at least 2 segments")
    merges = kernels.agglomerate_merges(D)
    return Dendrogram(
        tuple((int(a), int(b), float(d), int(c)) for a, b, d, c in merges), D.shape[0]
    )


def _medoid(idx: np.ndarray, D: np.ndarray) -> int:
    totals = D[np.ix_(idx, idx)].sum(axis=1)
    return int(idx[int(np.argmin(totals))])


def cut_dendrogram(d: Dendrogram, k: int, distances=None) -> ClusterAssignment:
    """Flat clustering by undoing the last ``k-1`` merges.

    Labels are numbered in order of each cluster's smallest leaf index.
    Medoids need ``distances``; without it they are left as the smallest member.
    """
    n = d.leaf_count
    if not 1 <= k <= n:
        raise InvalidK(f"k must lie in [1, {n}], got {k}")
    parent = list(range(2 * n - 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b, _, c in d.merges[: n - k]:
        parent[find(a)] = c
        parent[find(b)] = c
    roots = [find(i) for i in range(n)]
    relabel: dict = {}
    labels = np.array([relabel.setdefault(r, len(relabel)) for r in roots], dtype=np.int64)
    medoids = []
    for lab in range(k):
        idx = np.flatnonzero(labels == lab)
        medoids.append(_medoid(idx, distances) if distances is not None else int(idx[0]))
    return ClusterAssignment(labels, k, tuple(medoids))


def silhouette(assignment: ClusterAssignment, segments=None, distances=None) -> float:
    """Mean silhouette; members of singleton clusters score 0."""
    if assignment.k < 2:
        raise SingleCluster("silhouette needs at least 2 clusters")
    D = pairwise_distances(segments) if distances is None else np.asarray(distances, dtype=np.float64)
    labels = assignment.labels
    n = labels.size
    if n < 3:
        raise TooFewSegments("silhouette needs at least 3 segments")
    sizes = np.bincount(labels, minlength=assignment.k)
    # row sums of distances into each cluster
    onehot = np.zeros((n, assignment.k))
    onehot[np.arange(n), labels] = 1.0
    sums = D @ onehot
    scores = np.zeros(n)
    for i in range(n):
        own = labels[i]
        if sizes[own] <= 1:
            continue
        a = sums[i, own] / (sizes[own] - 1)
        others = [sums[i, c] / sizes[c] for c in range(assignment.k) if c != own and sizes[c] > 0]
        b = min(others)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def select_k(segments=None, k_min: int = 2, k_max: int = 5, distances=None, dendrogram=None, atol: float = 1e-12) -> int:
    """k in [k_min, k_max] maximising the silhouette; ties go to the smaller k.

    When every pairwise distance is at most ``atol`` there is no structure to
    score and ``k_min`` is returned.
    """
    D = pairwise_distances(segments) if distances is None else np.asarray(distances, dtype=np.float64)
    n = D.shape[0]
    if not 2 <= k_min <= k_max <= n - 1:
        raise InvalidK(f"need 2 <= k_min <= k_max <= {n - 1}, got ({k_min}, {k_max})")
    if D.max() <= atol:
        return k_min
    tree = dendrogram or agglomerate(distances=D)
    best_k, best_s = k_min, -np.inf
    for k in range(k_min, k_max + 1):
        s = silhouette(cut_dendrogram(tree, k), distances=D)
        if s > best_s:
            best_k, best_s = k, s
    return best_k


__all__ = [
    "Dendrogram",
    "ClusterAssignment",
    "series_distance",
    "cluster_linkage",
    "pairwise_distances",
    "agglomerate",
    "cut_dendrogram",
    "silhouette",
    "select_k",
    "quartile_bounds",
]
