"""Density-driven firm clustering.

Firms are grouped by K-means on their observation-indicator signatures, then
each cluster is labelled dense or sparse by its observed-entry ratio.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, StructuralError
from .tensor import MaskedTensor

DENSE = "dense"
SPARSE = "sparse"


@dataclass(frozen=True, eq=False)
class ClusterPartition:
    """Firm-to-cluster assignment.

    `densities`, `labels` and `tau` stay None until :func:`label_clusters`
    has been applied.
    """

    assignments: np.ndarray
    centroids: np.ndarray
    k: int
    inertia: float
    inertia_trace: tuple = ()
    densities: np.ndarray | None = None
    labels: tuple | None = None
    tau: float | None = None

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster)

    def dense_clusters(self) -> list:
        return [c for c in range(self.k) if self.labels[c] == DENSE]

    def sparse_clusters(self) -> list:
        return [c for c in range(self.k) if self.labels[c] == SPARSE]


def firm_signature(x: MaskedTensor, n: int) -> np.ndarray:
    """Observation indicators of firm `n`'s T x L slice, columns stacked.

    Entry ``l * T + t`` is 1 when cell (t, n, l) is observed.
    """
    if not 0 <= n < x.shape[1]:
        raise StructuralError(f"firm index {n} out of range for {x.shape[1]} firms")
    return x.mask[:, n, :].T.reshape(-1).astype(float)


def signatures(x: MaskedTensor) -> np.ndarray:
    """All firm signatures as an N x (T*L) matrix (rows as in firm_signature)."""
    return np.transpose(x.mask, (1, 2, 0)).reshape(x.shape[1], -1).astype(float)


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (points * points).sum(1)[:, None] - 2.0 * points @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    closest = _sq_dists(points, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            pick = rng.choice(n, p=closest / total)
        else:
            pick = rng.integers(n)
        centers.append(points[pick])
        closest = np.minimum(closest, _sq_dists(points, points[pick][None, :])[:, 0])
    return np.array(centers)


def _inertia(points, assign, centers) -> float:
    diff = points - centers[assign]
    return float(np.sum(diff * diff))


def kmeans(points: np.ndarray, k: int, seed=0, max_iters: int = 100) -> ClusterPartition:
    """Lloyd's algorithm with k-means++ seeding.

    Equal distances go to the lowest cluster index. A cluster that loses all
    its points takes over the point farthest from its current centroid
    (drawn from clusters with more than one member), so exactly `k` clusters
    come back.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if k < 1:
        raise ConfigError(f"k must be at least 1, got {k}")
    if k > n:
        raise StructuralError(f"cannot form {k} clusters from {n} points")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(points, k, rng)

    assign = None
    trace = []
    for _ in range(max_iters):
        dist = _sq_dists(points, centers)
        new = np.argmin(dist, axis=1)  # first minimum wins ties
        new = _repair_empty(new, dist, k)
        centers = np.array([points[new == c].mean(axis=0) for c in range(k)])
        trace.append(_inertia(points, new, centers))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
    assign = new
    return ClusterPartition(
        assignments=assign,
        centroids=centers,
        k=k,
        inertia=trace[-1],
        inertia_trace=tuple(trace),
    )


def _repair_empty(assign: np.ndarray, dist: np.ndarray, k: int) -> np.ndarray:
    assign = assign.copy()
    own = dist[np.arange(len(assign)), assign]
    for c in range(k):
        if np.any(assign == c):
            continue
        sizes = np.bincount(assign, minlength=k)
        movable = sizes[assign] > 1
        cand = np.where(movable, own, -np.inf)
        i = int(np.argmax(cand))
        assign[i] = c
        own[i] = -np.inf
    return assign


def cluster_densities(x: MaskedTensor, assignments, k: int) -> np.ndarray:
    """Observed-entry ratio of every cluster's sub-tensor."""
    assignments = np.asarray(assignments)
    T, N, L = x.shape
    per_firm = x.mask.sum(axis=(0, 2))
    observed = np.bincount(assignments, weights=per_firm, minlength=k)
    sizes = np.bincount(assignments, minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = observed / (sizes * T * L)
    return np.where(sizes > 0, rho, 0.0)


def label_clusters(partition: ClusterPartition, x: MaskedTensor, tau: float = 0.40) -> ClusterPartition:
    """Attach densities and the dense (rho >= tau) / sparse labels."""
    if len(partition.assignments) != x.shape[1]:
        raise StructuralError(
            f"partition covers {len(partition.assignments)} firms, tensor has {x.shape[1]}"
        )
    rho = cluster_densities(x, partition.assignments, partition.k)
    labels = tuple(DENSE if r >= tau else SPARSE for r in rho)
    return replace(partition, densities=rho, labels=labels, tau=float(tau))


def cluster_firms(x: MaskedTensor, k: int = 10, tau: float = 0.40, seed=0, max_iters: int = 100) -> ClusterPartition:
    """Signatures, K-means and labelling in one call."""
    part = kmeans(signatures(x), k, seed=seed, max_iters=max_iters)
    return label_clusters(part, x, tau)
