"""Cluster inference embeddings and pick centroid-nearest representatives.

Cluster probabilities are kept as exact fractions ``|C_i| / n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .backend import EmbeddingVector
from .errors import ValidationError
from .reasoner import Inference
from .seeding import derive_seed


@dataclass(frozen=True)
class ClusterAssignment:
    assignments: tuple[int, ...]
    centroids: np.ndarray
    inertia: float
    iterations_run: int
    seed: int
    trace: tuple[float, ...] = ()

    @property
    def k(self) -> int:
        return len(self.centroids)

    def sizes(self) -> list[int]:
        return [self.assignments.count(c) for c in range(self.k)]

    def partition(self) -> frozenset:
        groups: dict[int, set] = {}
        for i, c in enumerate(self.assignments):
            groups.setdefault(c, set()).add(i)
        return frozenset(frozenset(g) for g in groups.values())


@dataclass(frozen=True)
class MediatorSet:
    tree_id: str
    representatives: tuple[Inference, ...]
    probabilities: tuple[Fraction, ...]
    cluster_sizes: tuple[int, ...]

    def __post_init__(self):
        n = sum(self.cluster_sizes)
        if any(p != Fraction(s, n) for p, s in zip(self.probabilities, self.cluster_sizes)):
            raise ValueError("probabilities must equal cluster_size / n")
        if sum(self.probabilities) != 1:
            raise ValueError("probabilities must sum to 1")

    @property
    def k(self) -> int:
        return len(self.representatives)


def _as_matrix(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        rows = list(vectors.astype(np.float64))
    else:
        rows = [v.as_array() if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=np.float64) for v in vectors]
    if not rows:
        raise ValidationError("vectors", "nothing to cluster")
    if len({r.shape for r in rows}) != 1:
        raise ValidationError("vectors", "all vectors must share one dimension")
    return np.vstack(rows)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = _sq_dists(X, np.asarray(centers))[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, _sq_dists(X, X[idx][None, :])[:, 0])
    return np.asarray(centers)


def _repair_empty(X: np.ndarray, labels: np.ndarray, C: np.ndarray) -> None:
    """Give each empty cluster the point farthest from its own centroid."""
    k = len(C)
    for c in range(k):
        if np.any(labels == c):
            continue
        own = ((X - C[labels]) ** 2).sum(axis=1)
        counts = np.bincount(labels, minlength=k)
        own[counts[labels] <= 1] = -1.0  # never empty another cluster
        far = int(np.argmax(own))
        labels[far] = c
        C[c] = X[far]


def _means(X: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    return np.vstack([X[labels == c].mean(axis=0) for c in range(k)])


def _lloyd(X, k, rng, max_iters, tol):
    C = _plus_plus(X, k, rng)
    labels = np.argmin(_sq_dists(X, C), axis=1)
    _repair_empty(X, labels, C)
    trace = []
    it = 0
    for it in range(1, max_iters + 1):
        C_new = _means(X, labels, k)
        new_labels = np.argmin(_sq_dists(X, C_new), axis=1)
        _repair_empty(X, new_labels, C_new)
        shift = float(np.sqrt(((C_new - C) ** 2).sum(axis=1)).max())
        C = C_new
        trace.append(float(((X - C[labels]) ** 2).sum()))
        converged = np.array_equal(new_labels, labels) or shift < tol
        labels = new_labels
        if converged:
            break
    C = _means(X, labels, k)
    inertia = float(((X - C[labels]) ** 2).sum())
    return labels, C, inertia, it, trace


def kmeans(
    vectors: Sequence,
    k: int,
    seed: int = 0,
    max_iters: int = 300,
    tol: float = 1e-8,
    n_init: int = 10,
) -> ClusterAssignment:
    """Lloyd's algorithm from k-means++ starts, best of ``n_init`` restarts.

    Rows are processed in lexicographic order so the partition does not
    depend on input order. Clusters are numbered by their smallest member
    index in the caller's order.
    """
    X = _as_matrix(vectors)
    n = len(X)
    if k < 1:
        raise ValidationError("k", "must be >= 1")
    if n < k:
        raise ValidationError("k", f"{n} vectors cannot form {k} clusters; lower K")

    order = np.lexsort(X.T[::-1])
    Xs = X[order]
    best = None
    for run in range(max(1, n_init)):
        rng = np.random.default_rng(derive_seed(seed, "kmeans", run))
        result = _lloyd(Xs, k, rng, max_iters, tol)
        if best is None or result[2] < best[2]:
            best = result
    labels_sorted, C, inertia, iters, trace = best

    labels = np.empty(n, dtype=int)
    labels[order] = labels_sorted
    first_seen: dict[int, int] = {}
    for lab in labels:
        first_seen.setdefault(int(lab), len(first_seen))
    relabeled = tuple(first_seen[int(lab)] for lab in labels)
    centroids = np.empty_like(C)
    for old, new in first_seen.items():
        centroids[new] = C[old]
    return ClusterAssignment(relabeled, centroids, inertia, iters, seed, tuple(trace))


def _select(inferences: Sequence[Inference], assignment: ClusterAssignment, X: np.ndarray) -> MediatorSet:
    n = len(inferences)
    reps, sizes = [], []
    for c in range(assignment.k):
        members = [i for i, a in enumerate(assignment.assignments) if a == c]
        dist = np.sqrt(((X[members] - assignment.centroids[c]) ** 2).sum(axis=1))
        winner = min(zip(dist.tolist(), members), key=lambda dm: (dm[0], inferences[dm[1]].generation_index))[1]
        reps.append(inferences[winner])
        sizes.append(len(members))
    tree_id = inferences[0].tree_id if inferences else ""
    return MediatorSet(tree_id, tuple(reps), tuple(Fraction(s, n) for s in sizes), tuple(sizes))


def _embedded_matrix(inferences: Sequence[Inference]) -> np.ndarray:
    for inf in inferences:
        if inf.embedding is None:
            raise ValidationError("embedding", f"inference {inf.generation_index} of tree {inf.tree_id!r} is not embedded")
    return _as_matrix([inf.embedding for inf in inferences])


def select_representatives(inferences: Sequence[Inference], assignment: ClusterAssignment) -> MediatorSet:
    """Per cluster, the member nearest the centroid; ties go to the lower generation index."""
    if len(inferences) != len(assignment.assignments):
        raise ValidationError("assignment", "does not cover the given inferences")
    return _select(inferences, assignment, _embedded_matrix(inferences))


def build_mediators(
    inferences: Sequence[Inference],
    k: int,
    seed: int,
    *,
    normalize: bool = False,
    max_iters: int = 300,
    tol: float = 1e-8,
    n_init: int = 10,
) -> tuple[MediatorSet, ClusterAssignment]:
    """Cluster with K lowered to the number of distinct embeddings when needed."""
    X = _embedded_matrix(inferences)
    if normalize:
        X = X / np.linalg.norm(X, axis=1, keepdims=True)
    k_eff = max(1, min(k, len(np.unique(X, axis=0))))
    assignment = kmeans(X, k_eff, seed, max_iters, tol, n_init)
    return _select(inferences, assignment, X), assignment
