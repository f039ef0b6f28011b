"""Shared builders and brute-force oracles for the test suite."""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from macr.backend import EmbeddingVector
from macr.reasoner import DebateTranscript, Inference


def make_inference(values, gen: int, tree_id: str = "t", text: str | None = None) -> Inference:
    text = text or f"inference {gen}"
    src = DebateTranscript(tree_id, gen, "a", "c", "e", text)
    return Inference(text, "Unspecified", src, EmbeddingVector(tuple(values)))


def partition_inertia(X: np.ndarray, labels) -> float:
    total = 0.0
    for c in set(labels):
        pts = X[[i for i, lab in enumerate(labels) if lab == c]]
        total += float(((pts - pts.mean(axis=0)) ** 2).sum())
    return total


def brute_force_kmeans(X: np.ndarray, k: int):
    """Optimal inertia and every partition that reaches it, over all k-partitions."""
    n = len(X)
    best, winners = np.inf, set()
    # first point always in cluster 0 to halve the symmetric search
    for rest in itertools.product(range(k), repeat=n - 1):
        labels = (0,) + rest
        if len(set(labels)) != k:
            continue
        val = partition_inertia(X, labels)
        groups = frozenset(frozenset(i for i, lab in enumerate(labels) if lab == c) for c in range(k))
        if val < best - 1e-9:
            best, winners = val, {groups}
        elif abs(val - best) <= 1e-9:
            winners.add(groups)
    return best, winners


def planar_fixtures() -> list[tuple[str, np.ndarray, int]]:
    """Eight-point planar point sets with the K to cluster them into."""
    fixtures = [
        ("two-blobs", np.array([[0, 0], [0, 1], [1, 0], [1, 1], [9, 9], [9, 10], [10, 9], [10, 10]], float), 2),
        ("three-blobs", np.array([[0, 0], [0, 1], [1, 0], [5, 5], [5, 6], [10, 0], [10, 1], [11, 0]], float), 3),
        ("line", np.array([[0, 0], [1, 0], [2, 0], [3, 0], [10, 0], [11, 0], [12, 0], [20, 0]], float), 3),
        ("uneven", np.array([[0, 0], [0.5, 0], [0, 0.5], [0.2, 0.2], [0.4, 0.1], [0.1, 0.4], [8, 8], [8, 8.5]], float), 2),
        ("ring-and-center", np.array([[0, 0], [4, 0], [-4, 0], [0, 4], [0, -4], [20, 0], [21, 0], [20, 1]], float), 2),
        ("duplicates", np.array([[1, 1], [1, 1], [1, 1], [5, 5], [5, 5], [9, 1], [9, 1], [9, 2]], float), 3),
    ]
    rng = np.random.default_rng(2024)
    for i in range(12):
        k = 2 + i % 3
        centers = rng.uniform(-10, 10, size=(k, 2))
        pts = centers[rng.integers(k, size=8)] + rng.normal(scale=1.5, size=(8, 2))
        fixtures.append((f"random-{i}-k{k}", np.round(pts, 3), k))
    return fixtures


def rational_mixture(probabilities, dists) -> list[Fraction]:
    """Sum_k P(m_k) * P(Y | m_k, X) in exact rationals."""
    L = len(dists[0])
    out = [Fraction(0)] * L
    for p, d in zip(probabilities, dists):
        for j in range(L):
            out[j] += Fraction(p) * Fraction(d[j])
    return out
