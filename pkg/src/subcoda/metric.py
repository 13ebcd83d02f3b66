"""Dissimilarity between fitted context trees.

``divergence(t1, t2)`` averages, over every context ``w`` of ``t1`` (root
included), the KL divergence from ``t1``'s raw distribution at ``w`` to
``t2``'s smoothed distribution at the longest suffix of ``w`` that is a
context of ``t2``. Only the second argument is smoothed.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .vlmc import SMOOTHING_ALPHA, ContextTree


@dataclass(frozen=True)
class DistanceMatrix:
    labels: tuple[str, ...]
    values: np.ndarray = field(repr=False)
    symmetric: bool = True

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        n = len(self.labels)
        if values.shape != (n, n):
            raise ValueError(f"matrix must be {n}x{n}")
        if np.any(np.diag(values) != 0):
            raise ValueError("diagonal must be zero")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("distances must be finite and non-negative")
        if self.symmetric and not np.array_equal(values, values.T):
            raise ValueError("matrix flagged symmetric but M != M^T")
        values.setflags(write=False)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.labels)

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", *self.labels])
            for label, row in zip(self.labels, self.values):
                w.writerow([label, *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "DistanceMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
        labels = tuple(rows[0][1:])
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        if [r[0] for r in rows[1:]] != list(labels):
            raise ValueError("row labels must match the header")
        return cls(labels, values, symmetric=bool(np.array_equal(values, values.T)))


def _check_alphabets(t1: ContextTree, t2: ContextTree) -> None:
    if t1.alphabet_size != t2.alphabet_size:
        raise ValueError(f"alphabet mismatch: {t1.alphabet_size} vs {t2.alphabet_size}")


def divergence(t1: ContextTree, t2: ContextTree, alpha: float = SMOOTHING_ALPHA) -> float:
    _check_alphabets(t1, t2)
    p = t1.distribution_matrix
    rows = np.fromiter((t2.lookup_row(ctx) for ctx in t1.nodes), dtype=np.int64, count=len(t1))
    log_q = np.log(t2.smoothed_matrix(alpha))[rows]
    mask = p > 0
    terms = np.zeros_like(p)
    terms[mask] = p[mask] * (np.log(p[mask]) - log_q[mask])
    # per-context KL is >= 0 in exact arithmetic; clip rounding noise
    kl = np.maximum(terms.sum(axis=1), 0.0)
    return float(kl.mean())


def symmetric_distance(t1: ContextTree, t2: ContextTree, alpha: float = SMOOTHING_ALPHA) -> float:
    return max(divergence(t1, t2, alpha), divergence(t2, t1, alpha))


def distance_matrix(
    trees: Sequence[tuple[str, ContextTree]],
    mode: str = "symmetric",
    alpha: float = SMOOTHING_ALPHA,
    threads: int = 1,
) -> DistanceMatrix:
    """All pairwise divergences; row ``i``, column ``j`` holds d(tree_i, tree_j)."""
    if mode not in ("symmetric", "asymmetric"):
        raise ValueError(f"unknown mode {mode!r}")
    if len(trees) < 2:
        raise ValueError("need at least two trees")
    labels = [label for label, _ in trees]
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate tree labels")
    models = [t for _, t in trees]
    for t in models[1:]:
        _check_alphabets(models[0], t)
    n = len(models)
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            values = list(pool.map(lambda ij: divergence(models[ij[0]], models[ij[1]], alpha), pairs))
    else:
        values = [divergence(models[i], models[j], alpha) for i, j in pairs]
    d = np.zeros((n, n))
    for (i, j), v in zip(pairs, values):
        d[i, j] = v
    if mode == "symmetric":
        d = np.maximum(d, d.T)
    return DistanceMatrix(tuple(labels), d, symmetric=(mode == "symmetric"))
