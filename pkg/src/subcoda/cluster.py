"""Average-linkage clustering, dendrogram cuts and the adjusted Rand index."""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb
from typing import Hashable, Sequence

import numpy as np

from .metric import DistanceMatrix


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Merge list in the usual linkage convention.

    Leaves are ids ``0..n-1``; the cluster created by merge ``i`` gets id
    ``n + i``.
    """

    labels: tuple[str, ...]
    merges: tuple[Merge, ...]

    def __post_init__(self):
        if len(self.merges) != max(len(self.labels) - 1, 0):
            raise ValueError("a dendrogram over n leaves has n-1 merges")

    @property
    def heights(self) -> np.ndarray:
        return np.array([m.height for m in self.merges])

    def linkage_matrix(self) -> np.ndarray:
        return np.array([[m.left, m.right, m.height, m.size] for m in self.merges], dtype=float)

    def members(self, cluster_id: int) -> list[int]:
        """Leaves under a cluster, in left-first order."""
        n = len(self.labels)
        stack, out = [cluster_id], []
        while stack:
            c = stack.pop()
            if c < n:
                out.append(c)
            else:
                m = self.merges[c - n]
                stack.extend((m.right, m.left))
        return out

    def leaf_order(self) -> list[int]:
        if len(self.labels) == 1:
            return [0]
        return self.members(len(self.labels) + len(self.merges) - 1)

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "merges": [
                {"left": m.left, "right": m.right, "height": m.height, "size": m.size} for m in self.merges
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "Dendrogram":
        merges = tuple(Merge(int(m["left"]), int(m["right"]), float(m["height"]), int(m["size"])) for m in doc["merges"])
        return cls(tuple(doc["labels"]), merges)

    def to_newick(self) -> str:
        """Newick text; branch length = parent merge height minus child height."""
        n = len(self.labels)

        def height(c: int) -> float:
            return 0.0 if c < n else self.merges[c - n].height

        def render(c: int) -> str:
            if c < n:
                return _newick_label(self.labels[c])
            m = self.merges[c - n]
            parts = [f"{render(k)}:{m.height - height(k):.6g}" for k in (m.left, m.right)]
            return "(" + ",".join(parts) + ")"

        if n == 1:
            return _newick_label(self.labels[0]) + ";"
        return render(n + len(self.merges) - 1) + ";"


def _newick_label(label: str) -> str:
    if any(ch in label for ch in " ():;,[]'"):
        return "'" + label.replace("'", "''") + "'"
    return label


def average_linkage(m: DistanceMatrix | np.ndarray, labels: Sequence[str] | None = None) -> Dendrogram:
    """UPGMA: repeatedly merge the pair of clusters with the smallest mean distance.

    Ties go to the lowest (i, j) pair of active cluster slots, where slot
    ``i`` is the smallest leaf index in the cluster.
    """
    if isinstance(m, DistanceMatrix):
        labels = m.labels
        d = np.array(m.values, dtype=float)
    else:
        d = np.array(m, dtype=float)
        labels = tuple(labels) if labels is not None else tuple(str(i) for i in range(d.shape[0]))
    n = d.shape[0]
    if d.shape != (n, n) or len(labels) != n:
        raise ValueError("distance matrix must be square and match labels")
    if not np.array_equal(d, d.T):
        raise ValueError("average linkage needs a symmetric matrix")
    if np.any(np.diag(d) != 0):
        raise ValueError("diagonal must be zero")

    # slot i holds the cluster whose smallest leaf is i
    cluster_id = list(range(n))
    size = [1] * n
    dist = d.copy()
    alive = np.ones(n, dtype=bool)
    lower = np.tril(np.ones((n, n), dtype=bool))
    merges = []
    for step in range(n - 1):
        sub = np.where(alive[:, None] & alive[None, :] & ~lower, dist, np.inf)
        i, j = divmod(int(np.argmin(sub)), n)
        merges.append(Merge(cluster_id[i], cluster_id[j], float(dist[i, j]), size[i] + size[j]))
        # Lance-Williams update for average linkage
        new = (size[i] * dist[i] + size[j] * dist[j]) / (size[i] + size[j])
        dist[i, :] = new
        dist[:, i] = new
        alive[j] = False
        size[i] += size[j]
        cluster_id[i] = n + step
    return Dendrogram(tuple(labels), tuple(merges))


def cut(dendrogram: Dendrogram, k: int) -> list[int]:
    """Partition into ``k`` clusters by undoing the ``k-1`` last merges.

    Cluster ids are assigned in order of each cluster's first leaf.
    """
    n = len(dendrogram.labels)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    rep = list(range(n))  # cluster id -> a leaf inside it
    for m in dendrogram.merges[: n - k]:
        a, b = find(rep[m.left]), find(rep[m.right])
        parent[b] = a
        rep.append(a)
    out, ids = [], {}
    for leaf in range(n):
        root = find(leaf)
        out.append(ids.setdefault(root, len(ids)))
    return out


def adjusted_rand_index(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Adjusted Rand index from the pair-counting contingency table."""
    if len(a) != len(b):
        raise ValueError("label sequences differ in length")
    n = len(a)
    if n < 2:
        raise ValueError("need at least two items")
    _, ai = np.unique(np.asarray(a, dtype=object).astype(str), return_inverse=True)
    _, bi = np.unique(np.asarray(b, dtype=object).astype(str), return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai.ravel(), bi.ravel()), 1)
    sum_comb = sum(comb(int(v), 2) for v in table.ravel())
    sum_a = sum(comb(int(v), 2) for v in table.sum(axis=1))
    sum_b = sum(comb(int(v), 2) for v in table.sum(axis=0))
    total = comb(n, 2)
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        # both partitions trivial (all-one or all-singletons): identical structure
        return 1.0
    return float((sum_comb - expected) / (max_index - expected))


@dataclass(frozen=True)
class AriSweep:
    scores: tuple[tuple[int, float], ...]  # (k, ARI) for k = 2..n

    @property
    def best_k(self) -> int:
        return max(self.scores, key=lambda kv: kv[1])[0]

    @property
    def max_ari(self) -> float:
        return max(v for _, v in self.scores)


def ari_sweep(dendrogram: Dendrogram, reference: Sequence[Hashable]) -> AriSweep:
    n = len(dendrogram.labels)
    if len(reference) != n:
        raise ValueError("reference labels must cover every leaf")
    return AriSweep(tuple((k, adjusted_rand_index(cut(dendrogram, k), reference)) for k in range(2, n + 1)))
