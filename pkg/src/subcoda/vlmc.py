"""Variable-length Markov chains (subcoda trees).

Counting convention: for a context ``w`` (a tuple of symbols, oldest first),
``child_counts[w][x]`` is the number of stream positions where ``w`` is
immediately followed by ``x``, and ``N(w)`` is their sum. Occurrences of
``w`` at the very end of the stream are therefore not counted, and
distributions normalize exactly. The root (empty context) counts every
symbol after the first.

Fitting and pruning use raw maximum-likelihood distributions. Scoring
(log-likelihood, AIC, classification) uses add-``alpha`` smoothing over the
whole alphabet so unseen transitions stay finite.
"""

from __future__ import annotations

import json
import math
import os
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import chi2

from .symbols import DiscretizationConfig, SymbolStream

DEFAULT_DEPTH = 10
SMOOTHING_ALPHA = 0.5
MAX_CODA_LENGTH = 200

Context = tuple[int, ...]


class GenerationError(RuntimeError):
    """A generated coda did not terminate within the length cap."""


def _as_symbols(stream, alphabet_size: Optional[int] = None) -> tuple[np.ndarray, int]:
    if isinstance(stream, SymbolStream):
        if alphabet_size is not None and alphabet_size != stream.alphabet_size:
            raise ValueError("alphabet size mismatch")
        return stream.symbols, stream.alphabet_size
    x = np.asarray(stream, dtype=np.int64).ravel()
    if alphabet_size is None:
        raise ValueError("alphabet_size is required for raw symbol arrays")
    if x.size and (x.min() < 0 or x.max() >= alphabet_size):
        raise ValueError("symbol outside alphabet")
    return x, alphabet_size


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats; terms with p(x) = 0 contribute nothing."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def default_threshold(alphabet_size: int, level: float = 0.95) -> float:
    """Half the ``level`` quantile of a chi-square with ``alphabet_size - 1`` dof."""
    if alphabet_size < 2:
        raise ValueError("alphabet_size must be >= 2")
    return 0.5 * float(chi2.ppf(level, alphabet_size - 1))


@dataclass(frozen=True)
class ContextNode:
    context: Context
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "context", tuple(int(s) for s in self.context))
        object.__setattr__(self, "counts", counts)

    @property
    def occurrence_count(self) -> int:
        return int(self.counts.sum())

    @property
    def child_counts(self) -> dict[int, int]:
        return {int(s): int(self.counts[s]) for s in np.flatnonzero(self.counts)}

    @property
    def depth(self) -> int:
        return len(self.context)

    @property
    def distribution(self) -> np.ndarray:
        total = self.counts.sum()
        if total == 0:
            return np.zeros(self.counts.size)
        return self.counts / total

    def smoothed(self, alpha: float = SMOOTHING_ALPHA) -> np.ndarray:
        n = self.counts.size
        return (self.counts + alpha) / (self.counts.sum() + alpha * n)


def information_gain(w: ContextNode, u: ContextNode) -> float:
    """``N(w) * KL(q_w || q_u)`` for a context ``w`` and its suffix ``u``."""
    if not (len(u.context) < len(w.context) and w.context[len(w.context) - len(u.context):] == u.context):
        raise ValueError(f"{u.context} is not a proper suffix of {w.context}")
    return w.occurrence_count * kl_divergence(w.distribution, u.distribution)


@dataclass
class _Level:
    contexts: np.ndarray  # (m, depth), oldest symbol first
    parent: np.ndarray  # (m,) row in the previous level
    totals: np.ndarray  # (m,) N(w)
    keys: np.ndarray  # sorted node * n + symbol, nonzero transitions only
    counts: np.ndarray  # transition counts aligned with keys
    gains: Optional[np.ndarray] = None


class SaturatedTree:
    """Every context up to ``max_depth`` seen in a stream, with transition counts.

    Storage is level-wise in numpy arrays; :meth:`node` and :meth:`contexts`
    materialize individual contexts on demand.
    """

    def __init__(self, levels: list[_Level], alphabet_size: int, max_depth: int, stream_length: int):
        self._levels = levels
        self.alphabet_size = alphabet_size
        self.max_depth = max_depth
        self.stream_length = stream_length
        self._index: Optional[dict[Context, tuple[int, int]]] = None
        self._compute_gains()

    @property
    def depth(self) -> int:
        return len(self._levels) - 1

    def __len__(self) -> int:
        return sum(lv.totals.size for lv in self._levels)

    def _lookup_index(self) -> dict[Context, tuple[int, int]]:
        if self._index is None:
            index = {(): (0, 0)}
            for d, lv in enumerate(self._levels[1:], start=1):
                for row, ctx in enumerate(map(tuple, lv.contexts.tolist())):
                    index[ctx] = (d, row)
            self._index = index
        return self._index

    def __contains__(self, w) -> bool:
        return tuple(w) in self._lookup_index()

    def contexts(self) -> list[Context]:
        return list(self._lookup_index())

    def _dense(self, d: int, rows: np.ndarray) -> np.ndarray:
        lv = self._levels[d]
        n = self.alphabet_size
        out = np.zeros((rows.size, n), dtype=np.int64)
        pos = np.full(lv.totals.size, -1)
        pos[rows] = np.arange(rows.size)
        node = lv.keys // n
        sel = pos[node] >= 0
        out[pos[node[sel]], lv.keys[sel] % n] = lv.counts[sel]
        return out

    def node(self, w: Iterable[int]) -> ContextNode:
        w = tuple(int(s) for s in w)
        d, row = self._lookup_index()[w]
        return ContextNode(w, self._dense(d, np.array([row]))[0])

    def count(self, w: Iterable[int]) -> int:
        w = tuple(w)
        index = self._lookup_index()
        if w not in index:
            return 0
        d, row = index[w]
        return int(self._levels[d].totals[row])

    def child_counts(self, w: Iterable[int]) -> dict[int, int]:
        return self.node(w).child_counts

    def gain(self, w: Iterable[int]) -> float:
        d, row = self._lookup_index()[tuple(w)]
        if d == 0:
            raise ValueError("the root has no information gain")
        return float(self._levels[d].gains[row])

    def gains(self) -> dict[Context, float]:
        out = {}
        for lv in self._levels[1:]:
            for ctx, g in zip(map(tuple, lv.contexts.tolist()), lv.gains.tolist()):
                out[ctx] = g
        return out

    def _compute_gains(self) -> None:
        n = self.alphabet_size
        for prev, lv in zip(self._levels, self._levels[1:]):
            node = lv.keys // n
            sym = lv.keys % n
            par = lv.parent[node]
            # every transition of w is also a transition of its suffix, so the lookup always hits
            parent_counts = prev.counts[np.searchsorted(prev.keys, par * n + sym)]
            c = lv.counts.astype(float)
            terms = c * (
                np.log(c) + np.log(prev.totals[par].astype(float))
                - np.log(lv.totals[node].astype(float)) - np.log(parent_counts.astype(float))
            )
            g = np.bincount(node, weights=terms, minlength=lv.totals.size)
            # q_w == q_u exactly (integer check) means zero gain, whatever the rounding
            differs = c.astype(np.int64) * prev.totals[par] != lv.totals[node] * parent_counts
            same = np.bincount(node, weights=differs, minlength=lv.totals.size) == 0
            g[same] = 0.0
            lv.gains = np.maximum(g, 0.0)

    def prune(self, threshold: float) -> "ContextTree":
        """Keep contexts whose gain exceeds ``threshold``, closed under suffixes."""
        keep = [np.ones(1, dtype=bool)] + [lv.gains > threshold for lv in self._levels[1:]]
        for d in range(len(self._levels) - 1, 1, -1):
            keep[d - 1][self._levels[d].parent[keep[d]]] = True
        nodes: dict[Context, ContextNode] = {}
        for d, lv in enumerate(self._levels):
            rows = np.flatnonzero(keep[d])
            if rows.size == 0:
                continue
            dense = self._dense(d, rows)
            ctxs = lv.contexts[rows].tolist()
            for ctx, counts in zip(ctxs, dense):
                nodes[tuple(ctx)] = ContextNode(tuple(ctx), counts)
        return ContextTree(
            alphabet_size=self.alphabet_size,
            max_depth=self.max_depth,
            threshold=float(threshold),
            nodes=nodes,
            stream_length=self.stream_length,
        )


def count_subsequences(stream, max_depth: int = DEFAULT_DEPTH, alphabet_size: Optional[int] = None) -> SaturatedTree:
    x, n = _as_symbols(stream, alphabet_size)
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    L = int(x.size)
    if L < 2:
        raise ValueError("stream needs at least 2 symbols")

    root_counts = np.bincount(x[1:], minlength=n)
    nz = np.flatnonzero(root_counts)
    levels = [
        _Level(
            contexts=np.empty((1, 0), dtype=np.int64),
            parent=np.array([-1]),
            totals=np.array([L - 1]),
            keys=nz.astype(np.int64),
            counts=root_counts[nz],
        )
    ]
    # ids[i]: row of the current-depth context ending at position i (-1 if it does not fit)
    ids = np.zeros(L - 1, dtype=np.int64)
    for depth in range(1, min(max_depth, L - 1) + 1):
        pos = np.arange(depth - 1, L - 1)
        key = ids[pos] * n + x[pos - depth + 1]
        uniq, first, inv = np.unique(key, return_index=True, return_inverse=True)
        inv = inv.ravel()
        start = pos[first] - depth + 1
        windows = sliding_window_view(x, depth)[start]
        tkeys, tcounts = np.unique(inv * n + x[pos + 1], return_counts=True)
        levels.append(
            _Level(
                contexts=np.ascontiguousarray(windows),
                parent=uniq // n,
                totals=np.bincount(inv, minlength=uniq.size),
                keys=tkeys,
                counts=tcounts,
            )
        )
        ids = np.full(L - 1, -1, dtype=np.int64)
        ids[pos] = inv
    return SaturatedTree(levels, n, max_depth, L)


def prune(saturated: SaturatedTree, threshold: float) -> "ContextTree":
    return saturated.prune(threshold)


def fit(
    stream,
    max_depth: int = DEFAULT_DEPTH,
    threshold: Optional[float] = None,
    alphabet_size: Optional[int] = None,
    config: Optional[DiscretizationConfig] = None,
) -> "ContextTree":
    """Count, then prune at ``threshold`` (default: :func:`default_threshold`)."""
    sat = count_subsequences(stream, max_depth, alphabet_size)
    if threshold is None:
        threshold = default_threshold(sat.alphabet_size)
    tree = sat.prune(threshold)
    if config is not None:
        if config.alphabet.size != tree.alphabet_size:
            raise ValueError("config alphabet does not match stream alphabet")
        tree = tree.with_config(config)
    return tree


@dataclass(frozen=True, eq=False)
class ContextTree:
    alphabet_size: int
    max_depth: int
    threshold: float
    nodes: Mapping[Context, ContextNode] = field(repr=False)
    delta_t: Optional[float] = None
    t_max: Optional[float] = None
    stream_length: Optional[int] = None

    def __post_init__(self):
        if () not in self.nodes:
            raise ValueError("context tree must contain the root")
        for ctx, node in self.nodes.items():
            if node.counts.size != self.alphabet_size:
                raise ValueError(f"context {ctx}: counts length != alphabet size")
            if len(ctx) > self.max_depth:
                raise ValueError(f"context {ctx} deeper than max_depth")
            if ctx and ctx[1:] not in self.nodes:
                raise ValueError(f"context {ctx} is missing its suffix {ctx[1:]}")
        ordered = dict(sorted(self.nodes.items(), key=lambda kv: (len(kv[0]), kv[0])))
        object.__setattr__(self, "nodes", ordered)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, w) -> bool:
        return tuple(w) in self.nodes

    def __eq__(self, other) -> bool:
        if not isinstance(other, ContextTree):
            return NotImplemented
        return (
            self.alphabet_size == other.alphabet_size
            and self.nodes.keys() == other.nodes.keys()
            and all(np.array_equal(self.nodes[k].counts, other.nodes[k].counts) for k in self.nodes)
        )

    __hash__ = None

    @property
    def end_symbol(self) -> int:
        return self.alphabet_size - 1

    @property
    def root(self) -> ContextNode:
        return self.nodes[()]

    @property
    def depth(self) -> int:
        return max(len(c) for c in self.nodes)

    def contexts(self) -> list[Context]:
        return list(self.nodes)

    def with_config(self, cfg: DiscretizationConfig) -> "ContextTree":
        return ContextTree(
            self.alphabet_size, self.max_depth, self.threshold, self.nodes,
            cfg.delta_t, cfg.t_max, self.stream_length,
        )

    # index of contexts into the rows of the count matrix
    @cached_property
    def _rows(self) -> dict[Context, int]:
        return {c: i for i, c in enumerate(self.nodes)}

    @cached_property
    def count_matrix(self) -> np.ndarray:
        return np.vstack([node.counts for node in self.nodes.values()])

    @cached_property
    def distribution_matrix(self) -> np.ndarray:
        counts = self.count_matrix.astype(float)
        totals = counts.sum(axis=1, keepdims=True)
        return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)

    def smoothed_matrix(self, alpha: float = SMOOTHING_ALPHA) -> np.ndarray:
        counts = self.count_matrix.astype(float)
        return (counts + alpha) / (counts.sum(axis=1, keepdims=True) + alpha * self.alphabet_size)

    def lookup_row(self, history: Sequence[int]) -> int:
        """Row of the longest suffix of ``history`` that is a context."""
        rows = self._rows
        best = rows[()]
        h = tuple(history[-self.max_depth:]) if self.max_depth else ()
        for d in range(1, len(h) + 1):
            row = rows.get(h[len(h) - d:])
            if row is None:
                break
            best = row
        return best

    @cached_property
    def _context_list(self) -> list[Context]:
        return list(self.nodes)

    def lookup(self, history: Sequence[int]) -> ContextNode:
        return self.nodes[self._context_list[self.lookup_row(history)]]

    def to_dict(self) -> dict:
        return {
            "alphabet_size": self.alphabet_size,
            "delta_t": self.delta_t,
            "t_max": self.t_max,
            "D": self.max_depth,
            "K": self.threshold,
            "stream_length": self.stream_length,
            "contexts": [
                {
                    "context": list(ctx),
                    "count": node.occurrence_count,
                    "child_counts": {str(s): c for s, c in node.child_counts.items()},
                }
                for ctx, node in self.nodes.items()
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ContextTree":
        n = int(doc["alphabet_size"])
        nodes = {}
        for entry in doc["contexts"]:
            counts = np.zeros(n, dtype=np.int64)
            for s, c in entry["child_counts"].items():
                counts[int(s)] = int(c)
            if "count" in entry and int(entry["count"]) != int(counts.sum()):
                raise ValueError(f"context {entry['context']}: count does not match child counts")
            ctx = tuple(int(s) for s in entry["context"])
            nodes[ctx] = ContextNode(ctx, counts)
        return cls(
            alphabet_size=n,
            max_depth=int(doc["D"]),
            threshold=float(doc["K"]),
            nodes=nodes,
            delta_t=doc.get("delta_t"),
            t_max=doc.get("t_max"),
            stream_length=doc.get("stream_length"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ContextTree":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def context_lookup(tree: ContextTree, history: Sequence[int]) -> ContextNode:
    return tree.lookup(list(history))


def _log_probs(tree: ContextTree, alpha: float) -> np.ndarray:
    if alpha > 0:
        return np.log(tree.smoothed_matrix(alpha))
    with np.errstate(divide="ignore"):
        return np.log(tree.distribution_matrix)


def log_likelihood(
    tree: ContextTree,
    stream,
    alpha: float = SMOOTHING_ALPHA,
    history: Sequence[int] = (),
    start: int = 0,
) -> float:
    """Sum of ``log p(x_i | context of x_<i)`` over positions ``i >= start``.

    ``history`` is prepended as conditioning context only; it is not scored.
    """
    x, _ = _as_symbols(stream, tree.alphabet_size)
    logp = _log_probs(tree, alpha)
    seq = list(history) + x.tolist()
    offset = len(history)
    total = 0.0
    for i in range(offset + start, len(seq)):
        lo = max(0, i - tree.max_depth)
        total += logp[tree.lookup_row(seq[lo:i]), seq[i]]
    return float(total)


def n_parameters(tree: ContextTree) -> int:
    return len(tree) * (tree.alphabet_size - 1)


def aic(tree: ContextTree, stream, alpha: float = SMOOTHING_ALPHA, start: int = 0) -> float:
    return 2 * n_parameters(tree) - 2 * log_likelihood(tree, stream, alpha=alpha, start=start)


def generate(
    tree: ContextTree,
    n_codas: int,
    seed: int | np.random.Generator | None = None,
    max_length: int = MAX_CODA_LENGTH,
    history: Optional[Sequence[int]] = None,
) -> list[list[int]]:
    """Sample ``n_codas`` codas, each ending with the end symbol.

    The rolling history starts as ``[end_symbol]`` (as if a coda had just
    finished) and keeps end symbols, so cross-coda context is modelled.
    """
    if n_codas < 1:
        raise ValueError("n_codas must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    end = tree.end_symbol
    cdf = np.cumsum(tree.distribution_matrix, axis=1)
    hist: deque[int] = deque([end] if history is None else history, maxlen=max(tree.max_depth, 1))
    out = []
    for _ in range(n_codas):
        coda = []
        while True:
            if len(coda) >= max_length:
                raise GenerationError(f"coda exceeded {max_length} symbols without an end symbol")
            row = cdf[tree.lookup_row(list(hist))]
            s = int(np.searchsorted(row, rng.random() * row[-1], side="right"))
            s = min(s, tree.alphabet_size - 1)
            coda.append(s)
            hist.append(s)
            if s == end:
                break
        out.append(coda)
    return out


def classify(coda: Sequence[int], models: Mapping[str, ContextTree], alpha: float = SMOOTHING_ALPHA) -> str:
    """Label of the model giving the coda the highest log-likelihood.

    Each coda is scored as if it followed an end symbol. Ties go to the
    lexicographically smallest label.
    """
    if len(models) < 2:
        raise ValueError("need at least two models to classify")
    sizes = {m.alphabet_size for m in models.values()}
    if len(sizes) != 1:
        raise ValueError("models have different alphabets")
    best_label, best_score = None, -math.inf
    for label in sorted(models):
        tree = models[label]
        score = log_likelihood(tree, coda, alpha=alpha, history=(tree.end_symbol,))
        if best_label is None or score > best_score:
            best_label, best_score = label, score
    return best_label
