"""Fixed-order Markov baselines: memory scan and temporal-resolution scan."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ingest import CodaRecord, CodaSample
from .symbols import DiscretizationConfig, encode_records
from .vlmc import DEFAULT_DEPTH, _as_symbols, aic as vlmc_aic, fit as fit_vlmc


@dataclass(frozen=True)
class FixedOrderModel:
    """MLE transition table over the histories that actually occur.

    Transitions are stored sparsely: ``keys = history_row * n + symbol``.
    """

    order: int
    alphabet_size: int
    histories: np.ndarray = field(repr=False)  # (m, order)
    totals: np.ndarray = field(repr=False)  # (m,)
    keys: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)

    @property
    def n_histories(self) -> int:
        return int(self.totals.size)

    @property
    def n_parameters(self) -> int:
        return (self.alphabet_size - 1) * self.n_histories

    @property
    def probabilities(self) -> np.ndarray:
        """Nonzero transition probabilities, aligned with ``keys``."""
        return self.counts / self.totals[self.keys // self.alphabet_size]

    def transition_matrix(self) -> np.ndarray:
        n = self.alphabet_size
        out = np.zeros((self.n_histories, n))
        out[self.keys // n, self.keys % n] = self.probabilities
        return out

    def prob(self, history: Sequence[int], symbol: int) -> float:
        h = tuple(history[len(history) - self.order:]) if self.order else ()
        rows = np.flatnonzero((self.histories == np.array(h, dtype=np.int64)).all(axis=1))
        if rows.size == 0:
            return math.nan
        return float(self.transition_matrix()[rows[0], symbol])

    @property
    def log_likelihood(self) -> float:
        c = self.counts.astype(float)
        return float(np.sum(c * np.log(self.probabilities)))

    @property
    def aic(self) -> float:
        return 2 * self.n_parameters - 2 * self.log_likelihood


def fit_fixed(stream, order: int, alphabet_size: Optional[int] = None) -> FixedOrderModel:
    """Order-``order`` chain scored on positions ``order .. L-1``."""
    x, n = _as_symbols(stream, alphabet_size)
    if order < 0:
        raise ValueError("order must be >= 0")
    if x.size <= order:
        raise ValueError(f"stream of length {x.size} too short for order {order}")
    win = sliding_window_view(x, order + 1)
    nxt = win[:, -1]
    if order == 0:
        histories = np.empty((1, 0), dtype=np.int64)
        inv = np.zeros(nxt.size, dtype=np.int64)
    else:
        histories, inv = np.unique(win[:, :-1], axis=0, return_inverse=True)
        inv = inv.ravel()
    keys, counts = np.unique(inv * n + nxt, return_counts=True)
    totals = np.bincount(inv, minlength=histories.shape[0])
    return FixedOrderModel(order, n, histories, totals, keys, counts)


@dataclass(frozen=True)
class OrderStats:
    order: int
    mean_probability: float
    variance_probability: float
    mean_nonzero_per_history: float
    n_histories: int
    log_likelihood: float
    aic: float


@dataclass(frozen=True)
class OrderScanReport:
    rows: tuple[OrderStats, ...]

    @property
    def best_order(self) -> int:
        """Order with the lowest AIC (first on ties)."""
        return min(self.rows, key=lambda r: r.aic).order

    @property
    def variance_peak(self) -> int:
        return max(self.rows, key=lambda r: r.variance_probability).order

    def as_records(self) -> list[dict]:
        return [r.__dict__.copy() for r in self.rows]


def order_stats(model: FixedOrderModel) -> OrderStats:
    p = model.probabilities
    return OrderStats(
        order=model.order,
        mean_probability=float(p.mean()),
        variance_probability=float(p.var()),
        mean_nonzero_per_history=p.size / model.n_histories,
        n_histories=model.n_histories,
        log_likelihood=model.log_likelihood,
        aic=model.aic,
    )


def scan_orders(stream, h_min: int = 0, h_max: int = 6, alphabet_size: Optional[int] = None) -> OrderScanReport:
    if not 0 <= h_min <= h_max:
        raise ValueError("need 0 <= h_min <= h_max")
    x, n = _as_symbols(stream, alphabet_size)
    return OrderScanReport(tuple(order_stats(fit_fixed(x, h, n)) for h in range(h_min, h_max + 1)))


@dataclass(frozen=True)
class ResolutionRow:
    delta_t: float
    alphabet_size: int
    n_contexts: int
    vlmc_aic: float
    order0_aic: float

    @property
    def aic_difference(self) -> float:
        return self.vlmc_aic - self.order0_aic


@dataclass(frozen=True)
class ResolutionScan:
    rows: tuple[ResolutionRow, ...]

    @property
    def best_delta_t(self) -> float:
        return min(self.rows, key=lambda r: r.aic_difference).delta_t


def resolution_scan(
    sample: CodaSample | Sequence[CodaRecord],
    delta_ts: Sequence[float],
    t_max: float = 1.0,
    max_depth: int = DEFAULT_DEPTH,
) -> ResolutionScan:
    """AIC of the fitted VLMC minus AIC of an order-0 chain, per bin width.

    Both models are scored with unsmoothed likelihood on the same L-1
    transitions (the first symbol has no predecessor in the VLMC counts), so
    a constant stream gives a difference of exactly zero.
    """
    records = sample.records if isinstance(sample, CodaSample) else list(sample)
    rows = []
    for dt in delta_ts:
        cfg = DiscretizationConfig(delta_t=dt, t_max=t_max)
        stream = encode_records(records, cfg)
        tree = fit_vlmc(stream, max_depth=max_depth)
        base = fit_fixed(stream.symbols[1:], 0, stream.alphabet_size)
        rows.append(
            ResolutionRow(
                delta_t=dt,
                alphabet_size=stream.alphabet_size,
                n_contexts=len(tree),
                vlmc_aic=vlmc_aic(tree, stream, alpha=0.0, start=1),
                order0_aic=base.aic,
            )
        )
    return ResolutionScan(tuple(rows))
