"""Two-sample tests, correlations, OLS and bootstrap intervals.

Statistics are computed here; only the reference distributions (t,
Kolmogorov) come from scipy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Optional, Sequence

import numpy as np
from scipy import special
from scipy.stats import rankdata, t as t_dist

from .metric import DistanceMatrix


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str

    __test__ = False  # keep pytest from collecting this class


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    p_value: float
    n: int
    stderr: float


@dataclass(frozen=True)
class BootstrapCI:
    lower: float
    upper: float
    level: float = 0.95
    n_resamples: int = 1000
    seed: Optional[int] = None

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def _clip_p(p: float) -> float:
    return float(min(1.0, max(0.0, p)))


def _vec(a, name: str, min_n: int) -> np.ndarray:
    a = np.asarray(a, dtype=float).ravel()
    if a.size < min_n:
        raise ValueError(f"{name} needs at least {min_n} values, got {a.size}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def ks_two_sample(a, b) -> TestResult:
    """Two-sided KS test with the asymptotic Kolmogorov p-value."""
    a = np.sort(_vec(a, "a", 2))
    b = np.sort(_vec(b, "b", 2))
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    en = a.size * b.size / (a.size + b.size)
    p = float(special.kolmogorov(math.sqrt(en) * d))
    return TestResult(d, _clip_p(p), "ks_2samp_asymptotic")


def welch_t_test(a, b) -> TestResult:
    a = _vec(a, "a", 2)
    b = _vec(b, "b", 2)
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0:
        raise ValueError("both samples have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    wa, wb = va / se2, vb / se2  # normalised so tiny variances do not underflow
    df = 1.0 / (wa**2 / (a.size - 1) + wb**2 / (b.size - 1))
    p = 2 * t_dist.sf(abs(t), df)
    return TestResult(float(t), _clip_p(p), "welch_t")


def cohens_d(a, b) -> float:
    a = _vec(a, "a", 2)
    b = _vec(b, "b", 2)
    pooled = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / (a.size + b.size - 2)
    if pooled == 0:
        raise ValueError("pooled variance is zero; effect size undefined")
    return float((a.mean() - b.mean()) / math.sqrt(pooled))


def pearson(x, y) -> tuple[float, float]:
    x = _vec(x, "x", 3)
    y = _vec(y, "y", 3)
    if x.size != y.size:
        raise ValueError("x and y differ in length")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("zero variance input")
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    df = x.size - 2
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt(df / (1 - r * r))
    return r, _clip_p(2 * t_dist.sf(abs(t), df))


def spearman(x, y) -> tuple[float, float]:
    x = _vec(x, "x", 3)
    y = _vec(y, "y", 3)
    return pearson(rankdata(x), rankdata(y))


def ols(x, y) -> RegressionResult:
    x = _vec(x, "x", 3)
    y = _vec(y, "y", 3)
    if x.size != y.size:
        raise ValueError("x and y differ in length")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0:
        raise ValueError("x is constant")
    slope = float(dx @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - intercept - slope * x
    sse = float(resid @ resid)
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if sst == 0 else float(min(1.0, max(0.0, 1 - sse / sst)))
    df = x.size - 2
    stderr = math.sqrt(sse / df / sxx)
    if stderr == 0:
        p = 0.0 if slope != 0 else 1.0
    else:
        p = float(2 * t_dist.sf(abs(slope / stderr), df))
    return RegressionResult(slope, intercept, r2, _clip_p(p), int(x.size), stderr)


def bootstrap_slope_ci(
    x,
    y,
    n_resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    max_retries: int = 100,
) -> BootstrapCI:
    """Percentile interval of OLS slopes over pairs resampled with replacement.

    Resample ``i`` draws from its own generator seeded by ``(seed, i)``, so the
    result does not depend on evaluation order.
    """
    x = _vec(x, "x", 5)
    y = _vec(y, "y", 5)
    if x.size != y.size:
        raise ValueError("x and y differ in length")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    n = x.size
    slopes = np.empty(n_resamples)
    for i in range(n_resamples):
        rng = np.random.default_rng([seed, i])
        for _ in range(max_retries):
            idx = rng.integers(0, n, n)
            xs = x[idx]
            if np.ptp(xs) > 0:
                break
        else:
            raise RuntimeError(f"resample {i}: x constant after {max_retries} redraws")
        ys = y[idx]
        dx = xs - xs.mean()
        slopes[i] = (dx @ (ys - ys.mean())) / (dx @ dx)
    tail = (1 - level) / 2
    lo, hi = np.quantile(slopes, [tail, 1 - tail])
    return BootstrapCI(float(lo), float(hi), level, n_resamples, seed)


def within_between(
    m: DistanceMatrix,
    labels: Sequence[Hashable],
    group: Optional[Hashable] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Split off-diagonal distances into same-group and cross-group values.

    Symmetric matrices contribute each unordered pair once, asymmetric ones
    both directions. With ``group`` set, ``within`` keeps pairs inside that
    group and ``between`` pairs with exactly one member in it.
    """
    if len(labels) != len(m):
        raise ValueError("one label per matrix item required")
    labels = list(labels)
    n = len(labels)
    within, between = [], []
    for i in range(n):
        for j in range(n):
            if i == j or (m.symmetric and j < i):
                continue
            same = labels[i] == labels[j]
            if group is not None:
                inside = (labels[i] == group) + (labels[j] == group)
                if inside == 0:
                    continue
                (within if inside == 2 else between).append(m.values[i, j])
            else:
                (within if same else between).append(m.values[i, j])
    return np.array(within), np.array(between)
