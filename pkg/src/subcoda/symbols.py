"""Discretization of inter-click intervals into a finite symbol alphabet.

An ICI maps to ``floor(min(ici, t_max) / delta_t)``. The largest symbol,
``floor(t_max / delta_t)``, doubles as the end-of-coda marker.

The floor is taken on the exact quotient of the two decimal values as
written (their shortest repr), not on the rounded float quotient: in
floating point ``0.3 / 0.05`` is ``5.999...``, which would put an ICI of
exactly 0.3 s in the wrong bin. No tolerance is involved, so the result
is deterministic and every bin is exactly ``[s * delta_t, (s + 1) * delta_t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .ingest import CodaRecord, CodaSample

DEFAULT_DELTA_T = 0.05
DEFAULT_T_MAX = 1.0


@dataclass(frozen=True)
class DiscretizationConfig:
    delta_t: float = DEFAULT_DELTA_T
    t_max: float = DEFAULT_T_MAX

    def __post_init__(self):
        for name in ("delta_t", "t_max"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
        if self.t_max < self.delta_t:
            raise ValueError("t_max must be >= delta_t")

    @property
    def alphabet(self) -> "Alphabet":
        return Alphabet(_floor_div(self.t_max, self.delta_t) + 1)


@dataclass(frozen=True)
class Alphabet:
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("alphabet needs at least 2 symbols")

    @property
    def end_symbol(self) -> int:
        return self.size - 1


@dataclass(frozen=True)
class SymbolStream:
    """Concatenated symbol sequence; ``boundaries`` index every end symbol."""

    symbols: np.ndarray = field(repr=False)
    alphabet_size: int

    def __post_init__(self):
        arr = np.ascontiguousarray(self.symbols, dtype=np.int64)
        if arr.ndim != 1:
            raise ValueError("symbol stream must be one-dimensional")
        if arr.size and (arr.min() < 0 or arr.max() >= self.alphabet_size):
            raise ValueError("symbol outside alphabet")
        arr.setflags(write=False)
        object.__setattr__(self, "symbols", arr)

    def __len__(self) -> int:
        return int(self.symbols.size)

    @property
    def end_symbol(self) -> int:
        return self.alphabet_size - 1

    @property
    def boundaries(self) -> np.ndarray:
        return np.flatnonzero(self.symbols == self.end_symbol)

    def codas(self) -> list[list[int]]:
        """Split after every end symbol; a trailing unterminated tail is kept."""
        out, cur = [], []
        for s in self.symbols.tolist():
            cur.append(s)
            if s == self.end_symbol:
                out.append(cur)
                cur = []
        if cur:
            out.append(cur)
        return out


def discretize_ici(ici: float, cfg: DiscretizationConfig = DiscretizationConfig()) -> int:
    if not (math.isfinite(ici) and ici > 0):
        raise ValueError(f"ICI must be positive and finite, got {ici!r}")
    return _floor_div(min(ici, cfg.t_max), cfg.delta_t)


def _floor_div(a: float, b: float) -> int:
    q = a / b
    s = math.floor(q)
    if q - s > 1e-6 and s + 1 - q > 1e-6:
        return s  # far from a bin edge: the float floor is already exact
    return math.floor(Fraction(repr(a)) / Fraction(repr(b)))


def encode_icis(icis: Iterable[float], cfg: DiscretizationConfig = DiscretizationConfig()) -> list[int]:
    out = [discretize_ici(v, cfg) for v in icis]
    out.append(cfg.alphabet.end_symbol)
    return out


def encode_coda(coda: CodaRecord, cfg: DiscretizationConfig = DiscretizationConfig()) -> list[int]:
    """One symbol per ICI followed by the end symbol."""
    return encode_icis(coda.icis, cfg)


def encode_records(records: Sequence[CodaRecord], cfg: DiscretizationConfig = DiscretizationConfig()) -> SymbolStream:
    if not records:
        raise ValueError("cannot encode an empty set of codas")
    symbols: list[int] = []
    for r in records:
        symbols.extend(encode_coda(r, cfg))
    return SymbolStream(np.array(symbols, dtype=np.int64), cfg.alphabet.size)


def encode_sample(sample: CodaSample, cfg: DiscretizationConfig = DiscretizationConfig()) -> SymbolStream:
    return encode_records(sample.records, cfg)


def symbols_to_icis(symbols: Sequence[int], cfg: DiscretizationConfig = DiscretizationConfig()) -> list[float]:
    """Bin-centre ICIs for a coda's symbols, dropping the end symbol.

    Used to turn generated codas back into records; re-encoding the result
    reproduces the symbols.
    """
    end = cfg.alphabet.end_symbol
    return [(s + 0.5) * cfg.delta_t for s in symbols if s != end]
