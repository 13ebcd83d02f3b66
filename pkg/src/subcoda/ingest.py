"""Loading and partitioning of annotated coda datasets and clan-overlap tables.

Coda CSV layout (one row per coda)::

    coda_id,sample_id,unit_id,clan,coda_type,id_flag,icis
    c1,s1,U1,EC1,5R1,true,0.20;0.21;0.19;0.22

Empty optional fields load as ``None``. Operations that need one of them
raise at call time.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

CODA_COLUMNS = ("coda_id", "sample_id", "unit_id", "clan", "coda_type", "id_flag", "icis")

_TRUE = {"true", "1", "yes", "t", "id"}
_FALSE = {"false", "0", "no", "f", "nonid", "non-id"}


class DataError(ValueError):
    """Raised for malformed input files or records."""


@dataclass(frozen=True)
class CodaRecord:
    coda_id: str
    sample_id: str
    icis: tuple[float, ...]
    unit_id: Optional[str] = None
    clan: Optional[str] = None
    coda_type: Optional[str] = None
    id_flag: Optional[bool] = None

    def __post_init__(self):
        icis = tuple(float(v) for v in self.icis)
        if not icis:
            raise DataError(f"coda {self.coda_id!r}: empty ICI list")
        for v in icis:
            if not math.isfinite(v) or v <= 0:
                raise DataError(f"coda {self.coda_id!r}: ICI must be positive and finite, got {v!r}")
        object.__setattr__(self, "icis", icis)

    @property
    def n_clicks(self) -> int:
        return len(self.icis) + 1


@dataclass(frozen=True)
class CodaSample:
    sample_id: str
    records: tuple[CodaRecord, ...]
    clan: Optional[str] = None

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise DataError(f"sample {self.sample_id!r} has no codas")
        for r in records:
            if r.sample_id != self.sample_id:
                raise DataError(
                    f"record {r.coda_id!r} belongs to sample {r.sample_id!r}, not {self.sample_id!r}"
                )
        object.__setattr__(self, "records", records)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class Dataset:
    samples: tuple[CodaSample, ...]
    provenance: str = ""

    def __post_init__(self):
        samples = tuple(self.samples)
        ids = [s.sample_id for s in samples]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate sample_id in dataset")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_codas(self) -> int:
        return sum(len(s) for s in self.samples)

    def records(self) -> list[CodaRecord]:
        return [r for s in self.samples for r in s.records]

    def clans(self) -> list[str]:
        """Distinct clan labels, sorted."""
        return sorted({r.clan for r in self.records() if r.clan is not None})


@dataclass(frozen=True)
class OverlapMatrix:
    """Fraction of the row clan's samples recorded near the column clan (asymmetric)."""

    labels: tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        n = len(self.labels)
        if values.shape != (n, n):
            raise DataError(f"overlap matrix must be {n}x{n}, got {values.shape}")
        if len(set(self.labels)) != n:
            raise DataError("duplicate clan label in overlap matrix")
        if not np.all(np.isfinite(values)) or values.min() < 0 or values.max() > 1:
            raise DataError("overlap entries must lie in [0, 1]")
        if not np.all(np.diag(values) == 1):
            raise DataError("overlap matrix diagonal must be 1")
        values.setflags(write=False)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "values", values)

    def __getitem__(self, key: tuple[str, str]) -> float:
        a, b = key
        return float(self.values[self.labels.index(a), self.labels.index(b)])


def group_samples(records: Iterable[CodaRecord], provenance: str = "") -> Dataset:
    """Group records into samples by sample_id, keeping first-appearance order."""
    by_sample: dict[str, list[CodaRecord]] = {}
    for r in records:
        by_sample.setdefault(r.sample_id, []).append(r)
    samples = []
    for sid, recs in by_sample.items():
        clans = {r.clan for r in recs}
        clan = clans.pop() if len(clans) == 1 else None
        samples.append(CodaSample(sid, tuple(recs), clan))
    return Dataset(tuple(samples), provenance)


def _opt(value: str) -> Optional[str]:
    value = value.strip()
    return value or None


def _parse_flag(value: str, line: int) -> Optional[bool]:
    v = value.strip().lower()
    if not v:
        return None
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise DataError(f"row {line}: cannot parse id_flag {value!r}")


def parse_coda_rows(rows: Iterable[Sequence[str]], start_line: int = 2) -> list[CodaRecord]:
    records = []
    seen: set[str] = set()
    for line, row in enumerate(rows, start=start_line):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CODA_COLUMNS):
            raise DataError(f"row {line}: expected {len(CODA_COLUMNS)} fields, got {len(row)}")
        coda_id, sample_id, unit_id, clan, coda_type, id_flag, icis = row
        coda_id = coda_id.strip()
        sample_id = sample_id.strip()
        if not coda_id or not sample_id:
            raise DataError(f"row {line}: coda_id and sample_id are required")
        if coda_id in seen:
            raise DataError(f"row {line}: duplicate coda_id {coda_id!r}")
        seen.add(coda_id)
        parts = [p for p in icis.strip().split(";") if p.strip()]
        if not parts:
            raise DataError(f"row {line}: empty ICI list")
        try:
            values = tuple(float(p) for p in parts)
        except ValueError:
            raise DataError(f"row {line}: non-numeric ICI in {icis!r}") from None
        try:
            records.append(
                CodaRecord(
                    coda_id=coda_id,
                    sample_id=sample_id,
                    icis=values,
                    unit_id=_opt(unit_id),
                    clan=_opt(clan),
                    coda_type=_opt(coda_type),
                    id_flag=_parse_flag(id_flag, line),
                )
            )
        except DataError as exc:
            raise DataError(f"row {line}: {exc}") from None
    return records


def load_dataset(path: str | os.PathLike, format: str = "csv") -> Dataset:
    if format != "csv":
        raise ValueError(f"unsupported format {format!r}")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such dataset file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CODA_COLUMNS:
            raise DataError(f"row 1: header must be {','.join(CODA_COLUMNS)}")
        records = parse_coda_rows(reader)
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return group_samples(records, provenance=f"{path} loaded {stamp}")


def dumps_dataset(d: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CODA_COLUMNS)
    for r in d.records():
        flag = "" if r.id_flag is None else ("true" if r.id_flag else "false")
        writer.writerow(
            [
                r.coda_id,
                r.sample_id,
                r.unit_id or "",
                r.clan or "",
                r.coda_type or "",
                flag,
                ";".join(repr(v) for v in r.icis),
            ]
        )
    return buf.getvalue()


def write_dataset(d: Dataset, path: str | os.PathLike) -> None:
    Path(path).write_text(dumps_dataset(d), encoding="utf-8")


def filter_min_codas(d: Dataset, min_codas: int) -> Dataset:
    if min_codas < 1:
        raise ValueError("min_codas must be >= 1")
    return replace(d, samples=tuple(s for s in d.samples if len(s) >= min_codas))


def _restrict(d: Dataset, keep) -> Dataset:
    samples = []
    for s in d.samples:
        recs = tuple(r for r in s.records if keep(r))
        if recs:
            samples.append(replace(s, records=recs))
    return replace(d, samples=tuple(samples))


def restrict_to_clan(d: Dataset, clan: str) -> Dataset:
    return _restrict(d, lambda r: r.clan == clan)


def partition_id_nonid(d: Dataset, clan: str) -> tuple[Dataset, Dataset]:
    """Split the codas of one clan into (identity, non-identity) datasets."""
    subset = restrict_to_clan(d, clan)
    missing = [r.coda_id for r in subset.records() if r.id_flag is None]
    if missing:
        raise DataError(f"clan {clan!r}: {len(missing)} codas lack id_flag (first: {missing[0]!r})")
    return _restrict(subset, lambda r: r.id_flag), _restrict(subset, lambda r: not r.id_flag)


def load_overlap_matrix(path: str | os.PathLike) -> OverlapMatrix:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such overlap file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError("empty overlap file")
    labels = tuple(c.strip() for c in rows[0][1:])
    body = rows[1:]
    if len(body) != len(labels):
        raise DataError(f"overlap matrix is not square: {len(labels)} columns, {len(body)} rows")
    values = np.empty((len(labels), len(labels)))
    for i, row in enumerate(body):
        if row[0].strip() != labels[i]:
            raise DataError(f"row {i + 2}: expected label {labels[i]!r}, got {row[0]!r}")
        if len(row) - 1 != len(labels):
            raise DataError(f"row {i + 2}: expected {len(labels)} values, got {len(row) - 1}")
        try:
            values[i] = [float(c) for c in row[1:]]
        except ValueError:
            raise DataError(f"row {i + 2}: non-numeric overlap value") from None
    return OverlapMatrix(labels, values)


def write_overlap_matrix(m: OverlapMatrix, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["clan", *m.labels])
        for label, row in zip(m.labels, m.values):
            writer.writerow([label, *(repr(float(v)) for v in row)])
