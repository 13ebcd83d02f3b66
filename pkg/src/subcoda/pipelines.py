"""End-to-end analyses built from the core modules.

Each function takes an in-memory :class:`~subcoda.ingest.Dataset` and
returns plain data; :mod:`subcoda.cli` handles files.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import cluster, stats
from .ingest import CodaRecord, DataError, Dataset, OverlapMatrix
from .metric import DistanceMatrix, distance_matrix, symmetric_distance
from .symbols import DiscretizationConfig, encode_coda, encode_records, symbols_to_icis
from .vlmc import DEFAULT_DEPTH, ContextTree, classify, fit, generate

log = logging.getLogger(__name__)

GROUPINGS = ("sample", "unit", "clan")


@dataclass(frozen=True)
class ModelConfig:
    delta_t: float = 0.05
    t_max: float = 1.0
    depth: int = DEFAULT_DEPTH
    threshold: Optional[float] = None  # None: half chi-square 0.95 quantile

    @property
    def discretization(self) -> DiscretizationConfig:
        return DiscretizationConfig(self.delta_t, self.t_max)


def fit_records(records: Sequence[CodaRecord], cfg: ModelConfig = ModelConfig()) -> ContextTree:
    disc = cfg.discretization
    stream = encode_records(records, disc)
    return fit(stream, max_depth=cfg.depth, threshold=cfg.threshold, config=disc)


def group_records(d: Dataset, by: str = "sample") -> dict[str, list[CodaRecord]]:
    """Records per group, groups in sorted label order, records in file order."""
    if by not in GROUPINGS:
        raise ValueError(f"unknown grouping {by!r}")
    groups: dict[str, list[CodaRecord]] = {}
    for r in d.records():
        key = {"sample": r.sample_id, "unit": r.unit_id, "clan": r.clan}[by]
        if key is None:
            raise DataError(f"coda {r.coda_id!r} has no {by} label")
        groups.setdefault(key, []).append(r)
    return {k: groups[k] for k in sorted(groups)}


def group_clans(groups: dict[str, list[CodaRecord]]) -> dict[str, Optional[str]]:
    """The single clan of each group, or None when absent or mixed."""
    out = {}
    for label, recs in groups.items():
        clans = {r.clan for r in recs}
        out[label] = clans.pop() if len(clans) == 1 else None
    return out


def fit_groups(
    groups: dict[str, list[CodaRecord]],
    cfg: ModelConfig = ModelConfig(),
    min_codas: int = 1,
    threads: int = 1,
) -> dict[str, ContextTree]:
    kept = {}
    for label, recs in groups.items():
        if len(recs) < min_codas:
            log.warning("skipping group %s: %d codas < %d", label, len(recs), min_codas)
            continue
        kept[label] = recs
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            trees = list(pool.map(lambda recs: fit_records(recs, cfg), kept.values()))
    else:
        trees = [fit_records(recs, cfg) for recs in kept.values()]
    return dict(zip(kept, trees))


def _test_row(within: np.ndarray, between: np.ndarray) -> dict:
    row = {"n_within": int(within.size), "n_between": int(between.size)}
    if within.size >= 2 and between.size >= 2:
        ks = stats.ks_two_sample(within, between)
        row.update(ks_statistic=ks.statistic, ks_p=ks.p_value)
        try:
            t = stats.welch_t_test(within, between)
            row.update(t_statistic=t.statistic, t_p=t.p_value, cohens_d=stats.cohens_d(within, between))
        except ValueError as exc:
            row["t_error"] = str(exc)
    return row


def within_between_report(m: DistanceMatrix, labels: Sequence[str]) -> dict:
    """Pooled and per-group within/between tests."""
    within, between = stats.within_between(m, labels)
    report = {"pooled": _test_row(within, between), "groups": {}}
    for g in sorted(set(labels)):
        w, b = stats.within_between(m, labels, group=g)
        report["groups"][g] = _test_row(w, b)
    return report


@dataclass
class ClanRecoveryResult:
    labels: list[str]
    reference: list[str]
    matrix: DistanceMatrix
    dendrogram: cluster.Dendrogram
    k: int
    assignment: list[int]
    ari: float
    sweep: cluster.AriSweep
    tests: dict
    trees: dict[str, ContextTree] = field(repr=False, default_factory=dict)

    def summary(self) -> dict:
        return {
            "labels": self.labels,
            "reference": self.reference,
            "k": self.k,
            "assignment": self.assignment,
            "ari": self.ari,
            "ari_sweep": [{"k": k, "ari": v} for k, v in self.sweep.scores],
            "max_ari": self.sweep.max_ari,
            "best_k": self.sweep.best_k,
            "within_between": self.tests,
        }


def clan_recovery(
    d: Dataset,
    cfg: ModelConfig = ModelConfig(),
    group_by: str = "sample",
    min_codas: int = 1,
    threads: int = 1,
) -> ClanRecoveryResult:
    """Fit per group, cluster the symmetric distances, compare with clans."""
    if group_by == "clan":
        raise ValueError("clan recovery needs groups below the clan level")
    groups = group_records(d, group_by)
    clans = group_clans(groups)
    trees = fit_groups(groups, cfg, min_codas, threads)
    labels = list(trees)
    missing = [g for g in labels if clans[g] is None]
    if missing:
        raise DataError(f"groups without a single clan label: {missing[:5]}")
    if len(labels) < 2:
        raise DataError("need at least two groups")
    reference = [clans[g] for g in labels]
    m = distance_matrix([(g, trees[g]) for g in labels], "symmetric", threads=threads)
    dend = cluster.average_linkage(m)
    k = len(set(reference))
    assignment = cluster.cut(dend, k)
    return ClanRecoveryResult(
        labels=labels,
        reference=reference,
        matrix=m,
        dendrogram=dend,
        k=k,
        assignment=assignment,
        ari=cluster.adjusted_rand_index(assignment, reference),
        sweep=cluster.ari_sweep(dend, reference),
        tests=within_between_report(m, reference),
        trees=trees,
    )


CODA_SELECTIONS = ("id", "nonid", "all")


def select_codas(records: Sequence[CodaRecord], which: str) -> list[CodaRecord]:
    if which not in CODA_SELECTIONS:
        raise ValueError(f"unknown coda selection {which!r}")
    if which == "all":
        return list(records)
    missing = [r.coda_id for r in records if r.id_flag is None]
    if missing:
        raise DataError(f"{len(missing)} codas lack id_flag (first: {missing[0]!r})")
    want = which == "id"
    return [r for r in records if r.id_flag == want]


@dataclass
class OverlapRegression:
    pairs: list[dict]
    fit: Optional[stats.RegressionResult]
    ci: Optional[stats.BootstrapCI]
    pearson: Optional[tuple[float, float]] = None
    spearman: Optional[tuple[float, float]] = None

    def summary(self) -> dict:
        out = {"n_pairs": len(self.pairs)}
        if self.fit is not None:
            out.update(
                slope=self.fit.slope,
                intercept=self.fit.intercept,
                r_squared=self.fit.r_squared,
                p_value=self.fit.p_value,
            )
        if self.ci is not None:
            out["ci"] = {"level": self.ci.level, "lower": self.ci.lower, "upper": self.ci.upper,
                         "n_resamples": self.ci.n_resamples, "seed": self.ci.seed}
        if self.pearson is not None:
            out["pearson_r"], out["pearson_p"] = self.pearson
        if self.spearman is not None:
            out["spearman_rho"], out["spearman_p"] = self.spearman
        return out


def overlap_pairs(trees: dict[str, ContextTree], overlap: OverlapMatrix) -> list[dict]:
    """Both directed pairs for every two clans present in trees and overlap table."""
    clans = [c for c in sorted(trees) if c in overlap.labels]
    rows = []
    for a in clans:
        for b in clans:
            if a == b:
                continue
            rows.append(
                {"clan_a": a, "clan_b": b, "overlap": overlap[a, b],
                 "distance": symmetric_distance(trees[a], trees[b])}
            )
    return rows


def regress_pairs(pairs: list[dict], n_resamples: int = 1000, seed: int = 0, bootstrap: bool = True) -> OverlapRegression:
    x = np.array([p["overlap"] for p in pairs], dtype=float)
    y = np.array([p["distance"] for p in pairs], dtype=float)
    res = OverlapRegression(pairs, None, None)
    if x.size < 3 or np.ptp(x) == 0:
        return res
    res.fit = stats.ols(x, y)
    if np.ptp(y) > 0:
        res.pearson = stats.pearson(x, y)
        res.spearman = stats.spearman(x, y)
    if bootstrap and x.size >= 5:
        res.ci = stats.bootstrap_slope_ci(x, y, n_resamples=n_resamples, seed=seed)
    return res


def regress_overlap(
    d: Dataset,
    overlap: OverlapMatrix,
    cfg: ModelConfig = ModelConfig(),
    codas: str = "nonid",
    min_codas: int = 1,
    n_resamples: int = 1000,
    seed: int = 0,
    threads: int = 1,
) -> OverlapRegression:
    """Distance between per-clan trees regressed on clan overlap."""
    groups = {c: select_codas(recs, codas) for c, recs in group_records(d, "clan").items()}
    unknown = sorted(set(groups) - set(overlap.labels))
    if unknown:
        log.warning("clans missing from the overlap table are ignored: %s", unknown)
    groups = {c: r for c, r in groups.items() if c in overlap.labels and r}
    trees = fit_groups(groups, cfg, min_codas, threads)
    return regress_pairs(overlap_pairs(trees, overlap), n_resamples, seed)


def regress_overlap_by_type(
    d: Dataset,
    overlap: OverlapMatrix,
    cfg: ModelConfig = ModelConfig(),
    codas: str = "nonid",
    min_codas: int = 1,
    min_clans: int = 3,
) -> list[dict]:
    """One regression per coda type; types seen in fewer than ``min_clans`` clans are skipped."""
    by_clan = {c: select_codas(recs, codas) for c, recs in group_records(d, "clan").items() if c in overlap.labels}
    types = sorted({r.coda_type for recs in by_clan.values() for r in recs if r.coda_type is not None})
    rows = []
    for t in types:
        groups = {c: [r for r in recs if r.coda_type == t] for c, recs in by_clan.items()}
        groups = {c: r for c, r in groups.items() if len(r) >= min_codas}
        if len(groups) < min_clans:
            continue
        trees = fit_groups(groups, cfg)
        reg = regress_pairs(overlap_pairs(trees, overlap), bootstrap=False)
        row = {"coda_type": t, "n_clans": len(groups), "n_pairs": len(reg.pairs)}
        row["slope"] = reg.fit.slope if reg.fit else math.nan
        row["ols_p"] = reg.fit.p_value if reg.fit else math.nan
        row["pearson_p"] = reg.pearson[1] if reg.pearson else math.nan
        row["spearman_p"] = reg.spearman[1] if reg.spearman else math.nan
        rows.append(row)
    return rows


def stratified_split(
    labels: Sequence[str], train_fraction: float = 0.8, seed: int = 0
) -> tuple[list[int], list[int]]:
    """Index split with ``train_fraction`` of every label in train; indices sorted."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    by_label: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        by_label.setdefault(lab, []).append(i)
    for lab in sorted(by_label):
        idx = np.array(by_label[lab])
        rng.shuffle(idx)
        n_train = int(round(train_fraction * idx.size))
        train.extend(idx[:n_train].tolist())
        test.extend(idx[n_train:].tolist())
    return sorted(train), sorted(test)


@dataclass
class SyntheticFidelity:
    real_accuracy: float
    synthetic_accuracy: float
    n_real: int
    n_synthetic: int
    per_clan: dict
    trees: dict[str, ContextTree] = field(repr=False, default_factory=dict)

    def summary(self) -> dict:
        out = asdict(self)
        out.pop("trees")
        out["accuracy_gap"] = self.synthetic_accuracy - self.real_accuracy
        return out


def generate_and_classify(
    d: Dataset,
    cfg: ModelConfig = ModelConfig(),
    seed: int = 0,
    train_fraction: float = 0.8,
) -> SyntheticFidelity:
    """Fit clan trees on a training split, then classify held-out and synthetic codas.

    Each clan gets as many synthetic codas as it has held-out real ones.
    """
    records = d.records()
    labels = [r.clan for r in records]
    if any(lab is None for lab in labels):
        raise DataError("every coda needs a clan label")
    if len(set(labels)) < 2:
        raise DataError("need at least two clans")
    train_idx, test_idx = stratified_split(labels, train_fraction, seed)
    train = {}
    for i in train_idx:
        train.setdefault(labels[i], []).append(records[i])
    models = {c: fit_records(train[c], cfg) for c in sorted(train)}
    disc = cfg.discretization

    per_clan: dict[str, dict] = {c: {"real": 0, "real_correct": 0, "synthetic": 0, "synthetic_correct": 0} for c in models}
    for i in test_idx:
        c = labels[i]
        pred = classify(encode_coda(records[i], disc), models)
        per_clan[c]["real"] += 1
        per_clan[c]["real_correct"] += pred == c
    gen_seeds = np.random.SeedSequence(seed).spawn(len(models))
    for (c, tree), ss in zip(models.items(), gen_seeds):
        n = per_clan[c]["real"]
        if n == 0:
            continue
        for coda in generate(tree, n, np.random.default_rng(ss)):
            pred = classify(coda, models)
            per_clan[c]["synthetic"] += 1
            per_clan[c]["synthetic_correct"] += pred == c
    n_real = sum(v["real"] for v in per_clan.values())
    n_syn = sum(v["synthetic"] for v in per_clan.values())
    return SyntheticFidelity(
        real_accuracy=sum(v["real_correct"] for v in per_clan.values()) / max(n_real, 1),
        synthetic_accuracy=sum(v["synthetic_correct"] for v in per_clan.values()) / max(n_syn, 1),
        n_real=n_real,
        n_synthetic=n_syn,
        per_clan=per_clan,
        trees=models,
    )


def synthetic_records(codas: Sequence[Sequence[int]], cfg: DiscretizationConfig, sample_id: str, clan: Optional[str] = None, prefix: str = "g") -> list[CodaRecord]:
    """Wrap generated symbol codas as records with bin-centre ICIs."""
    out = []
    for i, coda in enumerate(codas):
        icis = symbols_to_icis(coda, cfg)
        if not icis:
            continue
        out.append(CodaRecord(f"{prefix}{i}", sample_id, tuple(icis), clan=clan))
    return out
