"""Command-line entry point: ``subcoda <command> [options]``.

Every command writes into ``--out`` together with ``run_config.json``.
Outputs are staged in a scratch directory next to ``--out`` and moved in
only when the command succeeds.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import re
import shutil
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from . import __version__, cluster, markov, pipelines
from .ingest import DataError, Dataset, group_samples, load_dataset, load_overlap_matrix, write_dataset
from .metric import DistanceMatrix, distance_matrix
from .symbols import DiscretizationConfig, encode_coda, encode_records
from .vlmc import ContextTree, classify, generate

log = logging.getLogger("subcoda")


@dataclass
class RunConfig:
    command: str
    data: Optional[str] = None
    overlap: Optional[str] = None
    trees: Optional[str] = None
    delta_t: float = 0.05
    t_max: float = 1.0
    depth: int = 10
    threshold: Union[float, str] = "auto"
    min_codas: int = 200
    seed: int = 0
    threads: int = 1
    out: str = "out"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.delta_t > 0:
            raise ValueError("--delta-t must be positive")
        if not self.t_max >= self.delta_t:
            raise ValueError("--t-max must be at least --delta-t")
        if self.depth < 0:
            raise ValueError("--depth must be >= 0")
        if self.threshold != "auto" and not (isinstance(self.threshold, float) and self.threshold >= 0):
            raise ValueError("--threshold must be 'auto' or a non-negative number")
        if self.min_codas < 1:
            raise ValueError("--min-codas must be >= 1")
        if self.threads < 1:
            raise ValueError("--threads must be >= 1")

    @property
    def model(self) -> pipelines.ModelConfig:
        k = None if self.threshold == "auto" else float(self.threshold)
        return pipelines.ModelConfig(self.delta_t, self.t_max, self.depth, k)

    @property
    def discretization(self) -> DiscretizationConfig:
        return DiscretizationConfig(self.delta_t, self.t_max)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_rows(path: Path, rows: list[dict], columns: Optional[list[str]] = None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _safe_name(i: int, label: str) -> str:
    return f"{i:03d}_{re.sub(r'[^A-Za-z0-9._-]', '_', label)}.json"


def _load(cfg: RunConfig) -> Dataset:
    if cfg.data is None:
        raise DataError("--data is required")
    d = load_dataset(cfg.data)
    if d.n_codas == 0:
        raise DataError(f"{cfg.data}: dataset has no codas")
    return d


def save_trees(out: Path, trees: dict[str, ContextTree], groups: dict, grouping: str, skipped: list[str]) -> None:
    tree_dir = out / "trees"
    tree_dir.mkdir()
    entries = []
    clans = pipelines.group_clans(groups)
    for i, (label, tree) in enumerate(trees.items()):
        name = _safe_name(i, label)
        tree.save(tree_dir / name)
        entries.append(
            {"label": label, "file": f"trees/{name}", "n_codas": len(groups[label]),
             "clan": clans[label], "n_contexts": len(tree), "depth": tree.depth}
        )
    write_json(out / "manifest.json", {"grouping": grouping, "trees": entries, "skipped": skipped})


def load_trees(path: str) -> tuple[dict[str, ContextTree], dict]:
    """Trees from a ``fit`` output directory (or its manifest file)."""
    p = Path(path)
    manifest_path = p / "manifest.json" if p.is_dir() else p
    if not manifest_path.is_file():
        raise DataError(f"no manifest.json under {path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    root = manifest_path.parent
    trees = {e["label"]: ContextTree.load(root / e["file"]) for e in manifest["trees"]}
    return trees, manifest


def cmd_fit(cfg: RunConfig, out: Path) -> dict:
    d = _load(cfg)
    grouping = cfg.options["group_by"]
    groups = pipelines.group_records(d, grouping)
    trees = pipelines.fit_groups(groups, cfg.model, cfg.min_codas, cfg.threads)
    if not trees:
        raise DataError(f"no {grouping} has at least {cfg.min_codas} codas")
    skipped = [g for g in groups if g not in trees]
    save_trees(out, trees, groups, grouping, skipped)
    return {"n_trees": len(trees), "skipped": skipped}


def cmd_dist(cfg: RunConfig, out: Path) -> dict:
    if cfg.trees is None:
        raise DataError("--trees is required")
    trees, _ = load_trees(cfg.trees)
    m = distance_matrix(list(trees.items()), cfg.options["mode"], threads=cfg.threads)
    m.to_csv(out / "distances.csv")
    return {"n": len(m), "mode": cfg.options["mode"]}


def _read_labels(path: str) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or len(rows[0]) < 2:
        raise DataError(f"{path}: expected two columns label,group")
    return {r[0]: r[1] for r in rows[1:]}


def _labels_for(m: DistanceMatrix, cfg: RunConfig, key: str) -> Optional[list[str]]:
    path = cfg.options.get(key)
    if path is None:
        return None
    table = _read_labels(path)
    missing = [x for x in m.labels if x not in table]
    if missing:
        raise DataError(f"{path}: no group for {missing[:5]}")
    return [table[x] for x in m.labels]


def cmd_cluster(cfg: RunConfig, out: Path) -> dict:
    m = DistanceMatrix.from_csv(cfg.options["dist"])
    reference = _labels_for(m, cfg, "reference")
    dend = cluster.average_linkage(m)
    (out / "dendrogram.json").write_text(dend.dumps() + "\n", encoding="utf-8")
    (out / "dendrogram.nwk").write_text(dend.to_newick() + "\n", encoding="utf-8")
    k = cfg.options.get("k") or (len(set(reference)) if reference else None)
    report: dict = {"n": len(m), "heights": dend.heights.tolist()}
    if k is not None:
        assignment = cluster.cut(dend, k)
        rows = [{"label": lab, "cluster": c} for lab, c in zip(m.labels, assignment)]
        if reference:
            for row, ref in zip(rows, reference):
                row["reference"] = ref
            report["ari"] = cluster.adjusted_rand_index(assignment, reference)
        write_rows(out / "assignments.csv", rows)
        report["k"] = k
    if reference:
        sweep = cluster.ari_sweep(dend, reference)
        report["ari_sweep"] = [{"k": kk, "ari": v} for kk, v in sweep.scores]
        report["max_ari"] = sweep.max_ari
    write_json(out / "cluster.json", report)
    return report


def cmd_within_between(cfg: RunConfig, out: Path) -> dict:
    m = DistanceMatrix.from_csv(cfg.options["dist"])
    labels = _labels_for(m, cfg, "groups")
    report = pipelines.within_between_report(m, labels)
    write_json(out / "within_between.json", report)
    return report["pooled"]


def cmd_regress_overlap(cfg: RunConfig, out: Path) -> dict:
    if cfg.overlap is None:
        raise DataError("--overlap is required")
    d = _load(cfg)
    overlap = load_overlap_matrix(cfg.overlap)
    codas = cfg.options["codas"]
    if cfg.options["by_coda_type"]:
        rows = pipelines.regress_overlap_by_type(d, overlap, cfg.model, codas, cfg.min_codas)
        write_rows(out / "by_coda_type.csv", rows,
                   ["coda_type", "n_clans", "n_pairs", "slope", "ols_p", "pearson_p", "spearman_p"])
        summary = {"n_types": len(rows)}
    else:
        reg = pipelines.regress_overlap(
            d, overlap, cfg.model, codas, cfg.min_codas, cfg.options["n_resamples"], cfg.seed, cfg.threads
        )
        write_rows(out / "pairs.csv", reg.pairs, ["clan_a", "clan_b", "overlap", "distance"])
        summary = reg.summary()
    write_json(out / "regression.json", summary)
    return summary


def cmd_markov_scan(cfg: RunConfig, out: Path) -> dict:
    d = _load(cfg)
    h_min, h_max = cfg.options["h_min"], cfg.options["h_max"]
    disc = cfg.discretization
    units = [(s.sample_id, list(s.records)) for s in d.samples] if cfg.options["per_sample"] else [("pooled", d.records())]
    rows, best = [], {}
    for label, recs in units:
        report = markov.scan_orders(encode_records(recs, disc), h_min, h_max)
        best[label] = {"best_order": report.best_order, "variance_peak": report.variance_peak}
        rows.extend({"group": label, **r} for r in report.as_records())
    write_rows(out / "markov_scan.csv", rows)
    write_json(out / "markov_scan.json", best)
    return best


def cmd_resolution_scan(cfg: RunConfig, out: Path) -> dict:
    d = _load(cfg)
    delta_ts = cfg.options["delta_ts"]
    rows, best = [], {}
    for s in d.samples:
        scan = markov.resolution_scan(s, delta_ts, cfg.t_max, cfg.depth)
        best[s.sample_id] = scan.best_delta_t
        for r in scan.rows:
            rows.append({"sample_id": s.sample_id, **asdict(r), "aic_difference": r.aic_difference})
    write_rows(out / "resolution_scan.csv", rows)
    write_json(out / "resolution_scan.json", {"best_delta_t": best})
    return {"best_delta_t": best}


def cmd_generate(cfg: RunConfig, out: Path) -> dict:
    tree = ContextTree.load(cfg.options["tree"])
    disc = DiscretizationConfig(tree.delta_t or cfg.delta_t, tree.t_max or cfg.t_max)
    if disc.alphabet.size != tree.alphabet_size:
        raise DataError("tree alphabet does not match --delta-t/--t-max")
    codas = generate(tree, cfg.options["n_codas"], cfg.seed)
    label = cfg.options.get("label") or Path(cfg.options["tree"]).stem
    records = pipelines.synthetic_records(codas, disc, sample_id=label, clan=cfg.options.get("label"))
    write_dataset(group_samples(records), out / "synthetic.csv")
    write_rows(out / "symbols.csv", [{"index": i, "symbols": " ".join(map(str, c))} for i, c in enumerate(codas)])
    return {"n_codas": len(codas), "n_records": len(records)}


def cmd_classify(cfg: RunConfig, out: Path) -> dict:
    if cfg.trees is None:
        raise DataError("--trees is required")
    models, _ = load_trees(cfg.trees)
    d = _load(cfg)
    first = next(iter(models.values()))
    disc = DiscretizationConfig(first.delta_t or cfg.delta_t, first.t_max or cfg.t_max)
    rows, correct, labelled = [], 0, 0
    for r in d.records():
        pred = classify(encode_coda(r, disc), models)
        rows.append({"coda_id": r.coda_id, "clan": r.clan or "", "predicted": pred})
        if r.clan is not None:
            labelled += 1
            correct += pred == r.clan
    write_rows(out / "predictions.csv", rows, ["coda_id", "clan", "predicted"])
    summary = {"n": len(rows), "n_labelled": labelled, "accuracy": correct / labelled if labelled else None}
    write_json(out / "classify.json", summary)
    return summary


def cmd_pipeline(cfg: RunConfig, out: Path) -> dict:
    d = _load(cfg)
    name = cfg.options["pipeline"]
    if name == "clan-recovery":
        res = pipelines.clan_recovery(d, cfg.model, cfg.options["group_by"], cfg.min_codas, cfg.threads)
        groups = pipelines.group_records(d, cfg.options["group_by"])
        skipped = [g for g in groups if g not in res.trees]
        save_trees(out, res.trees, groups, cfg.options["group_by"], skipped)
        res.matrix.to_csv(out / "distances.csv")
        (out / "dendrogram.json").write_text(res.dendrogram.dumps() + "\n", encoding="utf-8")
        (out / "dendrogram.nwk").write_text(res.dendrogram.to_newick() + "\n", encoding="utf-8")
        rows = [{"label": lab, "cluster": c, "reference": ref}
                for lab, c, ref in zip(res.labels, res.assignment, res.reference)]
        write_rows(out / "assignments.csv", rows)
        summary = res.summary()
        write_json(out / "clan_recovery.json", summary)
        return {"ari": res.ari, "ks_p": res.tests["pooled"].get("ks_p")}
    if name == "generate-classify":
        res = pipelines.generate_and_classify(d, cfg.model, cfg.seed, cfg.options["train_fraction"])
        summary = res.summary()
        write_json(out / "generate_classify.json", summary)
        return {k: summary[k] for k in ("real_accuracy", "synthetic_accuracy", "accuracy_gap")}
    raise ValueError(f"unknown pipeline {name!r}")


COMMANDS = {
    "fit": cmd_fit,
    "dist": cmd_dist,
    "cluster": cmd_cluster,
    "within-between": cmd_within_between,
    "regress-overlap": cmd_regress_overlap,
    "markov-scan": cmd_markov_scan,
    "resolution-scan": cmd_resolution_scan,
    "generate": cmd_generate,
    "classify": cmd_classify,
    "pipeline": cmd_pipeline,
}


def _threshold(value: str) -> Union[float, str]:
    if value == "auto":
        return value
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'auto' or a number") from None


def _float_list(value: str) -> list[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run configuration")
    g.add_argument("--delta-t", type=float, default=0.05, help="ICI bin width in seconds")
    g.add_argument("--t-max", type=float, default=1.0, help="ICI cap in seconds")
    g.add_argument("--depth", type=int, default=10, help="maximum context depth D")
    g.add_argument("--threshold", type=_threshold, default="auto", help="pruning threshold K or 'auto'")
    g.add_argument("--min-codas", type=int, default=200, help="skip groups with fewer codas")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", required=True, help="coda CSV")

    p = argparse.ArgumentParser(prog="subcoda", description="Subcoda trees for coda rhythm data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit", parents=[common, data], help="fit one tree per group")
    s.add_argument("--group-by", choices=pipelines.GROUPINGS, default="sample")

    s = sub.add_parser("dist", parents=[common], help="pairwise tree distances")
    s.add_argument("--trees", required=True, help="output directory of `fit`")
    s.add_argument("--mode", choices=("symmetric", "asymmetric"), default="symmetric")

    s = sub.add_parser("cluster", parents=[common], help="average-linkage clustering")
    s.add_argument("--dist", required=True, help="distances.csv")
    s.add_argument("--k", type=int, help="number of clusters (default: reference clan count)")
    s.add_argument("--reference", help="CSV label,clan for ARI")

    s = sub.add_parser("within-between", parents=[common], help="within vs between distance tests")
    s.add_argument("--dist", required=True)
    s.add_argument("--groups", required=True, help="CSV label,group")

    s = sub.add_parser("regress-overlap", parents=[common, data], help="tree distance vs clan overlap")
    s.add_argument("--overlap", required=True, help="overlap matrix CSV")
    s.add_argument("--codas", choices=pipelines.CODA_SELECTIONS, default="nonid")
    s.add_argument("--by-coda-type", action="store_true")
    s.add_argument("--n-resamples", type=int, default=1000)

    s = sub.add_parser("markov-scan", parents=[common, data], help="fixed-order Markov scan")
    s.add_argument("--h-min", type=int, default=0)
    s.add_argument("--h-max", type=int, default=6)
    s.add_argument("--per-sample", action="store_true", help="one scan per sample instead of pooled")

    s = sub.add_parser("resolution-scan", parents=[common, data], help="AIC gain per bin width")
    s.add_argument("--delta-ts", type=_float_list, default=[0.01, 0.02, 0.05, 0.1, 0.2, 0.5])

    s = sub.add_parser("generate", parents=[common], help="sample synthetic codas from a tree")
    s.add_argument("--tree", required=True, help="tree JSON")
    s.add_argument("--n-codas", type=int, default=100)
    s.add_argument("--label", help="clan label for the generated codas")

    s = sub.add_parser("classify", parents=[common, data], help="assign codas to the most likely tree")
    s.add_argument("--trees", required=True, help="output directory of `fit`")

    s = sub.add_parser("pipeline", help="end-to-end analyses")
    psub = s.add_subparsers(dest="pipeline", required=True)
    ps = psub.add_parser("clan-recovery", parents=[common, data])
    ps.add_argument("--group-by", choices=("sample", "unit"), default="sample")
    ps = psub.add_parser("generate-classify", parents=[common, data])
    ps.add_argument("--train-fraction", type=float, default=0.8)
    return p


_CONFIG_KEYS = {"data", "overlap", "trees", "delta_t", "t_max", "depth", "threshold", "min_codas", "seed", "threads", "out"}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    ns = vars(args).copy()
    command = ns.pop("command")
    ns.pop("verbose", None)
    base = {k: ns.pop(k) for k in list(ns) if k in _CONFIG_KEYS}
    for key in ("data", "overlap", "trees"):
        if base.get(key) is not None:
            base[key] = str(Path(base[key]).resolve())
    for key in ("dist", "reference", "groups", "tree"):
        if ns.get(key) is not None:
            ns[key] = str(Path(ns[key]).resolve())
    return RunConfig(command=command, options=ns, **base)


def run(cfg: RunConfig) -> dict:
    """Run a command, staging outputs so a failure leaves ``cfg.out`` untouched."""
    out = Path(cfg.out).resolve()
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".subcoda-", dir=out.parent))
    try:
        summary = COMMANDS[cfg.command](cfg, stage)
        write_json(stage / "run_config.json", asdict(cfg))
        out.mkdir(exist_ok=True)
        for item in sorted(stage.iterdir()):
            target = out / item.name
            if target.is_dir():
                shutil.rmtree(target)
            os.replace(item, target)
        return summary
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = config_from_args(args)
        summary = run(cfg)
    except (DataError, ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"subcoda {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(_jsonable(summary), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
