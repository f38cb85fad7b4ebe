"""Command-line front end.

Subcommands: index, search, features, train, report, fixtures.  Settings
come from an optional ``key=value`` config file (``--config``); flags win
over config values.  Relative paths in a config file are resolved against
the file's directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import corpus as cp
from .corpus import DataError
from .evaluation import CUTOFFS, analyze, write_report
from .fixtures import FixtureScale, generate, write_fixtures
from .index import build_entity_index, build_table_index, load_index, save_index
from .ltr import ForestConfig, train_forest, write_importances, save_forest
from .pipeline import (
    extract_features,
    feature_subset,
    format_grid,
    load_resources,
    read_feature_csv,
    semantic_grid_subsets,
    train_and_evaluate,
    train_mlm_weights,
    unsupervised_runs,
    write_feature_csv,
)
from .retrieval import MLM_TABLE_FIELDS, FieldWeights, LMScorer, MLMScorer, Ranking, read_run, retrieve_topk, write_run
from .text import tokenize

log = logging.getLogger("tabret")

PATH_KEYS = (
    "corpus",
    "kb",
    "word_embeddings",
    "graph_embeddings",
    "schema_stats",
    "queries",
    "qrels",
    "signals",
    "yrank",
)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    paths: dict[str, Path | None] = field(default_factory=dict)
    out: Path = Path("out")
    seed: int = 42
    k_entities: int = 10
    num_trees: int = 1000
    max_features: int = 3
    folds: int = 5
    runs: int = 5
    gain: str = "exponential"
    cutoffs: tuple[int, ...] = CUTOFFS

    def require(self, *keys: str) -> None:
        for key in keys:
            p = self.paths.get(key)
            if p is None:
                raise UsageError(f"missing required input '{key}' (set --{key.replace('_', '-')} or {key}= in the config)")
            if not Path(p).exists():
                raise UsageError(f"input '{key}' not found: {p}")

    def existing(self, *keys: str) -> dict[str, Path]:
        """Paths for ``keys`` that were configured; raises if a configured path is missing."""
        out = {}
        for key in keys:
            p = self.paths.get(key)
            if p is not None:
                if not Path(p).exists():
                    raise UsageError(f"input '{key}' not found: {p}")
                out[key] = p
        return out

    def forest(self) -> ForestConfig:
        return ForestConfig(num_trees=self.num_trees, max_features=self.max_features, seed=self.seed)


def read_config_file(path: Path) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    values: dict[str, str] = {}
    base = Path.cwd()
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise UsageError(f"config file not found: {cfg_path}")
        values = read_config_file(cfg_path)
        base = cfg_path.parent
    cfg = RunConfig()
    for key in PATH_KEYS:
        flag = getattr(args, key, None) if args.command != "fixtures" else None
        if flag is not None:
            cfg.paths[key] = Path(flag)
        elif key in values:
            p = Path(values[key])
            cfg.paths[key] = p if p.is_absolute() else base / p
        else:
            cfg.paths[key] = None
    out = args.out if args.out is not None else values.get("out", "out")
    cfg.out = Path(out) if args.out is not None or Path(out).is_absolute() else base / out
    cfg.seed = args.seed if args.seed is not None else int(values.get("seed", 42))
    for key, conv in (("num_trees", int), ("max_features", int), ("folds", int), ("runs", int), ("k_entities", int), ("gain", str)):
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(cfg, key, flag)
        elif key in values:
            setattr(cfg, key, conv(values[key]))
    if cfg.gain not in ("exponential", "linear"):
        raise UsageError(f"unknown gain {cfg.gain!r}")
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_index(cfg: RunConfig, args) -> int:
    cfg.require("corpus", "kb")
    kb = cp.load_kb(cfg.paths["kb"])
    corpus = cp.load_corpus(cfg.paths["corpus"])
    corpus, stats = cp.resolve_entities(corpus, kb)
    cfg.out.mkdir(parents=True, exist_ok=True)
    tindex = build_table_index(corpus)
    eindex = build_entity_index(kb)
    save_index(tindex, cfg.out / "table_index.bin")
    save_index(eindex, cfg.out / "entity_index.bin")
    print(
        f"indexed {tindex.doc_count} tables ({corpus.skipped} skipped, {stats.demoted} links demoted) "
        f"and {eindex.doc_count} entities -> {cfg.out}"
    )
    return 0


def _load_weights(path: Path) -> FieldWeights:
    data = json.loads(path.read_text(encoding="utf-8"))
    return FieldWeights(data["weights"], data.get("mu", {}))


def cmd_search(cfg: RunConfig, args) -> int:
    snapshot = cfg.out / "table_index.bin"
    if snapshot.exists():
        index = load_index(snapshot)
    else:
        cfg.require("corpus")
        index = build_table_index(cp.load_corpus(cfg.paths["corpus"]))
    tokens = tokenize(args.query)
    if args.method == "lm":
        scorer = LMScorer(index, args.field, args.mu)
    else:
        wpath = cfg.out / "mlm_weights.json"
        weights = _load_weights(wpath) if wpath.exists() else FieldWeights.uniform(MLM_TABLE_FIELDS)
        scorer = MLMScorer(index, weights)
    ranking = retrieve_topk(index, tokens, scorer, args.k, args.query_id)
    write_run([ranking], sys.stdout, run_tag=args.method)
    return 0


def cmd_features(cfg: RunConfig, args) -> int:
    cfg.require("corpus", "kb", "queries", "qrels")
    paths = {**cfg.existing(*PATH_KEYS)}
    res = load_resources(paths)
    cfg.out.mkdir(parents=True, exist_ok=True)
    wpath = cfg.out / "mlm_weights.json"
    if args.weights:
        weights = _load_weights(Path(args.weights))
    else:
        weights = train_mlm_weights(res)
    wpath.write_text(json.dumps({"weights": dict(weights.weights), "mu": dict(weights.mu)}, indent=2), encoding="utf-8")
    fm = extract_features(res, weights, cfg.k_entities)
    write_feature_csv(fm, cfg.out / "features.csv")
    runs = unsupervised_runs(res, weights, k=max(cfg.cutoffs))
    for name, rankings in runs.items():
        with open(cfg.out / f"run_{name.lower()}.txt", "w", encoding="utf-8") as fh:
            write_run(rankings.values(), fh, run_tag=name)
    print(f"wrote {len(fm.y)} rows x {len(fm.names)} features -> {cfg.out / 'features.csv'}")
    return 0


def _query_subsets(cfg: RunConfig) -> dict[str, str] | None:
    p = cfg.paths.get("queries")
    if p is not None and Path(p).exists():
        return {qid: q.subset for qid, q in cp.load_queries(p).items()}
    return None


def cmd_train(cfg: RunConfig, args) -> int:
    fpath = Path(args.features) if args.features else cfg.out / "features.csv"
    if not fpath.exists():
        raise UsageError(f"feature file not found: {fpath} (run 'features' first)")
    data = read_feature_csv(fpath)
    qrels = cp.load_qrels(cfg.paths["qrels"]) if cfg.existing("qrels") else None
    forest_cfg = cfg.forest()
    if args.grid:
        subsets = semantic_grid_subsets()
        prefix = "grid"
    else:
        subsets = {"LTR": feature_subset("baseline")}
        if args.subset != "baseline":
            subsets[args.name or ("STR" if args.subset == "all" else args.subset)] = feature_subset(args.subset)
        prefix = args.name or f"report_{args.subset.replace(',', '+')}"
    extra = {}
    qids = set(data.query_ids)
    for name in ("LM", "MLM"):
        run_path = cfg.out / f"run_{name.lower()}.txt"
        if run_path.exists() and not args.grid:
            run = read_run(run_path)
            extra[name] = {q: run.get(q, []) for q in qids}
    exp = train_and_evaluate(
        data,
        subsets,
        forest_cfg,
        cfg.folds,
        cfg.runs,
        "LTR",
        _query_subsets(cfg),
        qrels,
        extra,
        cfg.cutoffs,
        cfg.gain,
    )
    files = write_report(exp.report, cfg.out, prefix)
    for name, cv in exp.cv.items():
        names = subsets[name]
        write_importances(names, cv.importances, cfg.out / f"{prefix}_{name}_importance.tsv")
        with open(cfg.out / f"{prefix}_{name}_run.txt", "w", encoding="utf-8") as fh:
            write_run((Ranking(q, items) for q, items in sorted(cv.rankings[0].items())), fh, run_tag=name)
    if args.grid:
        grid = format_grid(exp.report, max(cfg.cutoffs))
        (cfg.out / "grid_table.tsv").write_text(grid, encoding="utf-8")
        print(grid, end="")
    if args.save_model:
        for name, names in subsets.items():
            sub = data.select(names)
            save_forest(train_forest(sub.X, sub.y, forest_cfg), cfg.out / f"model_{name}.bin")
    for m, means in exp.report.means.items():
        cells = " ".join(f"ndcg@{k}={v:.4f}" for k, v in means.items())
        p = exp.report.p_values.get(m)
        tail = f" p@{max(cfg.cutoffs)}={p[max(cfg.cutoffs)]:.4g}" if p else ""
        print(f"{m}\t{cells}{tail}")
    print(f"report -> {files['tsv']}")
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    cfg.require("qrels")
    qrels = cp.load_qrels(cfg.paths["qrels"])
    runs = {}
    for entry in args.run:
        if "=" not in entry:
            raise UsageError(f"--run expects NAME=PATH, got {entry!r}")
        name, path = entry.split("=", 1)
        if not Path(path).exists():
            raise UsageError(f"run file not found: {path}")
        runs[name] = read_run(path)
    queries = sorted(set().union(*(r.keys() for r in runs.values())) | set(qrels))
    runs = {m: {q: r.get(q, []) for q in queries} for m, r in runs.items()}
    report = analyze(runs, qrels, _query_subsets(cfg), args.baseline, cfg.cutoffs, cfg.gain)
    files = write_report(report, cfg.out, args.prefix)
    for m, means in report.means.items():
        print(m + "\t" + " ".join(f"ndcg@{k}={v:.4f}" for k, v in means.items()))
    print(f"report -> {files['tsv']}")
    return 0


def cmd_fixtures(cfg: RunConfig, args) -> int:
    scale = FixtureScale(tables=args.tables, queries=args.queries, entities=args.entities)
    paths = write_fixtures(generate(scale, cfg.seed), cfg.out, cfg.seed)
    print(f"fixtures: {scale.tables} tables, {scale.queries} queries, {scale.entities} entities -> {cfg.out}")
    print(f"config: {paths['config']}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="random seed (default: 42)")
    common.add_argument("-v", "--verbose", action="store_true")
    inputs = argparse.ArgumentParser(add_help=False)
    for key in PATH_KEYS:
        inputs.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar="PATH")
    with_inputs = [common, inputs]

    parser = argparse.ArgumentParser(prog="tabret", description="Ad hoc table retrieval toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("index", parents=with_inputs, help="build table and entity indices")

    p = sub.add_parser("search", parents=with_inputs, help="rank tables for a query (TREC run lines)")
    p.add_argument("query")
    p.add_argument("--method", choices=("lm", "mlm"), default="mlm")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--field", default="catchAll", help="field for --method lm")
    p.add_argument("--mu", type=float, help="Dirichlet mu for --method lm (default: mean field length)")
    p.add_argument("--query-id", default="q")

    p = sub.add_parser("features", parents=with_inputs, help="extract the 39-feature matrix for judged pairs")
    p.add_argument("--weights", help="JSON with MLM field weights; trained on qrels if omitted")
    p.add_argument("--k-entities", type=int, dest="k_entities")

    p = sub.add_parser("train", parents=with_inputs, help="cross-validate forest rankers and report")
    p.add_argument("--subset", default="all", help="baseline | semantic | all | comma list added to baseline")
    p.add_argument("--name", help="method name in reports")
    p.add_argument("--features", help="feature CSV (default: <out>/features.csv)")
    p.add_argument("--grid", action="store_true", help="evaluate every representation x measure augmentation")
    p.add_argument("--trees", type=int, dest="num_trees")
    p.add_argument("--max-features", type=int, dest="max_features")
    p.add_argument("--folds", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--gain", choices=("exponential", "linear"))
    p.add_argument("--save-model", action="store_true")

    p = sub.add_parser("report", parents=with_inputs, help="compare TREC run files")
    p.add_argument("--run", action="append", required=True, help="NAME=PATH (repeatable)")
    p.add_argument("--baseline", help="baseline run name (default: first)")
    p.add_argument("--prefix", default="report")
    p.add_argument("--gain", choices=("exponential", "linear"))

    p = sub.add_parser("fixtures", parents=[common], help="write a synthetic collection")
    p.add_argument("--tables", type=int, default=200)
    p.add_argument("--queries", type=int, default=20)
    p.add_argument("--entities", type=int, default=60)
    return parser


COMMANDS = {
    "index": cmd_index,
    "search": cmd_search,
    "features": cmd_features,
    "train": cmd_train,
    "report": cmd_report,
    "fixtures": cmd_fixtures,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, DataError, OSError, ValueError, KeyError) as exc:
        print(f"tabret {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
