"""End-to-end wiring: load inputs, extract features, cross-validate rankers."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import corpus as cp
from .evaluation import CUTOFFS, EvalReport, analyze_scores, per_query_ndcg
from .features import BASELINE_FEATURES, baseline_features
from .index import FieldedIndex, build_entity_index, build_table_index
from .ltr import CVResult, FeatureMatrix, ForestConfig, cross_validate
from .retrieval import (
    MLM_TABLE_FIELDS,
    MU_GRID,
    EntityRetriever,
    FieldWeights,
    LMScorer,
    MLMScorer,
    Ranking,
    retrieve_topk,
    sweep_mu,
    train_field_weights,
)
from .semantic import MEASURES, REPRESENTATIONS, SEMANTIC_FEATURES, SemanticMatcher
from .text import tokenize

log = logging.getLogger(__name__)

ALL_FEATURES = BASELINE_FEATURES + SEMANTIC_FEATURES


@dataclass
class Resources:
    corpus: cp.TableCorpus
    kb: cp.KnowledgeBase
    table_index: FieldedIndex
    entity_index: FieldedIndex
    stats: cp.SchemaStats = field(default_factory=cp.SchemaStats)
    queries: cp.QuerySet = field(default_factory=cp.QuerySet)
    qrels: dict = field(default_factory=dict)
    yrank: dict = field(default_factory=dict)
    word_store: cp.EmbeddingStore | None = None
    graph_store: cp.EmbeddingStore | None = None

    def query_tokens(self) -> dict[str, list[str]]:
        return {qid: tokenize(q.text) for qid, q in self.queries.items()}


def load_resources(paths: Mapping[str, str | Path | None]) -> Resources:
    """Load every input named in ``paths``; corpus and kb are required."""
    kb = cp.load_kb(paths["kb"])
    corpus = cp.load_corpus(paths["corpus"])
    corpus, rstats = cp.resolve_entities(corpus, kb)
    log.info("entity links: %d resolved, %d demoted to text", rstats.resolved, rstats.demoted)
    if paths.get("signals"):
        corpus = cp.attach_signals(corpus, cp.load_signals(paths["signals"]))
    res = Resources(corpus, kb, build_table_index(corpus), build_entity_index(kb))
    if paths.get("schema_stats"):
        res.stats = cp.load_schema_stats(paths["schema_stats"])
    if paths.get("queries"):
        res.queries = cp.load_queries(paths["queries"])
    if paths.get("qrels"):
        res.qrels = cp.load_qrels(paths["qrels"])
    if paths.get("yrank"):
        res.yrank = cp.load_yrank(paths["yrank"])
    if paths.get("word_embeddings"):
        res.word_store = cp.load_embeddings(paths["word_embeddings"])
    if paths.get("graph_embeddings"):
        res.graph_store = cp.load_embeddings(paths["graph_embeddings"])
    return res


def train_mlm_weights(res: Resources, fields: Sequence[str] = MLM_TABLE_FIELDS) -> FieldWeights:
    """Per-field smoothing by sweep, then field weights by coordinate ascent on NDCG@20."""
    qtoks = {q: t for q, t in res.query_tokens().items() if q in res.qrels}
    if not qtoks:
        return FieldWeights.uniform(fields)
    mu = {f: float(sweep_mu(res.table_index, f, qtoks, res.qrels, MU_GRID)[0]) for f in fields}
    weights, score = train_field_weights(res.table_index, qtoks, res.qrels, fields, mu)
    log.info("MLM weights %s (train NDCG@20 %.4f)", weights.weights, score)
    return weights


def judged_pairs(res: Resources) -> list[tuple[str, str, int]]:
    pairs = []
    for qid in res.queries:
        for tid, grade in res.qrels.get(qid, {}).items():
            if tid in res.corpus:
                pairs.append((qid, tid, grade))
            else:
                log.warning("qrels table %s for %s not in corpus; skipped", tid, qid)
    return pairs


def extract_features(res: Resources, mlm_weights: FieldWeights, k_entities: int = 10) -> FeatureMatrix:
    """39 features for every judged (query, table) pair present in the corpus."""
    matcher = SemanticMatcher(
        res.kb, EntityRetriever(res.entity_index, k_entities), res.table_index, res.word_store, res.graph_store
    )
    rows, qids, tids, grades = [], [], [], []
    for qid, tid, grade in judged_pairs(res):
        text = res.queries[qid].text
        table = res.corpus[tid]
        vec = baseline_features(qid, text, table, res.table_index, res.stats, mlm_weights, res.yrank)
        vec += matcher.features(text, table)
        rows.append(vec)
        qids.append(qid)
        tids.append(tid)
        grades.append(grade)
    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(ALL_FEATURES))
    return FeatureMatrix(list(ALL_FEATURES), qids, tids, X, np.asarray(grades, dtype=np.float64))


def write_feature_csv(fm: FeatureMatrix, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["queryId", "tableId", "grade", *fm.names])
        for q, t, g, row in zip(fm.query_ids, fm.table_ids, fm.y, fm.X):
            w.writerow([q, t, int(g), *(repr(float(v)) for v in row)])


def read_feature_csv(path: str | Path) -> FeatureMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["queryId", "tableId", "grade"]:
            raise ValueError(f"{path}: unexpected header {header[:3]}")
        qids, tids, ys, rows = [], [], [], []
        for row in reader:
            qids.append(row[0])
            tids.append(row[1])
            ys.append(float(row[2]))
            rows.append([float(v) for v in row[3:]])
    names = header[3:]
    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(names))
    return FeatureMatrix(names, qids, tids, X, np.asarray(ys))


def feature_subset(which: str) -> list[str]:
    """``baseline`` | ``semantic`` | ``all`` | comma-separated names added to the baseline set."""
    if which == "baseline":
        return list(BASELINE_FEATURES)
    if which == "semantic":
        return list(SEMANTIC_FEATURES)
    if which == "all":
        return list(ALL_FEATURES)
    extra = [n.strip() for n in which.split(",") if n.strip()]
    unknown = [n for n in extra if n not in ALL_FEATURES]
    if unknown or not extra:
        raise ValueError(f"unknown feature subset {which!r}")
    return list(BASELINE_FEATURES) + [n for n in extra if n not in BASELINE_FEATURES]


def unsupervised_runs(res: Resources, mlm_weights: FieldWeights, k: int = 20) -> dict[str, dict[str, Ranking]]:
    """Single-field LM (catchAll, swept mu) and MLM top-k rankings per query."""
    qtoks = res.query_tokens()
    judged = {q: t for q, t in qtoks.items() if q in res.qrels}
    mu = sweep_mu(res.table_index, "catchAll", judged, res.qrels)[0] if judged else None
    lm = LMScorer(res.table_index, "catchAll", mu)
    mlm = MLMScorer(res.table_index, mlm_weights)
    return {
        "LM": {q: retrieve_topk(res.table_index, t, lm, k, q) for q, t in qtoks.items()},
        "MLM": {q: retrieve_topk(res.table_index, t, mlm, k, q) for q, t in qtoks.items()},
    }


@dataclass
class Experiment:
    report: EvalReport
    cv: dict[str, CVResult]


def train_and_evaluate(
    data: FeatureMatrix,
    subsets: Mapping[str, Sequence[str]],
    cfg: ForestConfig = ForestConfig(),
    folds: int = 5,
    runs: int = 5,
    baseline: str = "LTR",
    query_subsets: Mapping[str, str] | None = None,
    qrels: Mapping[str, Mapping[str, int]] | None = None,
    extra_runs: Mapping[str, Mapping[str, Sequence[str]]] | None = None,
    cutoffs: Sequence[int] = CUTOFFS,
    gain: str = "exponential",
) -> Experiment:
    """Cross-validate one forest per named feature subset and compare against ``baseline``."""
    qrels = qrels if qrels is not None else data.qrels()
    cvs, per_query = {}, {}
    for name, names in subsets.items():
        cv = cross_validate(data.select(names), folds, runs, cfg, qrels, cutoffs, gain)
        cvs[name] = cv
        per_query[name] = cv.ndcg
        log.info("%s (%d features): NDCG@%d %.4f", name, len(names), cutoffs[-1], cv.mean(cutoffs[-1]))
    qids = sorted(per_query[baseline][cutoffs[0]])
    for name, rankings in (extra_runs or {}).items():
        per_query[name] = per_query_ndcg(rankings, qrels, cutoffs, gain, qids)
    report = analyze_scores(per_query, baseline, query_subsets, delta_k=max(cutoffs))
    return Experiment(report, cvs)


def semantic_grid_subsets() -> dict[str, list[str]]:
    """Feature sets for the representation x measure comparison (all on top of the baseline)."""
    base = list(BASELINE_FEATURES)
    subsets = {"LTR": base}
    for r in REPRESENTATIONS:
        for m in MEASURES:
            subsets[f"{r}_{m}"] = base + [f"{r}_{m}"]
        subsets[f"{r}_ALL"] = base + [f"{r}_{m}" for m in MEASURES]
    for m in MEASURES:
        subsets[f"ALL_{m}"] = base + [f"{r}_{m}" for r in REPRESENTATIONS]
    subsets["ALL_ALL"] = list(ALL_FEATURES)
    return subsets


def format_grid(report: EvalReport, k: int = 20) -> str:
    """Representation rows x measure columns of NDCG@k with relative change and significance."""
    from .evaluation import significance_mark

    base = report.means["LTR"][k]
    cols = [*MEASURES, "ALL"]
    lines = ["Sem. Repr.\t" + "\t".join(cols)]
    for r in [*REPRESENTATIONS, "ALL"]:
        cells = []
        for m in cols:
            name = f"{r}_{m}"
            v = report.means[name][k]
            rel = (v - base) / base * 100 if base else float("nan")
            mark = significance_mark(report.p_values[name][k]) if name in report.p_values else ""
            cells.append(f"{v:.4f} ({rel:+.2f}%){mark}")
        lines.append(r + "\t" + "\t".join(cells))
    return "\n".join(lines) + "\n"
