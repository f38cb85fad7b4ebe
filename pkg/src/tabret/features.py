"""The 23 lexical/structural baseline features for a query-table pair."""
from __future__ import annotations

import math
from itertools import combinations
from typing import Mapping, Sequence

from .corpus import SchemaStats, Table, catch_all_text
from .index import TABLE_FIELDS, FieldedIndex, idf
from .retrieval import FieldWeights, score_mlm
from .text import normalize_label, tokenize

QUERY_FEATURES = ("QLEN",) + tuple(f"IDF_{f}" for f in TABLE_FIELDS)
TABLE_FEATURES = (
    "#rows",
    "#cols",
    "#NULLs",
    "PMI",
    "inLinks",
    "outLinks",
    "pageViews",
    "tableImportance",
    "tablePageFraction",
)
QUERY_TABLE_FEATURES = ("#hitsLC", "#hitsSLC", "#hitsB", "qInPgTitle", "qInTableTitle", "yRank", "MLM")
BASELINE_FEATURES = QUERY_FEATURES + TABLE_FEATURES + QUERY_TABLE_FEATURES

YRANK_MISSING = 21


def query_features(query_tokens: Sequence[str], index: FieldedIndex) -> dict[str, float]:
    feats = {"QLEN": float(len(query_tokens))}
    for f in TABLE_FIELDS:
        feats[f"IDF_{f}"] = sum(idf(index, f, t) for t in query_tokens)
    return feats


def pmi(headings: Sequence[str], stats: SchemaStats) -> float:
    """Average pairwise PMI of a table's known heading labels.

    Pairs never seen together contribute 0 rather than -inf.
    """
    if stats.totalCount <= 0:
        return 0.0
    labels = sorted({normalize_label(h) for h in headings} & stats.headingCounts.keys())
    if len(labels) < 2:
        return 0.0
    total = stats.totalCount
    values = []
    for a, b in combinations(labels, 2):
        joint = stats.joint_count(a, b)
        if joint == 0:
            values.append(0.0)
            continue
        pa, pb = stats.headingCounts[a] / total, stats.headingCounts[b] / total
        values.append(math.log((joint / total) / (pa * pb)))
    return sum(values) / len(values)


def table_features(table: Table, stats: SchemaStats) -> dict[str, float]:
    nulls = sum(1 for c in table.cells() if not c.text.strip())
    if table.pageSizeChars > 0:
        fraction = min(1.0, max(len(catch_all_text(table)), 1) / table.pageSizeChars)
    else:
        fraction = 1.0
    return {
        "#rows": float(table.num_rows),
        "#cols": float(table.num_cols),
        "#NULLs": float(nulls),
        "PMI": pmi(table.headings, stats),
        "inLinks": float(table.inLinks),
        "outLinks": float(table.outLinks),
        "pageViews": float(table.pageViews),
        "tableImportance": 1.0 / max(table.tablesOnPage, 1),
        "tablePageFraction": fraction,
    }


def _column_hits(table: Table, j: int, terms: set[str]) -> int:
    if j >= table.num_cols:
        return 0
    return sum(1 for c in table.column(j) for tok in tokenize(c.text) if tok in terms)


def query_table_features(
    query_id: str,
    query_tokens: Sequence[str],
    table: Table,
    index: FieldedIndex,
    mlm_weights: FieldWeights,
    yrank: Mapping[tuple[str, str], int] | None = None,
) -> dict[str, float]:
    terms = set(query_tokens)
    qlen = len(query_tokens)
    body_hits = sum(1 for c in table.cells() for tok in tokenize(c.text) if tok in terms)
    if qlen:
        in_page = len(terms & set(tokenize(table.pageTitle))) / qlen
        in_caption = len(terms & set(tokenize(table.caption))) / qlen
        mlm = score_mlm(query_tokens, table.id, index, mlm_weights)
    else:
        in_page = in_caption = mlm = 0.0
    return {
        "#hitsLC": float(_column_hits(table, 0, terms)),
        "#hitsSLC": float(_column_hits(table, 1, terms)),
        "#hitsB": float(body_hits),
        "qInPgTitle": in_page,
        "qInTableTitle": in_caption,
        "yRank": float((yrank or {}).get((query_id, table.id), YRANK_MISSING)),
        "MLM": mlm,
    }


def baseline_features(
    query_id: str,
    query_text: str,
    table: Table,
    index: FieldedIndex,
    stats: SchemaStats,
    mlm_weights: FieldWeights,
    yrank: Mapping[tuple[str, str], int] | None = None,
) -> list[float]:
    """All 23 baseline values in :data:`BASELINE_FEATURES` order."""
    tokens = tokenize(query_text)
    feats = query_features(tokens, index)
    feats.update(table_features(table, stats))
    feats.update(query_table_features(query_id, tokens, table, index, mlm_weights, yrank))
    return [feats[name] for name in BASELINE_FEATURES]

