"""Query-likelihood retrieval: Dirichlet-smoothed LM, fielded MLM, entity retrieval.

Scores are log-probabilities.  A query term that is unseen in both the
document and the collection would give ln(0); its contribution is floored
at ``ln(1e-12)`` so scores stay finite.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .index import FieldedIndex, collection_prob
from .text import tokenize

LOG_FLOOR = math.log(1e-12)
MU_GRID = (10, 50, 100, 500, 1000, 2500, 5000)
MLM_TABLE_FIELDS = ("pageTitle", "sectionTitle", "caption", "headings", "body")


@dataclass(frozen=True)
class FieldWeights:
    weights: Mapping[str, float]
    mu: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.weights:
            raise ValueError("at least one field weight is required")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("field weights must be non-negative")
        if abs(sum(self.weights.values()) - 1.0) > 1e-9:
            raise ValueError(f"field weights sum to {sum(self.weights.values())}, not 1")
        if any(m < 0 for m in self.mu.values()):
            raise ValueError("smoothing parameters must be non-negative")

    @classmethod
    def uniform(cls, fields: Sequence[str], mu: Mapping[str, float] | None = None) -> "FieldWeights":
        return cls({f: 1.0 / len(fields) for f in fields}, dict(mu or {}))

    def active_fields(self) -> list[str]:
        return [f for f, w in self.weights.items() if w > 0]


def default_mu(index: FieldedIndex, field_name: str) -> float:
    """Average document length of the field."""
    return index.field(field_name).avg_doc_length


def _dirichlet(tf, doc_len, p_coll, mu) -> float:
    denom = doc_len + mu
    if denom <= 0:
        return 0.0  # empty field with no smoothing mass: no evidence
    return (tf + mu * p_coll) / denom


def _safe_log(p: float) -> float:
    return math.log(p) if p > 0 else LOG_FLOOR


def score_lm(query_tokens: Sequence[str], doc_id: str, index: FieldedIndex, field_name: str, mu: float) -> float:
    """Dirichlet-smoothed query log-likelihood of ``doc_id`` in one field."""
    if mu < 0:
        raise ValueError("mu must be non-negative")
    stats = index.field(field_name)
    doc_len = stats.doc_length[doc_id]
    score = 0.0
    for term, qtf in Counter(query_tokens).items():
        p = _dirichlet(stats.tf(term, doc_id), doc_len, collection_prob(index, field_name, term), mu)
        score += qtf * _safe_log(p)
    return score


def score_mlm(query_tokens: Sequence[str], doc_id: str, index: FieldedIndex, weights: FieldWeights) -> float:
    """Mixture of field language models; fields are mixed per term before the log."""
    fields = weights.active_fields()
    mus = {f: weights.mu.get(f, default_mu(index, f)) for f in fields}
    score = 0.0
    for term, qtf in Counter(query_tokens).items():
        p = 0.0
        for f in fields:
            stats = index.field(f)
            p += weights.weights[f] * _dirichlet(
                stats.tf(term, doc_id), stats.doc_length[doc_id], collection_prob(index, f, term), mus[f]
            )
        score += qtf * _safe_log(p)
    return score


class LMScorer:
    def __init__(self, index: FieldedIndex, field_name: str, mu: float | None = None):
        self.index = index
        self.fields = (field_name,)
        self.mu = default_mu(index, field_name) if mu is None else mu

    def __call__(self, query_tokens, doc_id) -> float:
        return score_lm(query_tokens, doc_id, self.index, self.fields[0], self.mu)


class MLMScorer:
    def __init__(self, index: FieldedIndex, weights: FieldWeights):
        self.index = index
        self.weights = weights
        self.fields = tuple(weights.active_fields())

    def __call__(self, query_tokens, doc_id) -> float:
        return score_mlm(query_tokens, doc_id, self.index, self.weights)


@dataclass
class Ranking:
    query_id: str
    items: list[tuple[str, float]] = field(default_factory=list)

    def ids(self) -> list[str]:
        return [d for d, _ in self.items]

    def __len__(self):
        return len(self.items)


def sort_scored(scored: Iterable[tuple[str, float]]) -> list[tuple[str, float]]:
    """Descending score; ties broken by ascending id."""
    return sorted(scored, key=lambda x: (-x[1], x[0]))


def candidates(index: FieldedIndex, query_tokens: Iterable[str], fields: Iterable[str]) -> set[str]:
    docs: set[str] = set()
    for f in fields:
        postings = index.field(f).postings
        for t in set(query_tokens):
            docs.update(postings.get(t, ()))
    return docs


def retrieve_topk(
    index: FieldedIndex,
    query_tokens: Sequence[str],
    scorer: Callable[[Sequence[str], str], float],
    k: int,
    query_id: str = "",
) -> Ranking:
    """Score documents that contain at least one query term and keep the best ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not query_tokens:
        return Ranking(query_id)
    fields = getattr(scorer, "fields", index.fields)
    docs = candidates(index, query_tokens, fields)
    scored = sort_scored((d, scorer(query_tokens, d)) for d in docs)
    return Ranking(query_id, scored[:k])


def write_run(rankings: Iterable[Ranking], fh, run_tag: str = "tabret") -> None:
    for ranking in rankings:
        for rank, (doc_id, score) in enumerate(ranking.items, 1):
            fh.write(f"{ranking.query_id} Q0 {doc_id} {rank} {score:.6f} {run_tag}\n")


def read_run(path) -> dict[str, list[str]]:
    """TREC run file -> query id -> table ids in rank order."""
    rows: dict[str, list[tuple[int, float, str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 columns in run line")
            qid, _, doc, rank, score, _ = parts
            rows.setdefault(qid, []).append((int(rank), -float(score), doc))
    return {q: [d for _, _, d in sorted(v)] for q, v in rows.items()}


class EntityRetriever:
    """Top-k entities for a free-text string, MLM with uniform weights over the entity fields."""

    def __init__(self, entity_index: FieldedIndex, k: int = 10):
        self.index = entity_index
        self.k = k
        self.weights = FieldWeights.uniform(entity_index.fields)
        self._scorer = MLMScorer(entity_index, self.weights)
        self._cached = lru_cache(maxsize=100_000)(self._retrieve)

    def _retrieve(self, tokens: tuple[str, ...]) -> tuple[str, ...]:
        if not tokens or self.index.doc_count == 0:
            return ()
        return tuple(retrieve_topk(self.index, tokens, self._scorer, self.k).ids())

    def __call__(self, text: str) -> tuple[str, ...]:
        return self._cached(tuple(tokenize(text)))


def retrieve_entities(entity_index: FieldedIndex, s: str, k: int = 10) -> tuple[str, ...]:
    """R_k(s): ids of the top-k entities for ``s`` in rank order."""
    return EntityRetriever(entity_index, k)(s)


# ---------------------------------------------------------------------------
# Parameter training
# ---------------------------------------------------------------------------


class _QueryMatrix:
    """Per-query term/field probability components for fast MLM re-scoring.

    For the candidate documents of one query, holds tf and |d| per (doc,
    field) and P(t|C) per (term, field) so that different weights and
    smoothing values can be evaluated with array operations.
    """

    def __init__(self, index: FieldedIndex, tokens: Sequence[str], fields: Sequence[str]):
        counts = Counter(tokens)
        self.terms = list(counts)
        self.qtf = np.array([counts[t] for t in self.terms], dtype=float)
        self.docs = sorted(candidates(index, self.terms, fields))
        nd, nt, nf = len(self.docs), len(self.terms), len(fields)
        self.tf = np.zeros((nd, nt, nf))
        self.dl = np.zeros((nd, nf))
        self.pc = np.zeros((nt, nf))
        for k, f in enumerate(fields):
            stats = index.field(f)
            for j, t in enumerate(self.terms):
                self.pc[j, k] = stats.collection_tf.get(t, 0) / stats.total_terms if stats.total_terms else 0.0
                post = stats.postings.get(t, {})
                for i, d in enumerate(self.docs):
                    self.tf[i, j, k] = post.get(d, 0)
            for i, d in enumerate(self.docs):
                self.dl[i, k] = stats.doc_length[d]

    def field_probs(self, mu: np.ndarray) -> np.ndarray:
        num = self.tf + mu * self.pc[None]
        den = np.broadcast_to(self.dl[:, None, :] + mu, num.shape)
        return np.divide(num, den, out=np.zeros_like(num), where=den > 0)

    def scores(self, probs: np.ndarray, w: np.ndarray) -> np.ndarray:
        mix = probs @ w
        with np.errstate(divide="ignore"):
            logs = np.where(mix > 0, np.log(np.where(mix > 0, mix, 1.0)), LOG_FLOOR)
        return logs @ self.qtf


def _ranked_ids(docs, scores, k=20):
    order = sorted(range(len(docs)), key=lambda i: (-scores[i], docs[i]))
    return [docs[i] for i in order[:k]]


def _mean_ndcg(matrices, probs, w, qrels, k=20):
    from .evaluation import ndcg_at_k

    vals = [
        ndcg_at_k(_ranked_ids(m.docs, m.scores(p, w), k), qrels.get(qid, {}), k)
        for (qid, m), p in zip(matrices.items(), probs)
    ]
    return float(np.mean(vals)) if vals else 0.0


def sweep_mu(
    index: FieldedIndex,
    field_name: str,
    queries: Mapping[str, Sequence[str]],
    qrels: Mapping[str, Mapping[str, int]],
    grid: Sequence[float] = MU_GRID,
    k: int = 20,
) -> tuple[float, float]:
    """Pick the smoothing value for one field maximizing mean NDCG@k; returns (mu, ndcg)."""
    mats = {q: _QueryMatrix(index, toks, [field_name]) for q, toks in queries.items() if toks}
    w = np.ones(1)
    best = (grid[0], -1.0)
    for mu in grid:
        probs = [m.field_probs(np.array([float(mu)])) for m in mats.values()]
        val = _mean_ndcg(mats, probs, w, qrels, k)
        if val > best[1] + 1e-12:
            best = (mu, val)
    return best


def train_field_weights(
    index: FieldedIndex,
    queries: Mapping[str, Sequence[str]],
    qrels: Mapping[str, Mapping[str, int]],
    fields: Sequence[str] = MLM_TABLE_FIELDS,
    mu: Mapping[str, float] | None = None,
    step: float = 0.05,
    sweeps: int = 3,
    k: int = 20,
) -> tuple[FieldWeights, float]:
    """Coordinate ascent on mean NDCG@k over the weight simplex.

    Each coordinate move sets one weight to a grid value and rescales the
    others proportionally so the weights keep summing to one.
    """
    fields = list(fields)
    mu = dict(mu or {})
    mu_vec = np.array([float(mu.get(f, default_mu(index, f))) for f in fields])
    mats = {q: _QueryMatrix(index, toks, fields) for q, toks in queries.items() if toks}
    probs = [m.field_probs(mu_vec) for m in mats.values()]
    w = np.full(len(fields), 1.0 / len(fields))
    best = _mean_ndcg(mats, probs, w, qrels, k)
    grid = np.round(np.arange(0.0, 1.0 + step / 2, step), 10)
    for _ in range(sweeps):
        improved = False
        for i in range(len(fields)):
            for v in grid:
                cand = _move(w, i, v)
                if cand is None:
                    continue
                val = _mean_ndcg(mats, probs, cand, qrels, k)
                if val > best + 1e-12:
                    best, w, improved = val, cand, True
        if not improved:
            break
    weights = {f: float(x) for f, x in zip(fields, w)}
    # exact renormalization against float drift
    total = sum(weights.values())
    weights = {f: x / total for f, x in weights.items()}
    return FieldWeights(weights, {f: float(m) for f, m in zip(fields, mu_vec)}), best


def _move(w: np.ndarray, i: int, value: float) -> np.ndarray | None:
    rest = 1.0 - w[i]
    cand = w.copy()
    cand[i] = value
    others = [j for j in range(len(w)) if j != i]
    if not others:
        return cand if abs(value - 1.0) < 1e-12 else None
    if rest > 1e-12:
        cand[others] = w[others] * (1.0 - value) / rest
    else:
        cand[others] = (1.0 - value) / len(others)
    if np.allclose(cand, w):
        return None
    return cand
