"""Semantic query-table matching.

Queries and tables are turned into sets of terms (words or KB entities),
each term is embedded in one of four spaces, and the two sides are
compared with four cosine-based measures: centroid cosine ("Early") and
the max / sum / mean of all pairwise cosines ("Late").
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import EmbeddingStore, KnowledgeBase, Table
from .index import FieldedIndex, idf
from .retrieval import EntityRetriever
from .text import tokenize, unique

REPRESENTATIONS = ("Entity", "Category", "Word", "Graph")
MEASURES = ("Early", "LateMax", "LateSum", "LateAvg")
SEMANTIC_FEATURES = tuple(f"{r}_{m}" for r in REPRESENTATIONS for m in MEASURES)

SPACES = ("bagOfEntities", "bagOfCategories", "wordEmbedding", "graphEmbedding")
_SPACE_OF = dict(zip(REPRESENTATIONS, SPACES))
_SPARSE = {"bagOfEntities", "bagOfCategories"}


@dataclass(frozen=True)
class TermSet:
    kind: str  # "word" | "entity"
    terms: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in ("word", "entity"):
            raise ValueError(f"unknown term kind {self.kind!r}")
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("terms must be unique")

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)


@dataclass(frozen=True)
class SemanticVector:
    space: str
    payload: object  # dict[str, float] for sparse spaces, np.ndarray for dense ones

    @property
    def sparse(self) -> bool:
        return self.space in _SPARSE


def word_source_text(table: Table) -> list[str]:
    """Tokens of the table parts used for word terms: page title, caption, headings."""
    toks = tokenize(table.pageTitle) + tokenize(table.caption)
    for h in table.headings:
        toks.extend(tokenize(h))
    return toks


def extract_word_terms(source: str | Table) -> TermSet:
    if isinstance(source, Table):
        return TermSet("word", tuple(unique(word_source_text(source))))
    return TermSet("word", tuple(unique(tokenize(source))))


def column_entity_rates(table: Table) -> list[float]:
    n = table.num_rows
    return [sum(1 for c in table.column(j) if c.entity) / n for j in range(table.num_cols)]


def core_column(table: Table) -> int:
    """Column with the highest share of entity cells; ties go to the leftmost."""
    if table.num_cols == 0 or table.num_rows == 0:
        raise ValueError(f"table {table.id!r} has no data cells")
    rates = column_entity_rates(table)
    return max(range(len(rates)), key=lambda j: (rates[j], -j))


def extract_query_entities(query_text: str, retriever: EntityRetriever) -> TermSet:
    return TermSet("entity", tuple(retriever(query_text)))


def extract_entity_terms(table: Table, kb: KnowledgeBase, retriever: EntityRetriever) -> TermSet:
    """Core-column entities plus entities retrieved for the page title and the caption."""
    core: list[str] = []
    if table.num_rows and table.num_cols:
        core = [c.entity for c in table.column(core_column(table)) if c.entity and c.entity in kb]
    terms = unique([*core, *retriever(table.pageTitle), *retriever(table.caption)])
    return TermSet("entity", tuple(terms))


def embed_term(
    term: str,
    space: str,
    kb: KnowledgeBase | None = None,
    store: EmbeddingStore | None = None,
    kind: str | None = None,
) -> SemanticVector | None:
    """Vector for one term, or None when the term has no representation in ``space``."""
    if kind is not None and (kind == "word") != (space == "wordEmbedding"):
        raise ValueError(f"{kind} terms cannot be embedded in {space}")
    if space == "bagOfEntities":
        if kb is None or term not in kb:
            return None
        return SemanticVector(space, {e: 1.0 for e in kb.related(term)})
    if space == "bagOfCategories":
        if kb is None or term not in kb or not kb[term].categories:
            return None
        return SemanticVector(space, {c: 1.0 for c in kb[term].categories})
    if space in ("wordEmbedding", "graphEmbedding"):
        vec = store.get(term) if store is not None else None
        if vec is None or not np.any(vec):
            return None
        return SemanticVector(space, vec)
    raise ValueError(f"unknown space {space!r}")


def _stack(qvecs: Sequence[SemanticVector], tvecs: Sequence[SemanticVector]):
    """Dense matrices for both sides; sparse payloads share a local dimension map."""
    if qvecs[0].sparse:
        dims: dict[str, int] = {}
        for v in (*qvecs, *tvecs):
            for key in v.payload:
                dims.setdefault(key, len(dims))

        def dense(vs):
            m = np.zeros((len(vs), len(dims)))
            for i, v in enumerate(vs):
                for key, val in v.payload.items():
                    m[i, dims[key]] = val
            return m

        return dense(qvecs), dense(tvecs)
    return np.vstack([v.payload for v in qvecs]), np.vstack([v.payload for v in tvecs])


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def early_fusion(
    qvecs: Sequence[SemanticVector],
    tvecs: Sequence[SemanticVector],
    q_weights: Sequence[float] | None = None,
    t_weights: Sequence[float] | None = None,
) -> float:
    """Cosine between the query and table centroids.

    Without weights the centroids are plain means; with weights they are
    weighted sums (the TF-IDF variant used for words).
    """
    if not qvecs or not tvecs:
        return 0.0
    Q, T = _stack(qvecs, tvecs)
    cq = Q.mean(axis=0) if q_weights is None else np.asarray(q_weights, dtype=float) @ Q
    ct = T.mean(axis=0) if t_weights is None else np.asarray(t_weights, dtype=float) @ T
    return cosine(cq, ct)


def pairwise_cosines(qvecs: Sequence[SemanticVector], tvecs: Sequence[SemanticVector]) -> np.ndarray:
    Q, T = _stack(qvecs, tvecs)
    return np.clip(_unit_rows(Q) @ _unit_rows(T).T, -1.0, 1.0)


def late_fusion(qvecs: Sequence[SemanticVector], tvecs: Sequence[SemanticVector], aggr: str) -> float:
    if not qvecs or not tvecs:
        return 0.0
    S = pairwise_cosines(qvecs, tvecs)
    if aggr == "max":
        return float(S.max())
    if aggr == "sum":
        return float(S.sum())
    if aggr == "avg":
        return float(S.sum() / S.size)
    raise ValueError(f"unknown aggregator {aggr!r}")


def _all_measures(qvecs, tvecs, q_weights=None, t_weights=None) -> list[float]:
    if not qvecs or not tvecs:
        return [0.0] * len(MEASURES)
    S = pairwise_cosines(qvecs, tvecs)
    return [
        early_fusion(qvecs, tvecs, q_weights, t_weights),
        float(S.max()),
        float(S.sum()),
        float(S.sum() / S.size),
    ]


class SemanticMatcher:
    """Computes the 16 semantic features, caching per-query and per-table vectors.

    ``index`` is the table index; its catchAll field supplies IDF values for
    word weighting.
    """

    def __init__(
        self,
        kb: KnowledgeBase,
        retriever: EntityRetriever,
        index: FieldedIndex,
        word_store: EmbeddingStore | None = None,
        graph_store: EmbeddingStore | None = None,
    ):
        self.kb = kb
        self.retriever = retriever
        self.index = index
        self.word_store = word_store
        self.graph_store = graph_store
        self._query_cache: dict[str, dict] = {}
        self._table_cache: dict[str, dict] = {}

    def _embed_all(self, terms: TermSet, space: str) -> tuple[list[SemanticVector], list[str]]:
        store = self.word_store if space == "wordEmbedding" else self.graph_store
        vecs, kept = [], []
        for t in terms:
            v = embed_term(t, space, self.kb, store, terms.kind)
            if v is not None:
                vecs.append(v)
                kept.append(t)
        return vecs, kept

    def _tfidf(self, words: list[str], counts: Mapping[str, int]) -> list[float]:
        return [counts[w] * idf(self.index, "catchAll", w) for w in words]

    def _represent(self, words: TermSet, word_counts: Mapping[str, int], entities: TermSet) -> dict:
        rep = {}
        for name in ("Entity", "Category", "Graph"):
            rep[name] = (self._embed_all(entities, _SPACE_OF[name])[0], None)
        wvecs, kept = self._embed_all(words, "wordEmbedding")
        rep["Word"] = (wvecs, self._tfidf(kept, word_counts))
        return rep

    def query_representation(self, query_text: str) -> dict:
        if query_text not in self._query_cache:
            words = extract_word_terms(query_text)
            ents = extract_query_entities(query_text, self.retriever)
            self._query_cache[query_text] = self._represent(words, Counter(tokenize(query_text)), ents)
        return self._query_cache[query_text]

    def table_representation(self, table: Table) -> dict:
        if table.id not in self._table_cache:
            words = extract_word_terms(table)
            ents = extract_entity_terms(table, self.kb, self.retriever)
            self._table_cache[table.id] = self._represent(words, Counter(word_source_text(table)), ents)
        return self._table_cache[table.id]

    def features(self, query_text: str, table: Table) -> list[float]:
        """All 16 values in :data:`SEMANTIC_FEATURES` order."""
        q = self.query_representation(query_text)
        t = self.table_representation(table)
        out: list[float] = []
        for name in REPRESENTATIONS:
            (qv, qw), (tv, tw) = q[name], t[name]
            out.extend(_all_measures(qv, tv, qw, tw))
        return out


def semantic_features(
    query_text: str,
    table: Table,
    kb: KnowledgeBase,
    retriever: EntityRetriever,
    index: FieldedIndex,
    word_store: EmbeddingStore | None = None,
    graph_store: EmbeddingStore | None = None,
) -> dict[str, float]:
    matcher = SemanticMatcher(kb, retriever, index, word_store, graph_store)
    return dict(zip(SEMANTIC_FEATURES, matcher.features(query_text, table)))
