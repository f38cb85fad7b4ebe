"""Fielded inverted indices over tables and knowledge-base entities."""
from __future__ import annotations

import math
import pickle
from collections import Counter
from pathlib import Path
from typing import Iterable

from .corpus import ENTITY_FIELDS, KnowledgeBase, TableCorpus, catch_all_text
from .text import tokenize

TABLE_FIELDS = ("pageTitle", "sectionTitle", "caption", "headings", "body", "catchAll")

SNAPSHOT_MAGIC = b"TABRET-INDEX\n"
SNAPSHOT_VERSION = 1


class FieldStats:
    """Postings and length statistics for one field."""

    __slots__ = ("postings", "doc_length", "collection_tf", "total_terms")

    def __init__(self):
        self.postings: dict[str, dict[str, int]] = {}
        self.doc_length: dict[str, int] = {}
        self.collection_tf: dict[str, int] = {}
        self.total_terms = 0

    def add(self, doc_id: str, tokens: list[str]) -> None:
        self.doc_length[doc_id] = len(tokens)
        self.total_terms += len(tokens)
        for term, tf in Counter(tokens).items():
            self.postings.setdefault(term, {})[doc_id] = tf
            self.collection_tf[term] = self.collection_tf.get(term, 0) + tf

    def tf(self, term: str, doc_id: str) -> int:
        return self.postings.get(term, {}).get(doc_id, 0)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    @property
    def avg_doc_length(self) -> float:
        return self.total_terms / len(self.doc_length) if self.doc_length else 0.0


class FieldedIndex:
    """Inverted index with per-field statistics.

    Built once through :meth:`build`; callers never mutate it afterwards.
    """

    def __init__(self, fields: Iterable[str]):
        self.fields = tuple(fields)
        self._stats = {f: FieldStats() for f in self.fields}
        self.doc_ids: list[str] = []

    @classmethod
    def build(cls, fields: Iterable[str], docs: Iterable[tuple[str, dict[str, list[str]]]]):
        index = cls(fields)
        for doc_id, tokens_by_field in docs:
            index.doc_ids.append(doc_id)
            for f in index.fields:
                index._stats[f].add(doc_id, tokens_by_field.get(f, []))
        return index

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    def field(self, name: str) -> FieldStats:
        try:
            return self._stats[name]
        except KeyError:
            raise KeyError(f"unknown field {name!r}; index has {self.fields}") from None

    def postings(self, field: str, term: str) -> list[tuple[str, int]]:
        return list(self.field(field).postings.get(term, {}).items())

    def doc_length(self, field: str, doc_id: str) -> int:
        return self.field(field).doc_length[doc_id]

    def tf(self, field: str, term: str, doc_id: str) -> int:
        return self.field(field).tf(term, doc_id)

    def collection_term_count(self, field: str, term: str) -> int:
        return self.field(field).collection_tf.get(term, 0)

    def total_terms(self, field: str) -> int:
        return self.field(field).total_terms

    def vocabulary(self, field: str) -> list[str]:
        return list(self.field(field).postings)

    def __eq__(self, other):
        if not isinstance(other, FieldedIndex) or self.fields != other.fields:
            return False
        if self.doc_ids != other.doc_ids:
            return False
        return all(
            self._stats[f].postings == other._stats[f].postings
            and self._stats[f].doc_length == other._stats[f].doc_length
            for f in self.fields
        )


def table_field_tokens(table) -> dict[str, list[str]]:
    return {
        "pageTitle": tokenize(table.pageTitle),
        "sectionTitle": tokenize(table.sectionTitle),
        "caption": tokenize(table.caption),
        "headings": [tok for h in table.headings for tok in tokenize(h)],
        "body": [tok for c in table.cells() for tok in tokenize(c.text)],
        "catchAll": tokenize(catch_all_text(table)),
    }


def build_table_index(corpus: TableCorpus) -> FieldedIndex:
    return FieldedIndex.build(TABLE_FIELDS, ((t.id, table_field_tokens(t)) for t in corpus))


def build_entity_index(kb: KnowledgeBase) -> FieldedIndex:
    docs = (
        (r.id, {f: [tok for v in getattr(r, f) for tok in tokenize(v)] for f in ENTITY_FIELDS})
        for r in kb
    )
    return FieldedIndex.build(ENTITY_FIELDS, docs)


def idf(index: FieldedIndex, field: str, term: str) -> float:
    """ln(N / n_t); a term absent from the field is treated as n_t = 0.5."""
    n = index.doc_count
    if n == 0:
        raise ValueError("idf undefined on an empty index")
    df = index.field(field).df(term)
    return math.log(n / (df if df > 0 else 0.5))


def collection_prob(index: FieldedIndex, field: str, term: str) -> float:
    stats = index.field(field)
    if stats.total_terms == 0:
        return 0.0  # empty field: every term is unseen
    return stats.collection_tf.get(term, 0) / stats.total_terms


def save_index(index: FieldedIndex, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(SNAPSHOT_VERSION.to_bytes(2, "big"))
        pickle.dump(index, fh, protocol=4)


def load_index(path: str | Path) -> FieldedIndex:
    with open(path, "rb") as fh:
        if fh.read(len(SNAPSHOT_MAGIC)) != SNAPSHOT_MAGIC:
            raise ValueError(f"{path} is not an index snapshot")
        version = int.from_bytes(fh.read(2), "big")
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"{path}: unsupported snapshot version {version}")
        return pickle.load(fh)
