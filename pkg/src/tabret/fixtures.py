"""Synthetic desk-scale collections with planted semantic relevance.

Each query belongs to a topic.  A topic owns a few KB entities, a
category, a pair of "surface" words used by its query and a set of
"alternate" words that mean the same thing but never occur in the query.
Per query, half of the relevant tables are written with the surface
words and half with the alternate words only; all of them list the
topic's entities in their first column.  Lexical distractors carry the
surface words in their section title and body but list another topic's
entities and have unrelated titles.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    EntityRecord,
    PageSignals,
    Query,
    Table,
    TableCell,
    schema_stats_from_tables,
    write_corpus,
    write_embeddings,
    write_kb,
    write_qrels,
    write_queries,
    write_schema_stats,
    write_signals,
    write_yrank,
)

_ONSETS = ("b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")


@dataclass(frozen=True)
class FixtureScale:
    tables: int = 200
    queries: int = 20
    entities: int = 60
    relevant_per_query: int = 4
    distractors_per_query: int = 2
    pool_size: int = 30
    disjoint_fraction: float = 0.5
    word_dim: int = 300
    graph_dim: int = 200


class _Words:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used: set[str] = set()

    def new(self) -> str:
        while True:
            n = int(self.rng.integers(2, 4))
            w = "".join(_ONSETS[self.rng.integers(len(_ONSETS))] + _VOWELS[self.rng.integers(len(_VOWELS))] for _ in range(n))
            if w not in self.used:
                self.used.add(w)
                return w

    def many(self, n: int) -> list[str]:
        return [self.new() for _ in range(n)]


@dataclass
class Fixtures:
    tables: list[Table]
    kb: list[EntityRecord]
    queries: list[Query]
    qrels: dict[str, dict[str, int]]
    word_vectors: list[tuple[str, np.ndarray]]
    graph_vectors: list[tuple[str, np.ndarray]]
    signals: dict[str, PageSignals]
    yrank: dict[tuple[str, str], int]
    planted: dict[str, list[str]]  # query id -> relevant table ids
    disjoint: set[str]  # relevant tables written without the query's words


def generate(scale: FixtureScale = FixtureScale(), seed: int = 42) -> Fixtures:
    rng = np.random.default_rng(seed)
    words = _Words(rng)
    nq = scale.queries
    per_topic = max(1, scale.entities // nq)
    needed = nq * (scale.relevant_per_query + scale.distractors_per_query)
    if scale.tables < needed:
        raise ValueError(f"need at least {needed} tables for {nq} queries")

    filler = words.many(80)
    heading_vocab = words.many(24)
    generic_cats = [f"cat:generic_{i}" for i in range(5)]

    topics = []
    for k in range(nq):
        topics.append(
            {
                "surface": words.many(3),
                "alternate": words.many(3),
                "names": [words.many(2) for _ in range(per_topic)],
                "category": f"cat:topic_{k:02d}",
            }
        )

    # knowledge base
    kb: list[EntityRecord] = []
    topic_entities: list[list[str]] = []
    for k, tp in enumerate(topics):
        ids = [f"<dbpedia:E{k:02d}_{i}>" for i in range(per_topic)]
        topic_entities.append(ids)
    for k, tp in enumerate(topics):
        ids = topic_entities[k]
        for i, eid in enumerate(ids):
            others = [e for e in ids if e != eid]
            stray = topic_entities[int(rng.integers(nq))][0]
            links = set(others[:1]) | ({stray} if stray != eid else set())
            cats = {tp["category"], generic_cats[int(rng.integers(len(generic_cats)))]}
            kb.append(
                EntityRecord(
                    id=eid,
                    names=(" ".join(tp["names"][i]),),
                    categoriesText=(" ".join(tp["surface"][:2]), " ".join(tp["alternate"])),
                    attributes=(" ".join(rng.choice(filler, 3, replace=False)),),
                    similarEntityNames=tuple(" ".join(tp["names"][j]) for j in range(per_topic) if j != i),
                    relatedEntityNames=(" ".join(rng.choice(filler, 2, replace=False)),),
                    categories=frozenset(cats),
                    outLinks=frozenset(links),
                )
            )

    # tables
    tables: list[Table] = []
    planted: dict[str, list[str]] = {}
    distractors: dict[str, list[str]] = {}
    disjoint: set[str] = set()
    qrels: dict[str, dict[str, int]] = {}
    queries: list[Query] = []
    tid = iter(f"table-{i:04d}" for i in range(scale.tables))
    entity_topic: dict[str, int] = {}  # whose entities a table lists

    def body_for(topic: int) -> tuple[tuple[TableCell, ...], ...]:
        ents = topic_entities[topic]
        n_rows = int(rng.integers(4, 8))
        rows = []
        for r in range(n_rows):
            e = ents[r % len(ents)]
            name = " ".join(topics[topic]["names"][r % len(ents)])
            if rng.random() < 0.15:
                first = TableCell(name)  # unlinked mention
            else:
                first = TableCell(name, e)
            rows.append(
                (
                    first,
                    TableCell(str(filler[int(rng.integers(len(filler)))])),
                    TableCell("" if rng.random() < 0.1 else str(int(rng.integers(1, 5000)))),
                )
            )
        return tuple(rows)

    def headings() -> tuple[str, ...]:
        return tuple(rng.choice(heading_vocab, 3, replace=False))

    def fill(n: int) -> str:
        return " ".join(rng.choice(filler, n, replace=False))

    n_disjoint = int(round(scale.relevant_per_query * scale.disjoint_fraction))
    for k, tp in enumerate(topics):
        qid = f"q{k + 1:02d}"
        queries.append(Query(qid, " ".join(tp["surface"][:2]), "QS-1" if k < nq / 2 else "QS-2"))
        planted[qid] = []
        for r in range(scale.relevant_per_query):
            t_id = next(tid)
            if r < scale.relevant_per_query - n_disjoint:
                page = f"{tp['surface'][0]} {tp['surface'][2]} {fill(1)}"
                caption = f"{tp['surface'][1]} {fill(2)}"
            else:
                page = f"{tp['alternate'][0]} {fill(1)}"
                caption = f"{tp['alternate'][1]} {tp['alternate'][2]} {fill(1)}"
                disjoint.add(t_id)
            tables.append(Table(t_id, page, fill(2), caption, headings(), body_for(k)))
            entity_topic[t_id] = k
            planted[qid].append(t_id)
        distractors[qid] = []
        for _ in range(scale.distractors_per_query):
            t_id = next(tid)
            other = (k + 1 + int(rng.integers(nq - 1))) % nq
            section = f"{tp['surface'][0]} {tp['surface'][1]} {fill(1)}"
            body = tuple(
                (row[0], TableCell(tp["surface"][i % 2]), row[2]) for i, row in enumerate(body_for(other))
            )
            tables.append(Table(t_id, fill(2), section, fill(2), headings(), body))
            entity_topic[t_id] = other
            distractors[qid].append(t_id)

    for t_id in tid:
        topic = int(rng.integers(nq))
        page = f"{fill(2)}"
        caption = f"{fill(2)}"
        tables.append(Table(t_id, page, fill(2), caption, headings(), body_for(topic)))
        entity_topic[t_id] = topic

    table_ids = [t.id for t in tables]
    for k, q in enumerate(queries):
        judged = {t: int(rng.integers(1, 3)) for t in planted[q.id]}
        judged.update({t: 0 for t in distractors[q.id]})
        # pad the pool with non-relevant tables outside this query's topic
        pool_extra = [t for t in table_ids if t not in judged and entity_topic[t] != k]
        n_extra = max(0, scale.pool_size - len(judged))
        for t in rng.choice(pool_extra, size=min(n_extra, len(pool_extra)), replace=False):
            judged[str(t)] = 0
        qrels[q.id] = dict(sorted(judged.items()))

    # embeddings: topic words and entities cluster around a topic direction
    topic_word_dir = rng.normal(size=(nq, scale.word_dim))
    topic_graph_dir = rng.normal(size=(nq, scale.graph_dim))
    word_vectors = []
    for k, tp in enumerate(topics):
        for w in [*tp["surface"], *tp["alternate"]]:
            word_vectors.append((w, topic_word_dir[k] + 0.6 * rng.normal(size=scale.word_dim)))
        for name in tp["names"]:
            for w in name:
                word_vectors.append((w, rng.normal(size=scale.word_dim)))
    for w in [*filler, *heading_vocab]:
        word_vectors.append((w, rng.normal(size=scale.word_dim)))
    graph_vectors = []
    for k in range(nq):
        for eid in topic_entities[k]:
            graph_vectors.append((eid, topic_graph_dir[k] + 0.6 * rng.normal(size=scale.graph_dim)))

    signals = {}
    for t in tables:
        signals[t.id] = PageSignals(
            inLinks=int(rng.integers(0, 500)),
            outLinks=int(rng.integers(0, 300)),
            pageViews=int(rng.integers(0, 100000)),
            tablesOnPage=int(rng.integers(1, 6)),
            pageSizeChars=int(rng.integers(2000, 40000)),
        )
    yrank = {}
    for q in queries:
        lexical = [t for t in planted[q.id] if t not in disjoint] + distractors[q.id]
        for r, t in enumerate(rng.permutation(lexical), 1):
            yrank[(q.id, str(t))] = r

    return Fixtures(tables, kb, queries, qrels, word_vectors, graph_vectors, signals, yrank, planted, disjoint)


FILES = {
    "corpus": "corpus.jsonl",
    "kb": "kb.jsonl",
    "queries": "queries.tsv",
    "qrels": "qrels.txt",
    "word_embeddings": "word_vectors.txt",
    "graph_embeddings": "graph_vectors.txt",
    "schema_stats": "schema_stats.tsv",
    "signals": "signals.tsv",
    "yrank": "yrank.tsv",
}


def write_fixtures(fx: Fixtures, out_dir: str | Path, seed: int = 42) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in FILES.items()}
    write_corpus(fx.tables, paths["corpus"])
    write_kb(fx.kb, paths["kb"])
    write_queries(fx.queries, paths["queries"])
    write_qrels(fx.qrels, paths["qrels"])
    write_embeddings(fx.word_vectors, paths["word_embeddings"])
    write_embeddings(fx.graph_vectors, paths["graph_embeddings"], header=False)
    # heading statistics from the corpus plus background schemas
    counts = schema_stats_from_tables(fx.tables)
    rng = np.random.default_rng([seed, 1])
    headings = sorted({h for t in fx.tables for h in t.headings})
    for _ in range(100):
        schema = frozenset(rng.choice(headings, int(rng.integers(2, 5)), replace=False))
        counts[schema] = counts.get(schema, 0) + int(rng.integers(1, 20))
    write_schema_stats(counts, paths["schema_stats"])
    write_signals(fx.signals, paths["signals"])
    write_yrank(fx.yrank, paths["yrank"])
    config = out / "tabret.conf"
    config.write_text(
        "".join(f"{k}={v.name}\n" for k, v in paths.items()) + f"seed={seed}\n", encoding="utf-8"
    )
    paths["config"] = config
    return paths
