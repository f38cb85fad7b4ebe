"""Data model and loaders for tables, the knowledge base and side files.

Every structure here is built once by a loader and treated as read-only
afterwards; tables are frozen dataclasses and "modifications" (entity
resolution, attaching page signals) return new objects.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .text import normalize_label

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised for unrecoverable problems in an input file."""


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TableCell:
    text: str = ""
    entity: str | None = None


@dataclass(frozen=True)
class Table:
    id: str
    pageTitle: str = ""
    sectionTitle: str = ""
    caption: str = ""
    headings: tuple[str, ...] = ()
    body: tuple[tuple[TableCell, ...], ...] = ()
    numHeaderRows: int = 1
    inLinks: int = 0
    outLinks: int = 0
    pageViews: int = 0
    tablesOnPage: int = 1
    pageSizeChars: int = 0

    def __post_init__(self):
        widths = {len(row) for row in self.body}
        if len(widths) > 1:
            raise DataError(f"table {self.id!r}: rows have unequal lengths {sorted(widths)}")
        if self.headings and widths and len(self.headings) not in widths:
            raise DataError(
                f"table {self.id!r}: {len(self.headings)} headings for {widths.pop()} columns"
            )

    @property
    def num_rows(self) -> int:
        return len(self.body)

    @property
    def num_cols(self) -> int:
        if self.body:
            return len(self.body[0])
        return len(self.headings)

    def column(self, j: int) -> list[TableCell]:
        return [row[j] for row in self.body]

    def cells(self) -> Iterator[TableCell]:
        for row in self.body:
            yield from row

    def to_json(self) -> dict:
        """Corpus-file representation (page signals live in a sidecar file)."""
        return {
            "id": self.id,
            "pageTitle": self.pageTitle,
            "sectionTitle": self.sectionTitle,
            "caption": self.caption,
            "headings": list(self.headings),
            "rows": [
                [{"text": c.text, "entity": c.entity} if c.entity else {"text": c.text} for c in row]
                for row in self.body
            ],
            "numHeaderRows": self.numHeaderRows,
        }

    @classmethod
    def from_json(cls, rec: dict) -> "Table":
        if not isinstance(rec, dict):
            raise DataError("record is not a JSON object")
        if "id" not in rec or not str(rec["id"]):
            raise DataError("record has no id")
        rows = []
        for row in rec.get("rows", []) or []:
            cells = []
            for cell in row:
                if isinstance(cell, str):
                    cells.append(TableCell(cell))
                else:
                    cells.append(TableCell(str(cell.get("text", "") or ""), cell.get("entity") or None))
            rows.append(tuple(cells))
        return cls(
            id=str(rec["id"]),
            pageTitle=str(rec.get("pageTitle", "") or ""),
            sectionTitle=str(rec.get("sectionTitle", "") or ""),
            caption=str(rec.get("caption", "") or ""),
            headings=tuple(str(h) for h in rec.get("headings", []) or []),
            body=tuple(rows),
            numHeaderRows=int(rec.get("numHeaderRows", 1)),
        )


def catch_all_text(table: Table) -> str:
    """Page title, section title, caption, headings and body cells, space-joined."""
    parts = [table.pageTitle, table.sectionTitle, table.caption, *table.headings]
    parts.extend(c.text for c in table.cells())
    return " ".join(p for p in parts if p)


class TableCorpus:
    """Ordered, id-addressable collection of tables."""

    def __init__(self, tables: Iterable[Table] = (), skipped: int = 0, diagnostics=None):
        self._tables: dict[str, Table] = {}
        for t in tables:
            if t.id in self._tables:
                raise DataError(f"duplicate table id {t.id!r}")
            self._tables[t.id] = t
        self.skipped = skipped
        self.diagnostics: list[str] = list(diagnostics or [])

    def __len__(self):
        return len(self._tables)

    def __iter__(self) -> Iterator[Table]:
        return iter(self._tables.values())

    def __contains__(self, table_id):
        return table_id in self._tables

    def __getitem__(self, table_id: str) -> Table:
        return self._tables[table_id]

    def ids(self) -> list[str]:
        return list(self._tables)

    def __eq__(self, other):
        return isinstance(other, TableCorpus) and list(self) == list(other)


def load_corpus(path: str | Path) -> TableCorpus:
    """Read a JSON Lines table corpus; malformed records are skipped with a warning."""
    path = Path(path)
    try:
        fh = path.open(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    tables, seen, diagnostics = [], set(), []
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                table = Table.from_json(json.loads(line))
                if table.id in seen:
                    raise DataError(f"duplicate id {table.id!r}")
            except (ValueError, TypeError, AttributeError) as exc:
                msg = f"{path}:{lineno}: skipped record: {exc}"
                log.warning(msg)
                diagnostics.append(msg)
                continue
            seen.add(table.id)
            tables.append(table)
    log.info("loaded %d tables from %s (%d skipped)", len(tables), path, len(diagnostics))
    return TableCorpus(tables, skipped=len(diagnostics), diagnostics=diagnostics)


def write_corpus(corpus: Iterable[Table], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in corpus:
            fh.write(json.dumps(t.to_json(), ensure_ascii=False) + "\n")


@dataclass
class ResolutionStats:
    linked_cells: int = 0
    resolved: int = 0
    demoted: int = 0


def resolve_entities(corpus: TableCorpus, kb: "KnowledgeBase") -> tuple[TableCorpus, ResolutionStats]:
    """Clear cell entities that do not resolve in the KB; the anchor text stays."""
    stats = ResolutionStats()
    out = []
    for table in corpus:
        changed = False
        rows = []
        for row in table.body:
            cells = []
            for cell in row:
                if cell.entity is not None:
                    stats.linked_cells += 1
                    if cell.entity in kb:
                        stats.resolved += 1
                    else:
                        stats.demoted += 1
                        cell = TableCell(cell.text)
                        changed = True
                cells.append(cell)
            rows.append(tuple(cells))
        out.append(replace(table, body=tuple(rows)) if changed else table)
    resolved = TableCorpus(out, skipped=corpus.skipped, diagnostics=corpus.diagnostics)
    return resolved, stats


# ---------------------------------------------------------------------------
# Knowledge base
# ---------------------------------------------------------------------------

ENTITY_FIELDS = ("names", "categoriesText", "attributes", "similarEntityNames", "relatedEntityNames")


@dataclass(frozen=True)
class EntityRecord:
    id: str
    names: tuple[str, ...] = ()
    categoriesText: tuple[str, ...] = ()
    attributes: tuple[str, ...] = ()
    similarEntityNames: tuple[str, ...] = ()
    relatedEntityNames: tuple[str, ...] = ()
    categories: frozenset[str] = frozenset()
    outLinks: frozenset[str] = frozenset()

    def field_text(self, name: str) -> str:
        return " ".join(getattr(self, name))

    def to_json(self) -> dict:
        rec = {"id": self.id}
        for f in ENTITY_FIELDS:
            rec[f] = list(getattr(self, f))
        rec["categories"] = sorted(self.categories)
        rec["outLinks"] = sorted(self.outLinks)
        return rec

    @classmethod
    def from_json(cls, rec: dict) -> "EntityRecord":
        kw = {f: tuple(str(v) for v in rec.get(f, []) or []) for f in ENTITY_FIELDS}
        return cls(
            id=str(rec["id"]),
            categories=frozenset(rec.get("categories", []) or []),
            outLinks=frozenset(rec.get("outLinks", []) or []),
            **kw,
        )


class KnowledgeBase:
    """Entity records plus the reverse link map used for bag-of-entities."""

    def __init__(self, records: Iterable[EntityRecord]):
        self.records: dict[str, EntityRecord] = {}
        for r in records:
            if r.id in self.records:
                raise DataError(f"duplicate entity id {r.id!r}")
            self.records[r.id] = r
        in_links = defaultdict(set)
        for r in self.records.values():
            for target in r.outLinks:
                in_links[target].add(r.id)
        self._in_links = {k: frozenset(v) for k, v in in_links.items()}

    def __len__(self):
        return len(self.records)

    def __contains__(self, entity_id):
        return entity_id in self.records

    def __getitem__(self, entity_id) -> EntityRecord:
        return self.records[entity_id]

    def __iter__(self) -> Iterator[EntityRecord]:
        return iter(self.records.values())

    def in_links(self, entity_id: str) -> frozenset[str]:
        return self._in_links.get(entity_id, frozenset())

    def related(self, entity_id: str) -> set[str]:
        """Entities linked to or from ``entity_id`` (either direction), plus itself."""
        rel = {entity_id}
        if entity_id in self.records:
            rel |= self.records[entity_id].outLinks
        rel |= self.in_links(entity_id)
        return rel


def load_kb(path: str | Path) -> KnowledgeBase:
    path = Path(path)
    records = []
    try:
        fh = path.open(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read knowledge base {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(EntityRecord.from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                log.warning("%s:%d: skipped entity record: %s", path, lineno, exc)
    return KnowledgeBase(records)


def write_kb(kb: Iterable[EntityRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in kb:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------


class EmbeddingStore:
    def __init__(self, tokens: list[str], matrix: np.ndarray):
        if matrix.ndim != 2 or matrix.shape[0] != len(tokens):
            raise DataError("embedding matrix does not match token list")
        self.matrix = matrix
        self.dimension = int(matrix.shape[1])
        self._row = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self._row)

    def __contains__(self, token):
        return token in self._row

    def get(self, token: str) -> np.ndarray | None:
        i = self._row.get(token)
        return None if i is None else self.matrix[i]

    def tokens(self) -> list[str]:
        return list(self._row)


def load_embeddings(path: str | Path, expected_dim: int | None = None) -> EmbeddingStore:
    """Read word2vec-style text vectors, with or without a ``count dim`` header."""
    path = Path(path)
    tokens, rows, seen = [], [], set()
    dim = expected_dim
    try:
        fh = path.open(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read embeddings {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                header_dim = int(parts[1])
                if dim is not None and header_dim != dim:
                    raise DataError(f"{path}:1: header dimension {header_dim} != expected {dim}")
                dim = header_dim
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim or dim == 0:
                raise DataError(f"{path}:{lineno}: expected {dim} values for {token!r}, got {len(values)}")
            if token in seen:
                continue
            try:
                rows.append([float(v) for v in values])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            seen.add(token)
            tokens.append(token)
    matrix = np.asarray(rows, dtype=np.float64).reshape(len(rows), dim or 0)
    return EmbeddingStore(tokens, matrix)


def write_embeddings(store_items: Iterable[tuple[str, np.ndarray]], path: str | Path, header=True) -> None:
    items = list(store_items)
    with open(path, "w", encoding="utf-8") as fh:
        if header and items:
            fh.write(f"{len(items)} {len(items[0][1])}\n")
        for token, vec in items:
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")


# ---------------------------------------------------------------------------
# Schema statistics (ACSDb-style heading co-occurrence counts)
# ---------------------------------------------------------------------------


class SchemaStats:
    def __init__(self, schema_counts: dict[frozenset[str], int] | None = None):
        self.schemaCounts: dict[frozenset[str], int] = {}
        for schema, freq in (schema_counts or {}).items():
            key = frozenset(normalize_label(h) for h in schema)
            self.schemaCounts[key] = self.schemaCounts.get(key, 0) + int(freq)
        self.headingCounts: dict[str, int] = defaultdict(int)
        self._schemas_with: dict[str, list[frozenset[str]]] = defaultdict(list)
        for schema, freq in self.schemaCounts.items():
            for h in schema:
                self.headingCounts[h] += freq
                self._schemas_with[h].append(schema)
        self.headingCounts = dict(self.headingCounts)
        self.totalCount = sum(self.schemaCounts.values())
        self._joint: dict[tuple[str, str], int] = {}

    def __len__(self):
        return len(self.schemaCounts)

    def joint_count(self, a: str, b: str) -> int:
        key = (a, b) if a <= b else (b, a)
        if key not in self._joint:
            small = min((a, b), key=lambda h: len(self._schemas_with.get(h, ())))
            other = b if small == a else a
            self._joint[key] = sum(
                self.schemaCounts[s] for s in self._schemas_with.get(small, ()) if other in s
            )
        return self._joint[key]


def load_schema_stats(path: str | Path) -> SchemaStats:
    counts: dict[frozenset[str], int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                schema, freq = line.rsplit("\t", 1)
                key = frozenset(h for h in schema.split("|") if h)
                counts[key] = counts.get(key, 0) + int(freq)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad schema line: {exc}") from exc
    return SchemaStats(counts)


def schema_stats_from_tables(tables: Iterable[Table]) -> dict[frozenset[str], int]:
    counts: dict[frozenset[str], int] = defaultdict(int)
    for t in tables:
        key = frozenset(normalize_label(h) for h in t.headings if h.strip())
        if key:
            counts[key] += 1
    return dict(counts)


def write_schema_stats(counts: dict[frozenset[str], int], path: str | Path) -> None:
    lines = sorted("|".join(sorted(s)) + f"\t{n}" for s, n in counts.items())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Queries, qrels and page signals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    subset: str = ""


class QuerySet(dict):
    """Maps query id to :class:`Query`, in file order."""


Qrels = dict  # query id -> {table id -> grade}


def load_queries(path: str | Path) -> QuerySet:
    qs = QuerySet()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected queryId<TAB>subset<TAB>text")
            qid, subset, text = parts
            qs[qid] = Query(qid, text, subset)
    return qs


def write_queries(queries: Iterable[Query], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(f"{q.id}\t{q.subset}\t{q.text}\n")


def load_qrels(path: str | Path) -> Qrels:
    qrels: Qrels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 'queryId 0 tableId grade'")
            qid, _, tid, grade = parts
            g = int(float(grade))
            if g not in (0, 1, 2):
                raise DataError(f"{path}:{lineno}: grade {grade} outside {{0,1,2}}")
            qrels.setdefault(qid, {})[tid] = g
    return qrels


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, judged in qrels.items():
            for tid, g in judged.items():
                fh.write(f"{qid} 0 {tid} {g}\n")


@dataclass(frozen=True)
class PageSignals:
    inLinks: int = 0
    outLinks: int = 0
    pageViews: int = 0
    tablesOnPage: int = 1
    pageSizeChars: int = 0


SIGNAL_FIELDS = ("inLinks", "outLinks", "pageViews", "tablesOnPage", "pageSizeChars")


def load_signals(path: str | Path) -> dict[str, PageSignals]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), 1):
            if not row or not row[0].strip():
                continue
            if len(row) != 6:
                raise DataError(f"{path}:{lineno}: expected 6 tab-separated columns")
            try:
                vals = [int(float(v)) for v in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            out[row[0]] = PageSignals(*vals)
    return out


def write_signals(signals: dict[str, PageSignals], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tid, s in signals.items():
            fh.write("\t".join([tid] + [str(getattr(s, f)) for f in SIGNAL_FIELDS]) + "\n")


def attach_signals(corpus: TableCorpus, signals: dict[str, PageSignals]) -> TableCorpus:
    """Copy page-level signals onto tables; tables without an entry get the defaults."""
    default = PageSignals()
    out = []
    for t in corpus:
        s = signals.get(t.id, default)
        out.append(replace(t, **{f: getattr(s, f) for f in SIGNAL_FIELDS}))
    return TableCorpus(out, skipped=corpus.skipped, diagnostics=corpus.diagnostics)


def load_yrank(path: str | Path) -> dict[tuple[str, str], int]:
    ranks = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected queryId tableId rank")
            ranks[(parts[0], parts[1])] = int(parts[2])
    return ranks


def write_yrank(ranks: dict[tuple[str, str], int], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (qid, tid), r in ranks.items():
            fh.write(f"{qid}\t{tid}\t{r}\n")
