import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_table
from tabret.corpus import (
    DataError,
    EntityRecord,
    KnowledgeBase,
    PageSignals,
    Query,
    SchemaStats,
    Table,
    TableCell,
    TableCorpus,
    attach_signals,
    catch_all_text,
    load_corpus,
    load_embeddings,
    load_kb,
    load_qrels,
    load_queries,
    load_schema_stats,
    load_signals,
    load_yrank,
    resolve_entities,
    write_corpus,
    write_embeddings,
    write_kb,
    write_qrels,
    write_queries,
    write_schema_stats,
    write_signals,
    write_yrank,
)
from tabret.text import normalize_label, tokenize


def record(tid, rows=(("a", "b"),), **kw):
    rec = {
        "id": tid,
        "pageTitle": kw.get("pageTitle", ""),
        "sectionTitle": "",
        "caption": kw.get("caption", ""),
        "headings": kw.get("headings", ["h1", "h2"]),
        "rows": [[{"text": c} if not isinstance(c, dict) else c for c in r] for r in rows],
        "numHeaderRows": 1,
    }
    return json.dumps(rec)


def test_tokenizer():
    assert tokenize("Video-Games, 2017!") == ["video", "games", "2017"]
    assert tokenize("a_b") == ["a", "b"]
    assert tokenize("") == [] and tokenize(None) == []
    assert normalize_label("  Year  Founded ") == "year founded"


def test_load_three_records(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text("\n".join(record(f"t{i}") for i in range(3)) + "\n")
    corpus = load_corpus(p)
    assert len(corpus) == 3
    assert corpus.ids() == ["t0", "t1", "t2"]


def test_ragged_record_skipped_with_warning(tmp_path, caplog):
    p = tmp_path / "c.jsonl"
    p.write_text(record("ok") + "\n" + record("bad", rows=(("a", "b", "c"), ("a", "b")), headings=["x", "y", "z"]) + "\n")
    corpus = load_corpus(p)
    assert corpus.ids() == ["ok"]
    assert corpus.skipped == 1
    assert any("bad" in r.message or "unequal" in r.message for r in caplog.records)


def test_unreadable_corpus(tmp_path):
    with pytest.raises(DataError):
        load_corpus(tmp_path / "missing.jsonl")


def test_table_rejects_ragged_rows():
    with pytest.raises(DataError):
        make_table(rows=[["a", "b"], ["c"]])


def test_resolution_keeps_known_and_demotes_unknown():
    kb = KnowledgeBase([EntityRecord("e1")])
    t = make_table(rows=[[("Alpha", "e1"), ("Beta", "e9")]])
    (out,), stats = resolve_entities(TableCorpus([t]), kb)
    assert out.body[0][0] == TableCell("Alpha", "e1")
    assert out.body[0][1] == TableCell("Beta", None)
    assert (stats.resolved, stats.demoted) == (1, 1)


def test_resolution_identity_without_links():
    t = make_table(rows=[["a", "b"]])
    (out,), _ = resolve_entities(TableCorpus([t]), KnowledgeBase([]))
    assert out is t


def test_resolution_idempotent(fixture_paths):
    kb = load_kb(fixture_paths["kb"])
    corpus = load_corpus(fixture_paths["corpus"])
    # add a table with a dangling link so the first pass changes something
    corpus = TableCorpus([*corpus, make_table("dangling", rows=[[("x", "<dbpedia:Nope>")]])])
    once, _ = resolve_entities(corpus, kb)
    twice, stats = resolve_entities(once, kb)
    assert once == twice
    assert stats.demoted == 0


def test_catch_all_text_examples():
    t = make_table(rows=[["c"]], headings=["b"], caption="a")
    assert catch_all_text(t) == "a b c"
    assert catch_all_text(Table("empty")) == ""
    assert catch_all_text(Table("o", pageTitle="p", caption="c")) == "p c"


@given(st.lists(st.lists(st.text(max_size=8), min_size=2, max_size=2), min_size=1, max_size=4))
def test_catch_all_contains_cells(rows):
    t = make_table(rows=rows)
    text = catch_all_text(t)
    for row in rows:
        for cell in row:
            if cell.strip():
                assert cell in text


def test_corpus_round_trip(fixture_paths, tmp_path):
    corpus = load_corpus(fixture_paths["corpus"])
    write_corpus(corpus, tmp_path / "again.jsonl")
    assert load_corpus(tmp_path / "again.jsonl") == corpus


def test_kb_round_trip_and_links(tmp_path):
    recs = [
        EntityRecord("e1", names=("One",), categories=frozenset({"c1"}), outLinks=frozenset({"e2", "ghost"})),
        EntityRecord("e2", names=("Two",)),
    ]
    write_kb(recs, tmp_path / "kb.jsonl")
    kb = load_kb(tmp_path / "kb.jsonl")
    assert list(kb) == recs
    assert kb.in_links("e2") == {"e1"}
    assert kb.related("e2") == {"e1", "e2"}
    assert kb.related("e1") == {"e1", "e2", "ghost"}  # dangling target kept


def test_embeddings_plain_and_header(tmp_path):
    p = tmp_path / "v.txt"
    p.write_text("a 1 2 3\nb 4 5 6\n")
    store = load_embeddings(p)
    assert store.dimension == 3 and len(store) == 2
    np.testing.assert_array_equal(store.get("b"), [4, 5, 6])
    assert store.get("zzz") is None
    p.write_text("2 3\na 1 2 3\nb 4 5 6\n")
    assert len(load_embeddings(p, expected_dim=3)) == 2


def test_embeddings_dimension_mismatch_names_line(tmp_path):
    p = tmp_path / "v.txt"
    p.write_text("a 1 2 3\nb 4 5\n")
    with pytest.raises(DataError, match=":2"):
        load_embeddings(p)


def test_embeddings_round_trip(tmp_path):
    items = [("x", np.array([0.5, -1.25])), ("y", np.array([1e-7, 3.0]))]
    write_embeddings(items, tmp_path / "e.txt")
    store = load_embeddings(tmp_path / "e.txt")
    for tok, vec in items:
        np.testing.assert_array_equal(store.get(tok), vec)


def test_schema_stats_round_trip(tmp_path):
    counts = {frozenset({"a", "b"}): 2, frozenset({"a"}): 1}
    write_schema_stats(counts, tmp_path / "s.tsv")
    stats = load_schema_stats(tmp_path / "s.tsv")
    assert stats.totalCount == 3
    assert stats.headingCounts == {"a": 3, "b": 2}
    assert stats.joint_count("b", "a") == 2
    assert SchemaStats().totalCount == 0


def test_queries_qrels_signals_yrank_round_trip(tmp_path):
    qs = [Query("q1", "video games", "QS-1"), Query("q2", "us cities", "QS-2")]
    write_queries(qs, tmp_path / "q.tsv")
    loaded = load_queries(tmp_path / "q.tsv")
    assert loaded["q1"].text == "video games" and loaded["q2"].subset == "QS-2"

    qrels = {"q1": {"t1": 2, "t2": 0}}
    write_qrels(qrels, tmp_path / "qrels.txt")
    assert load_qrels(tmp_path / "qrels.txt") == qrels

    sig = {"t1": PageSignals(1, 2, 3, 4, 5)}
    write_signals(sig, tmp_path / "sig.tsv")
    assert load_signals(tmp_path / "sig.tsv") == sig

    yr = {("q1", "t1"): 3}
    write_yrank(yr, tmp_path / "y.tsv")
    assert load_yrank(tmp_path / "y.tsv") == yr


def test_bad_qrels_grade(tmp_path):
    p = tmp_path / "qrels.txt"
    p.write_text("q1 0 t1 5\n")
    with pytest.raises(DataError):
        load_qrels(p)


def test_attach_signals_defaults():
    corpus = TableCorpus([Table("t1"), Table("t2")])
    out = attach_signals(corpus, {"t1": PageSignals(10, 0, 0, 4, 100)})
    assert out["t1"].tablesOnPage == 4 and out["t1"].inLinks == 10
    assert out["t2"].tablesOnPage == 1 and out["t2"].pageViews == 0
