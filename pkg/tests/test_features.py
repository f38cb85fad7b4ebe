import math

import pytest
from hypothesis import given, strategies as st

from conftest import make_table
from tabret.corpus import SchemaStats, TableCorpus
from tabret.features import (
    BASELINE_FEATURES,
    YRANK_MISSING,
    baseline_features,
    pmi,
    query_features,
    query_table_features,
    table_features,
)
from tabret.index import TABLE_FIELDS, build_table_index, idf
from tabret.retrieval import MLM_TABLE_FIELDS, FieldWeights, score_mlm
from tabret.semantic import SEMANTIC_FEATURES
from tabret.text import tokenize

UNIFORM = FieldWeights.uniform(MLM_TABLE_FIELDS)


def small_index():
    tables = [
        make_table("t1", rows=[["cup", "a"], ["cup", "b"], ["x", ""]], headings=["team", "n"], pageTitle="fifa world cup winners"),
        make_table("t2", rows=[["laptops", "cpu"]], headings=["model", "cpu"], caption="laptops"),
    ]
    return tables, build_table_index(TableCorpus(tables))


def test_feature_name_counts():
    assert len(BASELINE_FEATURES) == 23
    assert len(set(BASELINE_FEATURES)) == 23
    assert len(BASELINE_FEATURES + SEMANTIC_FEATURES) == 39


def test_query_features():
    _, index = small_index()
    f = query_features(tokenize("laptops cpu"), index)
    assert f["QLEN"] == 2
    empty = query_features([], index)
    assert empty["QLEN"] == 0 and all(empty[f"IDF_{x}"] == 0 for x in TABLE_FIELDS)
    one = query_features(["cup"], index)
    for fld in TABLE_FIELDS:
        assert one[f"IDF_{fld}"] == idf(index, fld, "cup")


def test_pmi_examples():
    stats = SchemaStats({frozenset({"a", "b"}): 2, frozenset({"a"}): 2})
    assert pmi(["a", "b"], stats) == pytest.approx(0.0, abs=1e-12)
    even = SchemaStats({frozenset({"a", "b"}): 1, frozenset({"a"}): 1, frozenset({"b"}): 1, frozenset({"c"}): 1})
    assert pmi(["a", "b"], even) == pytest.approx(0.0, abs=1e-12)
    stats = SchemaStats({frozenset({"a", "b"}): 2, frozenset({"a"}): 1, frozenset({"b"}): 1, frozenset({"c"}): 1})
    assert pmi(["a", "b"], stats) == pytest.approx(math.log(0.4 / 0.36), abs=1e-12)
    assert pmi(["a", "b"], stats) == pytest.approx(0.1054, abs=1e-4)
    assert pmi(["a"], stats) == 0.0


def test_pmi_zero_joint_and_unknown_labels():
    stats = SchemaStats({frozenset({"a"}): 1, frozenset({"b"}): 1})
    assert pmi(["a", "b"], stats) == 0.0
    assert pmi(["zz", "yy"], stats) == 0.0
    assert pmi(["a", "b"], SchemaStats()) == 0.0


labels = st.sampled_from(["a", "b", "c", "d"])


@given(st.lists(labels, min_size=0, max_size=6), st.randoms())
def test_pmi_symmetric_and_duplicate_invariant(headings, rnd):
    stats = SchemaStats({frozenset({"a", "b"}): 3, frozenset({"a", "c"}): 1, frozenset({"b", "c", "d"}): 2, frozenset({"d"}): 4})
    shuffled = list(headings)
    rnd.shuffle(shuffled)
    assert pmi(shuffled, stats) == pytest.approx(pmi(headings, stats), abs=1e-12)
    assert pmi(list(dict.fromkeys(headings)), stats) == pytest.approx(pmi(headings, stats), abs=1e-12)


def test_table_features_examples():
    t = make_table(rows=[["a", "b"], ["c", ""], ["e", "f"]], headings=["x", "y"], tablesOnPage=4)
    f = table_features(t, SchemaStats())
    assert (f["#rows"], f["#cols"], f["#NULLs"]) == (3, 2, 1)
    assert f["tableImportance"] == 0.25
    assert f["tablePageFraction"] == 1.0  # page size missing
    sized = make_table(rows=[["abc"]], headings=["h"], pageSizeChars=100)
    assert table_features(sized, SchemaStats())["tablePageFraction"] == pytest.approx(len("h abc") / 100)


def test_query_table_examples():
    tables, index = small_index()
    t1 = tables[0]
    f = query_table_features("q", tokenize("world cup"), t1, index, UNIFORM)
    assert f["qInPgTitle"] == 1.0
    assert f["#hitsLC"] == 2
    assert f["#hitsSLC"] == 0
    assert f["#hitsB"] == 2
    assert f["yRank"] == YRANK_MISSING
    assert f["MLM"] == pytest.approx(score_mlm(["world", "cup"], "t1", index, UNIFORM))
    titled = make_table("t3", rows=[["x"]], headings=["h"], pageTitle="list of cities")
    g = query_table_features("q", tokenize("us cities list"), titled, build_table_index(TableCorpus([titled])), UNIFORM)
    assert g["qInPgTitle"] == pytest.approx(2 / 3)


def test_yrank_lookup():
    tables, index = small_index()
    f = query_table_features("q7", ["cup"], tables[0], index, UNIFORM, {("q7", "t1"): 3})
    assert f["yRank"] == 3


def test_baseline_vector_ranges(resources, mlm_weights):
    ratio = {"qInPgTitle", "qInTableTitle", "tablePageFraction"}
    counts = {"QLEN", "#rows", "#cols", "#NULLs", "inLinks", "outLinks", "pageViews", "#hitsLC", "#hitsSLC", "#hitsB"}
    for qid, q in list(resources.queries.items())[:5]:
        for tid in list(resources.qrels[qid])[:10]:
            vec = baseline_features(qid, q.text, resources.corpus[tid], resources.table_index, resources.stats, mlm_weights, resources.yrank)
            assert len(vec) == 23
            f = dict(zip(BASELINE_FEATURES, vec))
            assert all(0.0 <= f[n] <= 1.0 for n in ratio)
            assert all(f[n] >= 0 for n in counts)
            assert 0.0 < f["tableImportance"] <= 1.0
            assert 1 <= f["yRank"] <= YRANK_MISSING
