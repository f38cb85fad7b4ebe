import csv
import filecmp
import json

import pytest

from tabret.cli import main
from tabret.corpus import load_corpus, load_kb, load_queries
from tabret.features import BASELINE_FEATURES
from tabret.fixtures import FILES, FixtureScale, generate
from tabret.pipeline import ALL_FEATURES, feature_subset, semantic_grid_subsets
from tabret.retrieval import EntityRetriever
from tabret.semantic import SEMANTIC_FEATURES, SemanticMatcher


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["fixtures", "--out", str(d / "fx"), "--seed", "42"]) == 0
    return d


def conf(workdir):
    return str(workdir / "fx" / "tabret.conf")


def test_fixture_defaults(workdir):
    fx = workdir / "fx"
    assert len(load_corpus(fx / FILES["corpus"])) == 200
    assert len(load_queries(fx / FILES["queries"])) == 20
    assert len(load_kb(fx / FILES["kb"])) == 60


def test_fixtures_byte_identical(workdir):
    assert main(["fixtures", "--out", str(workdir / "again"), "--seed", "42"]) == 0
    for name in [*FILES.values(), "tabret.conf"]:
        assert filecmp.cmp(workdir / "fx" / name, workdir / "again" / name, shallow=False), name
    assert main(["fixtures", "--out", str(workdir / "other"), "--seed", "7"]) == 0
    assert not filecmp.cmp(workdir / "fx" / FILES["corpus"], workdir / "other" / FILES["corpus"], shallow=False)


def test_planted_pairs_share_an_entity_dimension(resources):
    fx = generate(FixtureScale(), 42)
    matcher = SemanticMatcher(resources.kb, EntityRetriever(resources.entity_index), resources.table_index)
    for qid, tables in fx.planted.items():
        qvecs = matcher.query_representation(resources.queries[qid].text)["Entity"][0]
        qdims = set().union(*(v.payload for v in qvecs))
        for tid in tables:
            tvecs = matcher.table_representation(resources.corpus[tid])["Entity"][0]
            tdims = set().union(*(v.payload for v in tvecs))
            assert qdims & tdims, (qid, tid)
    assert len(fx.disjoint) == 20 * 2


def test_index_writes_snapshots_deterministically(workdir, capsys):
    out = workdir / "fx" / "out"
    assert main(["index", "--config", conf(workdir)]) == 0
    line = capsys.readouterr().out
    assert "200 tables" in line and "60 entities" in line
    first = (out / "table_index.bin").read_bytes()
    assert main(["index", "--config", conf(workdir)]) == 0
    assert (out / "table_index.bin").read_bytes() == first


def test_missing_corpus_path(workdir, capsys):
    assert main(["index", "--config", conf(workdir), "--corpus", str(workdir / "nope.jsonl")]) != 0
    assert "nope.jsonl" in capsys.readouterr().err


def test_missing_config(workdir, capsys):
    assert main(["index", "--config", str(workdir / "none.conf")]) != 0
    assert "none.conf" in capsys.readouterr().err


def test_search(workdir, capsys):
    assert main(["index", "--config", conf(workdir)]) == 0
    capsys.readouterr()
    corpus = load_corpus(workdir / "fx" / FILES["corpus"])
    # a table id token occurs in no text, so use a filler word unique to one table
    counts = {}
    for t in corpus:
        for w in set(t.pageTitle.split()):
            counts.setdefault(w, []).append(t.id)
    word, (tid,) = next((w, ids) for w, ids in sorted(counts.items()) if len(ids) == 1)
    assert main(["search", word, "--config", conf(workdir), "--method", "lm", "--field", "pageTitle"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split()[:4] == ["q", "Q0", tid, "1"]
    assert len(lines) == 1
    assert main(["search", "mifu kaitru", "--config", conf(workdir)]) == 0
    assert len(capsys.readouterr().out.splitlines()) <= 20


def test_search_unknown_method(workdir):
    with pytest.raises(SystemExit) as exc:
        main(["search", "x", "--config", conf(workdir), "--method", "bm25"])
    assert exc.value.code == 2


def test_features_train_report(workdir, capsys):
    out = workdir / "fx" / "out"
    assert main(["features", "--config", conf(workdir)]) == 0
    with open(out / "features.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["queryId", "tableId", "grade", *ALL_FEATURES]
    qrels_lines = (workdir / "fx" / FILES["qrels"]).read_text().splitlines()
    assert len(rows) - 1 == len(qrels_lines)
    first = (out / "features.csv").read_bytes()
    assert main(["features", "--config", conf(workdir)]) == 0
    assert (out / "features.csv").read_bytes() == first
    weights = json.loads((out / "mlm_weights.json").read_text())
    assert sum(weights["weights"].values()) == pytest.approx(1.0)

    small = ["--trees", "5", "--runs", "1", "--config", conf(workdir)]
    assert main(["train", "--subset", "all", *small]) == 0
    summary = json.loads((out / "report_all.json").read_text())
    assert set(summary["means"]) == {"LTR", "STR", "LM", "MLM"}
    assert set(summary["means"]["STR"]) == {"ndcg@5", "ndcg@10", "ndcg@15", "ndcg@20"}
    assert set(summary["p_values"]) == {"STR", "LM", "MLM"}
    imp = (out / "report_all_STR_importance.tsv").read_text().splitlines()
    assert len(imp) == 39
    assert len((out / "report_all_LTR_importance.tsv").read_text().splitlines()) == 23

    assert main(["train", "--subset", "Entity_Early", "--name", "EE", *small]) == 0
    assert len((out / "EE_EE_importance.tsv").read_text().splitlines()) == 24

    capsys.readouterr()
    assert main(["report", "--config", conf(workdir), "--run", f"LM={out / 'run_lm.txt'}", "--run", f"MLM={out / 'run_mlm.txt'}"]) == 0
    assert "MLM" in capsys.readouterr().out
    assert (out / "report.tsv").exists()


def test_feature_subsets():
    assert len(feature_subset("baseline")) == 23
    assert len(feature_subset("all")) == 39
    assert feature_subset("semantic") == list(SEMANTIC_FEATURES)
    assert feature_subset("Entity_Early") == [*BASELINE_FEATURES, "Entity_Early"]
    with pytest.raises(ValueError):
        feature_subset("Nope_Early")
    grid = semantic_grid_subsets()
    assert len(grid) == 1 + 4 * 5 + 5
    assert len(grid["ALL_ALL"]) == 39 and len(grid["Word_ALL"]) == 27
