import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tabret.ltr import (
    FeatureMatrix,
    ForestConfig,
    RegressionForest,
    RegressionTree,
    _grow_reference,
    _kernel,
    cross_validate,
    grow_tree,
    load_forest,
    predict,
    query_folds,
    save_forest,
    train_forest,
    write_importances,
)


def linear_data(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, size=(n, 2))
    return X, 3.0 * X[:, 0]


def leaf(value):
    return RegressionTree([-1], [0.0], [-1], [-1], [value])


def test_constant_target():
    X = np.random.default_rng(1).normal(size=(30, 3))
    forest = train_forest(X, np.full(30, 1.5), ForestConfig(num_trees=10))
    assert np.all(forest.predict(X) == 1.5)
    assert np.all(forest.feature_importances == 0)


def test_importance_prefers_signal_and_sums_to_one():
    X, y = linear_data()
    forest = train_forest(X, y, ForestConfig(num_trees=50, max_features=2))
    imp = forest.feature_importances
    assert imp[0] > imp[1]
    assert imp.sum() == pytest.approx(1.0, abs=1e-9)


def test_same_seed_same_forest():
    X, y = linear_data()
    a = train_forest(X, y, ForestConfig(num_trees=20, seed=7)).predict(X)
    b = train_forest(X, y, ForestConfig(num_trees=20, seed=7)).predict(X)
    c = train_forest(X, y, ForestConfig(num_trees=20, seed=8)).predict(X)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_prediction_is_mean_of_trees():
    forest = RegressionForest([leaf(1.0), leaf(3.0)], np.zeros(2), 2, ForestConfig(num_trees=2))
    assert predict(forest, [0.3, 0.4]) == 2.0
    single = RegressionForest([leaf(4.25)], np.zeros(2), 2, ForestConfig(num_trees=1))
    assert predict(single, [0.0, 0.0]) == 4.25
    with pytest.raises(ValueError):
        forest.predict([1.0, 2.0, 3.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_predictions_within_target_range(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 4))
    y = rng.integers(0, 3, 40).astype(float)
    forest = train_forest(X, y, ForestConfig(num_trees=5, seed=seed))
    p = forest.predict(rng.normal(size=(20, 4)) * 3)
    assert p.min() >= y.min() and p.max() <= y.max()


def test_single_tree_without_bootstrap_fits_exactly():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(60, 3))
    y = rng.normal(size=60)
    forest = train_forest(X, y, ForestConfig(num_trees=1, max_features=3, bootstrap=False))
    assert np.array_equal(forest.predict(X), y)


@pytest.mark.skipif(_kernel is None, reason="numba not installed")
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3))
def test_compiled_growth_matches_reference(seed, max_features, min_leaf):
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(50, 4)), 1)  # rounding creates tied values
    y = rng.integers(0, 3, 50).astype(float)
    cfg = ForestConfig(num_trees=1, max_features=max_features, min_samples_leaf=min_leaf)
    fast, fast_imp = grow_tree(X, y, cfg, np.random.default_rng([seed, 0]), compiled=True)
    slow, slow_imp = grow_tree(X, y, cfg, np.random.default_rng([seed, 0]), compiled=False)
    for name in ("feature", "threshold", "left", "right", "value"):
        assert np.array_equal(getattr(fast, name), getattr(slow, name)), name
    assert np.array_equal(fast_imp, slow_imp)


def test_tie_break_prefers_lowest_feature():
    # two identical columns: the split must use column 0
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    tree, _ = grow_tree(X, y, ForestConfig(num_trees=1, max_features=2, bootstrap=False), np.random.default_rng(0))
    assert tree.feature[0] == 0
    assert tree.threshold[0] == 1.5


def test_min_samples_leaf_respected():
    X, y = linear_data(100)
    tree, _ = grow_tree(X, y, ForestConfig(num_trees=1, min_samples_leaf=7, bootstrap=False), np.random.default_rng(0))
    counts = np.bincount(tree.apply(X), minlength=tree.node_count)
    leaves = tree.feature == -1
    assert counts[leaves].min() >= 7


def test_bad_training_data():
    with pytest.raises(ValueError):
        train_forest(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ValueError):
        train_forest(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        train_forest(np.array([[np.nan, 1.0]]), np.zeros(1))


def test_forest_snapshot_and_importance_file(tmp_path):
    X, y = linear_data(80)
    forest = train_forest(X, y, ForestConfig(num_trees=5))
    save_forest(forest, tmp_path / "m.bin")
    assert np.array_equal(load_forest(tmp_path / "m.bin").predict(X), forest.predict(X))
    write_importances(["x1", "x2"], forest.feature_importances, tmp_path / "imp.tsv")
    first = (tmp_path / "imp.tsv").read_text().splitlines()[0]
    assert first.startswith("x1\t")


def test_query_folds_partition_and_determinism():
    qids = [f"q{i:02d}" for i in range(23)]
    parts = query_folds(qids * 3, 5, 11)
    assert sorted(q for p in parts for q in p) == qids
    assert all(4 <= len(p) <= 5 for p in parts)
    assert parts == query_folds(qids, 5, 11)
    assert parts != query_folds(qids, 5, 12)
    with pytest.raises(ValueError):
        query_folds(qids[:3], 5, 0)


def toy_matrix(n_queries=10, per_query=6, seed=0):
    rng = np.random.default_rng(seed)
    qids, tids, ys = [], [], []
    for q in range(n_queries):
        for t in range(per_query):
            qids.append(f"q{q}")
            tids.append(f"t{q}_{t}")
            ys.append(float(rng.integers(0, 3)))
    y = np.array(ys)
    X = np.column_stack([y, rng.normal(size=len(y))])
    return FeatureMatrix(["oracle", "noise"], qids, tids, X, y)


def test_perfect_feature_gives_perfect_ndcg():
    data = toy_matrix().select(["oracle"])
    cv = cross_validate(data, folds=5, runs=2, cfg=ForestConfig(num_trees=10))
    for q, v in cv.ndcg[20].items():
        if any(data.qrels()[q].values()):
            assert v == pytest.approx(1.0)


def test_cv_has_no_leakage_and_covers_every_query():
    data = toy_matrix()
    cv = cross_validate(data, folds=5, runs=3, cfg=ForestConfig(num_trees=3))
    all_q = set(data.query_ids)
    for r in range(3):
        tests = [s for s in cv.splits if s[0] == r]
        assert len(tests) == 5
        for _, _, train, test in tests:
            assert not (train & test)
            assert train | test == all_q
        seen = [q for *_, test in tests for q in test]
        assert sorted(seen) == sorted(all_q)
    assert set(cv.rankings[0]) == all_q


def test_select_unknown_feature():
    with pytest.raises(KeyError):
        toy_matrix().select(["nope"])
