"""Pointwise learning to rank with a random regression forest.

The forest is a plain CART-style ensemble: bootstrap rows per tree, a
random subset of ``max_features`` candidate features per node, the split
that most reduces the sum of squared errors, grown until leaves are pure.
Each tree draws from its own stream seeded by ``(seed, tree_index)`` so a
forest does not depend on the order its trees are built in.
"""
from __future__ import annotations

import logging
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .evaluation import CUTOFFS, ndcg_at_k

log = logging.getLogger(__name__)

MODEL_MAGIC = b"TABRET-FOREST\n"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    num_trees: int = 1000
    max_features: int = 3
    min_samples_leaf: int = 1
    bootstrap: bool = True
    seed: int = 42

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if self.max_features < 1:
            raise ValueError("max_features must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


class RegressionTree:
    """Array-encoded binary tree; ``feature[i] == -1`` marks a leaf."""

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r, n = rows[active], node[active]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def _split_tolerance(parent_sse: float) -> float:
    return 1e-12 * max(1.0, abs(parent_sse))


def _sample_features(candidates: np.ndarray, k: int, draws: np.ndarray, pos: int) -> np.ndarray:
    """Partial Fisher-Yates over ``candidates`` driven by pre-drawn uniforms."""
    c = candidates.copy()
    m = len(c)
    for j in range(k):
        r = min(j + int(draws[pos + j] * (m - j)), m - 1)
        c[j], c[r] = c[r], c[j]
    return np.sort(c[:k])


def _best_split(Xn: np.ndarray, yn: np.ndarray, features: np.ndarray, min_leaf: int):
    """Best (gain, feature, threshold) over ``features``; None if no valid split."""
    n = len(yn)
    total = np.cumsum(yn)[-1]
    total2 = np.cumsum(yn * yn)[-1]
    parent_sse = total2 - total * total / n
    tol = _split_tolerance(parent_sse)
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    size_ok = (n_left >= min_leaf) & (n_right >= min_leaf)
    best = None
    for f in features:
        order = np.argsort(Xn[:, f], kind="stable")
        xs, ys = Xn[order, f], yn[order]
        cs = np.cumsum(ys)[:-1]
        cs2 = np.cumsum(ys * ys)[:-1]
        sse = (cs2 - cs * cs / n_left) + ((total2 - cs2) - (total - cs) * (total - cs) / n_right)
        valid = size_ok & (xs[:-1] < xs[1:])
        if not valid.any():
            continue
        sse = np.where(valid, sse, np.inf)
        # first position within rounding of the minimum -> smallest threshold
        i = int(np.flatnonzero(sse <= sse.min() + tol)[0])
        gain = parent_sse - sse[i]
        if best is None or gain > best[0] + tol:
            thr = 0.5 * (xs[i] + xs[i + 1])
            if not thr < xs[i + 1]:
                thr = xs[i]
            best = (gain, int(f), float(thr))
    return best


def _grow_reference(X, y, rows, draws, max_features, min_leaf):
    """Straightforward numpy tree growth; the compiled kernel must match it."""
    p = X.shape[1]
    idx = rows.copy()
    importance = np.zeros(p)
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [np.cumsum(y[idx])[-1] / len(idx)]
    stack = [(0, 0, len(idx))]
    pos = 0
    while stack:
        node, s, e = stack.pop()
        sub = idx[s:e]
        yn = y[sub]
        if e - s < 2 * min_leaf or yn.max() == yn.min():
            continue
        Xn = X[sub]
        candidates = np.flatnonzero(Xn.max(axis=0) > Xn.min(axis=0))
        if len(candidates) == 0:
            continue
        k = min(max_features, len(candidates))
        chosen = _sample_features(candidates, k, draws, pos)
        pos += k
        split = _best_split(Xn, yn, chosen, min_leaf)
        if split is None:
            continue
        gain, f, thr = split
        mask = Xn[:, f] <= thr
        li, ri = sub[mask], sub[~mask]
        idx[s:e] = np.concatenate([li, ri])
        mid = s + len(li)
        importance[f] += max(gain, 0.0)
        feature[node], threshold[node] = f, thr
        for part in (li, ri):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(np.cumsum(y[part])[-1] / len(part))
        left[node], right[node] = len(feature) - 2, len(feature) - 1
        stack.append((right[node], mid, e))
        stack.append((left[node], s, mid))
    return RegressionTree(feature, threshold, left, right, value), importance


def grow_tree(X: np.ndarray, y: np.ndarray, cfg: ForestConfig, rng: np.random.Generator, compiled: bool = True):
    """Fit one tree; returns the tree and its per-feature SSE decrease."""
    n = len(X)
    rows = rng.integers(0, n, n) if cfg.bootstrap else np.arange(n)
    draws = rng.random(2 * n * cfg.max_features + cfg.max_features)
    if compiled and _kernel is not None:
        feature, threshold, left, right, value, importance = _kernel(
            X, y, rows.astype(np.int64), draws, cfg.max_features, cfg.min_samples_leaf
        )
        return RegressionTree(feature, threshold, left, right, value), importance
    return _grow_reference(X, y, rows, draws, cfg.max_features, cfg.min_samples_leaf)


try:
    from ._forest_kernel import grow_kernel as _kernel
except ImportError:  # numba unavailable
    _kernel = None


class RegressionForest:
    def __init__(self, trees: list[RegressionTree], raw_importance: np.ndarray, n_features: int, cfg: ForestConfig):
        self.trees = trees
        self.n_features = n_features
        self.config = cfg
        total = raw_importance.sum()
        self.feature_importances = raw_importance / total if total > 0 else np.zeros(n_features)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.zeros(len(X))
        for tree in self.trees:
            out += tree.predict(X)
        out /= len(self.trees)
        return out[0] if single else out


def train_forest(X, y, cfg: ForestConfig = ForestConfig(), compiled: bool = True) -> RegressionForest:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0 or X.shape[1] == 0:
        raise ValueError("training data is empty")
    if len(y) != len(X):
        raise ValueError("X and y are not aligned")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("training data contains missing or non-finite values")
    if cfg.max_features > X.shape[1]:
        cfg = ForestConfig(cfg.num_trees, X.shape[1], cfg.min_samples_leaf, cfg.bootstrap, cfg.seed)
    trees, raw = [], np.zeros(X.shape[1])
    for t in range(cfg.num_trees):
        tree, imp = grow_tree(X, y, cfg, np.random.default_rng([cfg.seed, t]), compiled)
        trees.append(tree)
        raw += imp
    return RegressionForest(trees, raw, X.shape[1], cfg)


def predict(forest: RegressionForest, x) -> float | np.ndarray:
    return forest.predict(x)


def save_forest(forest: RegressionForest, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(MODEL_VERSION.to_bytes(2, "big"))
        pickle.dump(forest, fh, protocol=4)


def load_forest(path: str | Path) -> RegressionForest:
    with open(path, "rb") as fh:
        if fh.read(len(MODEL_MAGIC)) != MODEL_MAGIC:
            raise ValueError(f"{path} is not a forest snapshot")
        version = int.from_bytes(fh.read(2), "big")
        if version != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        return pickle.load(fh)


def write_importances(names: Sequence[str], importances: Sequence[float], path: str | Path) -> None:
    pairs = sorted(zip(names, importances), key=lambda x: (-x[1], x[0]))
    with open(path, "w", encoding="utf-8") as fh:
        for name, imp in pairs:
            fh.write(f"{name}\t{imp:.6f}\n")


# ---------------------------------------------------------------------------
# Query-level cross-validation
# ---------------------------------------------------------------------------


@dataclass
class FeatureMatrix:
    """One row per (query, table) pair."""

    names: list[str]
    query_ids: list[str]
    table_ids: list[str]
    X: np.ndarray
    y: np.ndarray

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        missing = [n for n in names if n not in self.names]
        if missing:
            raise KeyError(f"unknown features: {missing}")
        cols = [self.names.index(n) for n in names]
        return FeatureMatrix(list(names), self.query_ids, self.table_ids, self.X[:, cols], self.y)

    def qrels(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for q, t, g in zip(self.query_ids, self.table_ids, self.y):
            out.setdefault(q, {})[t] = int(g)
        return out


def query_folds(query_ids: Sequence[str], folds: int, seed: int) -> list[list[str]]:
    """Shuffle distinct query ids with ``seed`` and deal them into ``folds`` parts."""
    qids = sorted(set(query_ids))
    if len(qids) < folds:
        raise ValueError(f"{len(qids)} queries cannot fill {folds} folds")
    order = np.random.default_rng(seed).permutation(len(qids))
    return [sorted(qids[i] for i in part) for part in np.array_split(order, folds)]


@dataclass
class CVResult:
    ndcg: dict[int, dict[str, float]]  # k -> qid -> mean over runs
    run_ndcg: list[dict[int, dict[str, float]]]
    rankings: list[dict[str, list[tuple[str, float]]]]  # per run
    splits: list[tuple[int, int, frozenset, frozenset]] = field(default_factory=list)  # run, fold, train, test
    importances: np.ndarray | None = None

    def mean(self, k: int = 20) -> float:
        vals = self.ndcg[k]
        return float(np.mean(list(vals.values()))) if vals else 0.0


def cross_validate(
    data: FeatureMatrix,
    folds: int = 5,
    runs: int = 5,
    cfg: ForestConfig = ForestConfig(),
    qrels: Mapping[str, Mapping[str, int]] | None = None,
    cutoffs: Sequence[int] = CUTOFFS,
    gain: str = "exponential",
) -> CVResult:
    """Repeated query-level k-fold CV; run ``r`` uses seed ``cfg.seed + r`` for folds and trees."""
    qrels = qrels if qrels is not None else data.qrels()
    qarr = np.asarray(data.query_ids)
    run_ndcg, rankings, splits = [], [], []
    importances = np.zeros(len(data.names))
    for r in range(runs):
        seed = cfg.seed + r
        parts = query_folds(data.query_ids, folds, seed)
        run_cfg = ForestConfig(cfg.num_trees, cfg.max_features, cfg.min_samples_leaf, cfg.bootstrap, seed)
        scored: dict[str, list[tuple[str, float]]] = {}
        for f, test_q in enumerate(parts):
            test_set = frozenset(test_q)
            train_set = frozenset(q for q in set(data.query_ids) if q not in test_set)
            splits.append((r, f, train_set, test_set))
            test_mask = np.isin(qarr, list(test_set))
            forest = train_forest(data.X[~test_mask], data.y[~test_mask], run_cfg)
            importances += forest.feature_importances
            preds = forest.predict(data.X[test_mask])
            for q, t, s in zip(qarr[test_mask], np.asarray(data.table_ids)[test_mask], preds):
                scored.setdefault(str(q), []).append((str(t), float(s)))
        ranked = {q: sorted(v, key=lambda x: (-x[1], x[0])) for q, v in scored.items()}
        rankings.append(ranked)
        run_ndcg.append(
            {k: {q: ndcg_at_k([t for t, _ in v], qrels.get(q, {}), k, gain) for q, v in ranked.items()} for k in cutoffs}
        )
        log.info("run %d: mean ndcg@%d = %.4f", r, cutoffs[-1], np.mean(list(run_ndcg[-1][cutoffs[-1]].values())))
    qids = sorted(run_ndcg[0][cutoffs[0]])
    ndcg = {k: {q: float(np.mean([rn[k][q] for rn in run_ndcg])) for q in qids} for k in cutoffs}
    total = importances.sum()
    return CVResult(ndcg, run_ndcg, rankings, splits, importances / total if total > 0 else importances)
