"""Quantile regression forest.

CART trees grown on bootstrap samples with variance-reduction splits.
Each leaf keeps the (in-bag) training responses that reached it, and a
conditional quantile is read off the forest-averaged weighted empirical
CDF of those responses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .data import IntervalModel, ReplicatedDataset, as_points


@dataclass(frozen=True)
class QRFConfig:
    n_trees: int = 100
    min_leaf: int = 5
    bootstrap: bool = True
    max_features: int | None = None  # None: try every feature at every split
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be at least 1")


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_index: np.ndarray  # node -> row of ``leaves`` (-1 for internal nodes)
    leaves: sparse.csr_matrix  # (n_leaves, n_train) normalized member weights

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while np.any(active):
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active[idx] = self.feature[node[idx]] >= 0
        return self.leaf_index[node]


def _best_split(X, y, min_leaf, features):
    n = len(y)
    best = (0.0, None, None)
    total = y.sum()
    base = total * total / n
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        csum = np.cumsum(ys)[:-1]
        nl = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not np.any(valid):
            continue
        gain = csum**2 / nl + (total - csum) ** 2 / (n - nl) - base
        gain = np.where(valid, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[0] + 1e-12 * max(1.0, abs(base)):
            best = (gain[k], f, 0.5 * (xs[k] + xs[k + 1]))
    return best[1], best[2]


def _grow(X, y, sample, n_train, cfg, rng) -> Tree:
    feature, threshold, left, right, leaf_index = [], [], [], [], []
    rows, cols, vals = [], [], []
    d = X.shape[1]

    def new_node():
        for arr, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (leaf_index, -1)):
            arr.append(v)
        return len(feature) - 1

    stack = [(new_node(), sample)]
    while stack:
        node, idx = stack.pop()
        ys = y[idx]
        f = t = None
        if len(idx) >= 2 * cfg.min_leaf and np.ptp(ys) > 0:
            feats = np.arange(d)
            if cfg.max_features is not None and cfg.max_features < d:
                feats = rng.choice(d, cfg.max_features, replace=False)
            f, t = _best_split(X[idx], ys, cfg.min_leaf, feats)
        if f is None:
            leaf = len(rows)
            leaf_index[node] = leaf
            members, counts = np.unique(idx, return_counts=True)
            rows.append(np.full(len(members), leaf))
            cols.append(members)
            vals.append(counts / counts.sum())
            continue
        mask = X[idx, f] <= t
        feature[node], threshold[node] = f, t
        left[node], right[node] = new_node(), new_node()
        stack.append((right[node], idx[~mask]))
        stack.append((left[node], idx[mask]))

    n_leaves = len(rows)
    leaves = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_leaves, n_train))
    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                np.array(leaf_index), leaves)


@dataclass(frozen=True, eq=False)
class QRFModel:
    trees: tuple
    y_train: np.ndarray
    config: QRFConfig

    def weights(self, X) -> np.ndarray:
        """Forest weights over training samples, shape (n_query, n_train)."""
        X = as_points(X)
        W = sparse.csr_matrix((X.shape[0], len(self.y_train)))
        for tree in self.trees:
            W = W + tree.leaves[tree.apply(X)]
        return W.toarray() / len(self.trees)

    def quantiles(self, X, qs) -> np.ndarray:
        """Left-continuous inverse of the weighted CDF; shape (n_query, len(qs))."""
        qs = np.atleast_1d(np.asarray(qs, dtype=float))
        W = self.weights(X)
        order = np.argsort(self.y_train, kind="stable")
        cdf = np.cumsum(W[:, order], axis=1)
        cdf /= cdf[:, -1:]
        ys = self.y_train[order]
        out = np.empty((W.shape[0], len(qs)))
        for k, q in enumerate(qs):
            pos = np.argmax(cdf >= q - 1e-12, axis=1)
            out[:, k] = ys[pos]
        return out


def fit_qrf(X, y, cfg: QRFConfig = QRFConfig()) -> QRFModel:
    """Grow ``cfg.n_trees`` trees on the flattened (x, y) pairs."""
    X = as_points(X)
    y = np.asarray(y, dtype=float).ravel()
    n = len(y)
    if X.shape[0] != n:
        raise ValueError(f"{X.shape[0]} inputs but {n} responses")
    if n < 2 * cfg.min_leaf:
        raise ValueError(f"too few samples: {n} < 2 * min_leaf = {2 * cfg.min_leaf}")
    rng = np.random.default_rng(cfg.seed)
    trees = []
    for _ in range(cfg.n_trees):
        sample = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        trees.append(_grow(X, y, sample, n, cfg, rng))
    return QRFModel(tuple(trees), y, cfg)


def fit_qrf_dataset(data: ReplicatedDataset, cfg: QRFConfig = QRFConfig()) -> QRFModel:
    return fit_qrf(*data.flat(), cfg)


def qrf_quantile(model: QRFModel, x, q: float) -> float:
    return float(model.quantiles(np.atleast_1d(np.asarray(x, dtype=float))[None, :], [q])[0, 0])


def _interval_bounds(model: QRFModel, alpha: float):
    def bounds(X):
        Q = model.quantiles(X, [alpha / 2, 1 - alpha / 2])
        return np.minimum(Q[:, 0], Q[:, 1]), np.maximum(Q[:, 0], Q[:, 1])
    return bounds


def qrf_interval(model: QRFModel, x, alpha: float) -> tuple[float, float]:
    """``[q_{alpha/2}(x), q_{1-alpha/2}(x)]``, endpoints swapped if needed."""
    L, U = _interval_bounds(model, alpha)(np.atleast_1d(np.asarray(x, dtype=float))[None, :])
    return float(L[0]), float(U[0])


def qrf_interval_model(model: QRFModel, alpha: float) -> IntervalModel:
    c = model.config
    return IntervalModel(_interval_bounds(model, alpha),
                         {"method": "QRF", "alpha": alpha, "n_trees": c.n_trees, "min_leaf": c.min_leaf})


class QRFQuantileRegressor:
    """Base quantile learner for conformalized quantile regression."""

    def __init__(self, cfg: QRFConfig = QRFConfig()):
        self.cfg = cfg

    def fit(self, data: ReplicatedDataset, levels, seed: int | None = None):
        cfg = self.cfg if seed is None else QRFConfig(**{**self.cfg.__dict__, "seed": seed})
        model = fit_qrf_dataset(data, cfg)
        lo, hi = levels

        def predict(X):
            Q = model.quantiles(X, [lo, hi])
            return np.minimum(Q[:, 0], Q[:, 1]), np.maximum(Q[:, 0], Q[:, 1])
        return predict
