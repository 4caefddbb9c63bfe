"""CART trees, bootstrap random forests and exact path-dependent TreeSHAP."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import DataError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
GAIN_TOL = 1e-12


@dataclass(frozen=True)
class TreeParams:
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: Union[None, int, float, str] = None

    def n_candidates(self, n_features: int) -> int:
        mf = self.max_features
        if mf is None:
            return n_features
        if mf == "sqrt":
            return max(1, int(np.sqrt(n_features)))
        if mf == "log2":
            return max(1, int(np.log2(n_features)))
        if isinstance(mf, float) and 0 < mf <= 1:
            return max(1, int(mf * n_features))
        if isinstance(mf, int) and mf >= 1:
            return min(mf, n_features)
        raise DataError(f"invalid max_features {mf!r}")


@dataclass(eq=False)
class DecisionTree:
    """
    Flat binary tree. Node i is a leaf when ``children_left[i] == -1``;
    otherwise samples with ``x[features[i]] <= thresholds[i]`` go left.
    ``values`` holds the class-1 probability of the training samples reaching
    each node and ``node_sample_weight`` their count.
    """

    children_left: np.ndarray
    children_right: np.ndarray
    features: np.ndarray
    thresholds: np.ndarray
    values: np.ndarray
    node_sample_weight: np.ndarray
    n_features: int

    @property
    def n_nodes(self) -> int:
        return int(len(self.values))

    @property
    def max_depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            for child in (self.children_left[i], self.children_right[i]):
                if child >= 0:
                    depth[child] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=int)
        active = self.children_left[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.features[cur]] <= self.thresholds[cur]
            node[idx] = np.where(go_left, self.children_left[cur], self.children_right[cur])
            active = self.children_left[node] >= 0
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.values[self.apply(X)]

    def expected_value(self) -> float:
        """Cover-weighted mean of the leaf values."""
        leaves = self.children_left < 0
        weights = self.node_sample_weight[leaves]
        return float(np.sum(self.values[leaves] * weights) / np.sum(weights))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "children_left": self.children_left.tolist(),
            "children_right": self.children_right.tolist(),
            "features": self.features.tolist(),
            "thresholds": self.thresholds.tolist(),
            "values": self.values.tolist(),
            "node_sample_weight": self.node_sample_weight.tolist(),
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DecisionTree":
        return cls(
            children_left=np.asarray(data["children_left"], dtype=int),
            children_right=np.asarray(data["children_right"], dtype=int),
            features=np.asarray(data["features"], dtype=int),
            thresholds=np.asarray(data["thresholds"], dtype=float),
            values=np.asarray(data["values"], dtype=float),
            node_sample_weight=np.asarray(data["node_sample_weight"], dtype=float),
            n_features=int(data["n_features"]),
        )


def gini(n1: np.ndarray, n: np.ndarray) -> np.ndarray:
    p = n1 / n
    return 2.0 * p * (1.0 - p)


def best_split(
    X: np.ndarray, y: np.ndarray, candidates: Sequence[int], min_samples_leaf: int
) -> Optional[Tuple[int, float, float]]:
    """
    Best (feature, threshold, gain) over midpoints between distinct values.

    Earlier candidates win ties; a zero-gain split is still returned so that
    impure nodes can grow (XOR-like layouts have no first split with gain).
    """
    n = len(y)
    parent = float(gini(np.array(y.sum(), dtype=float), np.array(float(n))))
    best: Optional[Tuple[int, float, float]] = None
    for j in sorted(candidates):
        order = np.argsort(X[:, j], kind="mergesort")
        xs = X[order, j]
        ys = y[order]
        left_n = np.arange(1, n, dtype=float)
        left_1 = np.cumsum(ys)[:-1].astype(float)
        valid = xs[:-1] < xs[1:]
        valid &= (left_n >= min_samples_leaf) & (n - left_n >= min_samples_leaf)
        if not valid.any():
            continue
        right_n = n - left_n
        right_1 = ys.sum() - left_1
        child = (left_n * gini(left_1, left_n) + right_n * gini(right_1, right_n)) / n
        gain = np.where(valid, parent - child, -np.inf)
        k = int(np.argmax(gain))
        if best is None or gain[k] > best[2] + GAIN_TOL:
            threshold = 0.5 * (xs[k] + xs[k + 1])
            # midpoint of adjacent floats can round onto the upper value
            if not threshold < xs[k + 1]:
                threshold = float(xs[k])
            best = (j, float(threshold), float(gain[k]))
    return best


def train_tree(
    X: np.ndarray,
    y: np.ndarray,
    params: Optional[TreeParams] = None,
    rng: Optional[np.random.Generator] = None,
    seed: Optional[int] = None,
) -> DecisionTree:
    """
    Greedy CART with Gini impurity. ``max_features`` candidate features are
    drawn per split from ``rng``; without subsampling the tree does not
    depend on the generator.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("cannot train a tree on an empty matrix")
    if len(y) != X.shape[0]:
        raise DataError(f"{X.shape[0]} rows but {len(y)} labels")
    params = params or TreeParams()
    rng = rng if rng is not None else np.random.default_rng(seed)
    n_features = X.shape[1]
    k = params.n_candidates(n_features)

    left: List[int] = []
    right: List[int] = []
    feats: List[int] = []
    thresh: List[float] = []
    values: List[float] = []
    weights: List[float] = []

    def grow(rows: np.ndarray, depth: int) -> int:
        node = len(values)
        ys = y[rows]
        left.append(-1)
        right.append(-1)
        feats.append(-2)
        thresh.append(-2.0)
        values.append(float(ys.mean()))
        weights.append(float(len(rows)))
        pure = ys.min() == ys.max()
        if pure or len(rows) < params.min_samples_split or (params.max_depth is not None and depth >= params.max_depth):
            return node
        if k < n_features:
            candidates = rng.choice(n_features, size=k, replace=False)
        else:
            candidates = np.arange(n_features)
        split = best_split(X[rows], ys, candidates.tolist(), params.min_samples_leaf)
        if split is None:
            return node
        j, threshold, _ = split
        goes_left = X[rows, j] <= threshold
        feats[node] = j
        thresh[node] = threshold
        left[node] = grow(rows[goes_left], depth + 1)
        right[node] = grow(rows[~goes_left], depth + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return DecisionTree(
        children_left=np.asarray(left, dtype=int),
        children_right=np.asarray(right, dtype=int),
        features=np.asarray(feats, dtype=int),
        thresholds=np.asarray(thresh, dtype=float),
        values=np.asarray(values, dtype=float),
        node_sample_weight=np.asarray(weights, dtype=float),
        n_features=n_features,
    )


@dataclass(eq=False)
class RandomForest:
    """Bootstrap ensemble; the score is the mean class-1 probability of the trees."""

    trees: List[DecisionTree]
    n_features: int
    seed: int
    params: Dict[str, Any]

    @property
    def base_value(self) -> float:
        return float(np.mean([t.expected_value() for t in self.trees]))

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DataError(f"model expects {self.n_features} features, got {X.shape[1]}")
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X)

    def predict(self, X: np.ndarray) -> np.ndarray:
        # p1 == 0.5 is a tie and goes to the lower class index
        return (self.predict_proba(X) > 0.5).astype(int)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": "random_forest",
            "format_version": FORMAT_VERSION,
            "n_features": self.n_features,
            "seed": self.seed,
            "params": self.params,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RandomForest":
        if data.get("format_version") != FORMAT_VERSION:
            raise DataError(f"unsupported forest format version {data.get('format_version')!r}")
        return cls(
            trees=[DecisionTree.from_dict(t) for t in data["trees"]],
            n_features=int(data["n_features"]),
            seed=int(data["seed"]),
            params=dict(data["params"]),
        )


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row permutation sorting by label, then by each feature column in turn."""
    return np.lexsort(np.vstack([X.T[::-1], y]))


def _fit_member(args: Tuple[np.ndarray, np.ndarray, TreeParams, np.random.SeedSequence]) -> DecisionTree:
    X, y, params, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    rows = rng.integers(0, X.shape[0], size=X.shape[0])
    return train_tree(X[rows], y[rows], params, rng=rng)


def train_random_forest(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = 100,
    seed: int = 0,
    params: Optional[TreeParams] = None,
    workers: int = 1,
) -> RandomForest:
    """
    Train ``n_trees`` CART trees on bootstrap resamples.

    Tree i draws its bootstrap and feature subsets from the i-th child of
    ``SeedSequence(seed)``, so the ensemble is identical for any worker count.
    Bootstraps index the rows in canonical order, so shuffling the training
    rows does not change the forest.
    """
    if n_trees <= 0:
        raise DataError(f"n_trees must be > 0, got {n_trees}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("cannot train a forest on an empty matrix")
    if len(y) != X.shape[0]:
        raise DataError(f"{X.shape[0]} rows but {len(y)} labels")
    order = canonical_order(X, y)
    X, y = X[order], y[order]
    params = params or TreeParams(max_features="sqrt")
    jobs = [(X, y, params, child) for child in np.random.SeedSequence(seed).spawn(n_trees)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(_fit_member, jobs))
    else:
        trees = [_fit_member(job) for job in jobs]
    return RandomForest(
        trees=trees,
        n_features=X.shape[1],
        seed=seed,
        params={"n_trees": n_trees, **params.__dict__},
    )


# TreeSHAP path elements are [feature, zero_fraction, one_fraction, pweight]


def _extend(path: List[List[float]], zero: float, one: float, feature: int) -> None:
    depth = len(path)
    path.append([feature, zero, one, 1.0 if depth == 0 else 0.0])
    for i in range(depth - 1, -1, -1):
        path[i + 1][3] += one * path[i][3] * (i + 1) / (depth + 1)
        path[i][3] = zero * path[i][3] * (depth - i) / (depth + 1)


def _unwind(path: List[List[float]], index: int) -> None:
    depth = len(path) - 1
    one, zero = path[index][2], path[index][1]
    next_one = path[depth][3]
    for i in range(depth - 1, -1, -1):
        if one != 0:
            tmp = path[i][3]
            path[i][3] = next_one * (depth + 1) / ((i + 1) * one)
            next_one = tmp - path[i][3] * zero * (depth - i) / (depth + 1)
        else:
            path[i][3] = path[i][3] * (depth + 1) / (zero * (depth - i))
    for i in range(index, depth):
        path[i][0], path[i][1], path[i][2] = path[i + 1][0], path[i + 1][1], path[i + 1][2]
    path.pop()


def _unwound_sum(path: List[List[float]], index: int) -> float:
    depth = len(path) - 1
    one, zero = path[index][2], path[index][1]
    next_one = path[depth][3]
    total = 0.0
    if one != 0:
        for i in range(depth - 1, -1, -1):
            tmp = next_one / ((i + 1) * one)
            total += tmp
            next_one = path[i][3] - tmp * zero * (depth - i)
    else:
        for i in range(depth - 1, -1, -1):
            total += path[i][3] / (zero * (depth - i))
    return total * (depth + 1)


def _tree_shap(tree: DecisionTree, x: np.ndarray, phi: np.ndarray) -> None:
    def recurse(node: int, parent: List[List[float]], zero: float, one: float, feature: int) -> None:
        path = [list(el) for el in parent]
        _extend(path, zero, one, feature)
        if tree.children_left[node] < 0:
            for i in range(1, len(path)):
                w = _unwound_sum(path, i)
                phi[int(path[i][0])] += w * (path[i][2] - path[i][1]) * tree.values[node]
            return
        split = int(tree.features[node])
        left, right = int(tree.children_left[node]), int(tree.children_right[node])
        hot, cold = (left, right) if x[split] <= tree.thresholds[node] else (right, left)
        cover = tree.node_sample_weight[node]
        incoming_zero = incoming_one = 1.0
        for k in range(len(path)):
            if int(path[k][0]) == split:
                incoming_zero, incoming_one = path[k][1], path[k][2]
                _unwind(path, k)
                break
        recurse(hot, path, incoming_zero * tree.node_sample_weight[hot] / cover, incoming_one, split)
        recurse(cold, path, incoming_zero * tree.node_sample_weight[cold] / cover, 0.0, split)

    recurse(0, [], 1.0, 1.0, -1)


def tree_shap(model: Union[RandomForest, DecisionTree], x: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Path-dependent TreeSHAP attributions of one row.

    Returns (phi, base_value) with base_value + phi.sum() equal to the model
    score at ``x``. Forest attributions are the mean over trees.
    """
    trees = model.trees if isinstance(model, RandomForest) else [model]
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_features,):
        raise DataError(f"model expects {model.n_features} features, got shape {x.shape}")
    phi = np.zeros(model.n_features)
    for tree in trees:
        _tree_shap(tree, x, phi)
    phi /= len(trees)
    base = float(np.mean([t.expected_value() for t in trees]))
    return phi, base


def shap_matrix(model: Union[RandomForest, DecisionTree], X: np.ndarray) -> Tuple[np.ndarray, float]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rows = [tree_shap(model, x) for x in X]
    base = rows[0][1] if rows else (model.base_value if isinstance(model, RandomForest) else model.expected_value())
    return np.vstack([r[0] for r in rows]) if rows else np.zeros((0, model.n_features)), base
