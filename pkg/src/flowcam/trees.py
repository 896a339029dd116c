"""Decision trees, bagged/extra forests, and gradient-boosted trees.

Trees are stored as flat node arrays (feature, threshold, left, right plus a
leaf payload) so prediction vectorizes across samples and persistence is a
straight array dump. Split search is exact and deterministic: candidate
features are visited in ascending index order, a strictly better score is
required to switch, and within a feature the lowest qualifying threshold
wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyData


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return X


def encode_labels(y) -> tuple[np.ndarray, np.ndarray]:
    """Map labels to 0..K-1 codes; class order is sorted label order."""
    y = np.asarray(y)
    classes, codes = np.unique(y, return_inverse=True)
    return classes, codes.astype(np.int32)


@dataclass
class Tree:
    """Flat binary tree; feature < 0 marks a leaf.

    ``counts`` holds per-node class histograms for classification trees;
    ``values`` holds leaf predictions for regression trees. Exactly one of
    the two is populated.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray | None = None
    values: np.ndarray | None = None
    importances: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        X = _as_matrix(X)
        idx = np.zeros(len(X), dtype=np.int64)
        while True:
            feat = self.feature[idx]
            active = feat >= 0
            if not active.any():
                return idx
            rows = np.nonzero(active)[0]
            f = feat[rows]
            go_left = X[rows, f] <= self.threshold[idx[rows]]
            nxt = np.where(go_left, self.left[idx[rows]], self.right[idx[rows]])
            idx = idx.copy()
            idx[rows] = nxt


class _TreeBuilder:
    """Grows one tree with an explicit stack (no recursion-depth limit)."""

    def __init__(self, X, y_codes, n_classes, *, regression=False, y_values=None,
                 max_depth=None, min_leaf=1, n_candidate_features=None,
                 random_thresholds=False, rng=None):
        self.X = X
        self.y_codes = y_codes
        self.K = n_classes
        self.regression = regression
        self.y_values = y_values
        self.max_depth = max_depth
        self.min_leaf = max(int(min_leaf), 1)
        self.n_candidates = n_candidate_features
        self.random_thresholds = random_thresholds
        self.rng = rng
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.payload: list[np.ndarray | float] = []
        self.importance = np.zeros(X.shape[1])

    def build(self, rows: np.ndarray) -> Tree:
        n_root = len(rows)
        stack = [(rows, 0, -1, False)]  # rows, depth, parent slot, is_right
        while stack:
            node_rows, depth, parent, is_right = stack.pop()
            slot = len(self.feature)
            if parent >= 0:
                if is_right:
                    self.right[parent] = slot
                else:
                    self.left[parent] = slot
            split = self._find_split(node_rows, depth)
            if split is None:
                self._emit_leaf(node_rows)
                continue
            f, thr, left_rows, right_rows, gain = split
            self.importance[f] += gain / n_root
            self.feature.append(f)
            self.threshold.append(thr)
            self.left.append(-1)
            self.right.append(-1)
            self.payload.append(self._node_payload(node_rows))
            # push right first so the left child is built next (preorder)
            stack.append((right_rows, depth + 1, slot, True))
            stack.append((left_rows, depth + 1, slot, False))
        return self._to_tree()

    def _node_payload(self, rows):
        if self.regression:
            return float(self.y_values[rows].mean())
        return np.bincount(self.y_codes[rows], minlength=self.K).astype(float)

    def _emit_leaf(self, rows):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.payload.append(self._node_payload(rows))

    def _to_tree(self) -> Tree:
        tree = Tree(
            feature=np.asarray(self.feature, dtype=np.int32),
            threshold=np.asarray(self.threshold, dtype=float),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            importances=self.importance,
        )
        if self.regression:
            tree.values = np.asarray(self.payload, dtype=float)
        else:
            tree.counts = np.vstack(self.payload)
        return tree

    # -- split search ------------------------------------------------------

    def _is_pure(self, rows) -> bool:
        if self.regression:
            vals = self.y_values[rows]
            return bool(np.all(vals == vals[0]))
        codes = self.y_codes[rows]
        return bool(np.all(codes == codes[0]))

    def _candidate_features(self) -> np.ndarray:
        d = self.X.shape[1]
        if self.n_candidates is None or self.n_candidates >= d:
            return np.arange(d)
        picked = self.rng.choice(d, size=self.n_candidates, replace=False)
        return np.sort(picked)

    def _find_split(self, rows, depth):
        n = len(rows)
        if n < 2 * self.min_leaf or n < 2:
            return None
        if self.max_depth is not None and depth >= self.max_depth:
            return None
        if self._is_pure(rows):
            return None
        features = self._candidate_features()
        if self.regression:
            target = self.y_values[rows]
            sum_all = target.sum()
            parent_score = sum_all * sum_all / n
        else:
            target = self.y_codes[rows]
            counts_all = np.bincount(target, minlength=self.K).astype(float)
            parent_score = counts_all @ counts_all / n

        best = None  # (score, feature, threshold, left_mask)
        for f in features:
            v = self.X[rows, f]
            if self.random_thresholds:
                got = self._eval_random_threshold(v, target, n)
            else:
                got = self._eval_best_threshold(v, target, n)
            if got is None:
                continue
            score, thr, left_mask = got
            if best is None or score > best[0]:
                best = (score, int(f), float(thr), left_mask)
        if best is None:
            return None
        score, f, thr, left_mask = best
        # impurity-sum / SSE reduction; mathematically >= 0, clamp fp noise.
        # Zero-gain splits are kept so consistent data still reaches pure leaves.
        gain = max(score - parent_score, 0.0)
        left_rows = rows[left_mask]
        right_rows = rows[~left_mask]
        if len(left_rows) == 0 or len(right_rows) == 0:
            return None
        return f, thr, left_rows, right_rows, max(gain, 0.0)

    def _eval_best_threshold(self, v, target, n):
        order = np.argsort(v, kind="stable")
        vs = v[order]
        if vs[0] == vs[-1]:
            return None
        boundaries = vs[:-1] != vs[1:]
        nl = np.arange(1, n)
        ok = boundaries & (nl >= self.min_leaf) & (n - nl >= self.min_leaf)
        if not ok.any():
            return None
        if self.regression:
            cum = np.cumsum(target[order])[:-1]
            total = cum[-1] + target[order][-1]
            score_all = cum * cum / nl + (total - cum) ** 2 / (n - nl)
        else:
            onehot = np.zeros((n, self.K))
            onehot[np.arange(n), target[order]] = 1.0
            cum = np.cumsum(onehot, axis=0)[:-1]
            total = np.bincount(target, minlength=self.K).astype(float)
            right = total - cum
            score_all = (cum * cum).sum(axis=1) / nl + (right * right).sum(axis=1) / (n - nl)
        score_all = np.where(ok, score_all, -np.inf)
        i = int(np.argmax(score_all))
        thr = (vs[i] + vs[i + 1]) / 2.0
        return float(score_all[i]), thr, v <= thr

    def _eval_random_threshold(self, v, target, n):
        lo, hi = v.min(), v.max()
        if lo == hi:
            return None
        thr = float(self.rng.uniform(lo, hi))
        left = v <= thr
        nl = int(left.sum())
        if nl < self.min_leaf or n - nl < self.min_leaf:
            return None
        if self.regression:
            sl = target[left].sum()
            sr = target.sum() - sl
            score = sl * sl / nl + sr * sr / (n - nl)
        else:
            cl = np.bincount(target[left], minlength=self.K).astype(float)
            cr = np.bincount(target[~left], minlength=self.K).astype(float)
            score = cl @ cl / nl + cr @ cr / (n - nl)
        return float(score), thr, left


# ---------------------------------------------------------------------------
# public models
# ---------------------------------------------------------------------------

@dataclass
class CartModel:
    tree: Tree
    classes: np.ndarray
    n_features: int

    def predict_proba(self, X) -> np.ndarray:
        X = self._check(X)
        counts = self.tree.counts[self.tree.apply(X)]
        return counts / counts.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.predict_proba(X), axis=1)]

    def _check(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return X


@dataclass
class ForestModel:
    kind: str  # "bagged" | "extra"
    trees: list[Tree]
    classes: np.ndarray
    n_features: int
    n_features_per_split: int
    seed: int

    def _votes(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        votes = np.zeros((len(X), len(self.classes)))
        for tree in self.trees:
            counts = tree.counts[tree.apply(X)]
            votes[np.arange(len(X)), np.argmax(counts, axis=1)] += 1
        return votes

    def predict_proba(self, X) -> np.ndarray:
        votes = self._votes(X)
        return votes / len(self.trees)

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self._votes(X), axis=1)]

    @property
    def feature_importances(self) -> np.ndarray:
        """Mean impurity decrease, normalized to sum to one."""
        acc = np.zeros(self.n_features)
        for tree in self.trees:
            total = tree.importances.sum()
            if total > 0:
                acc += tree.importances / total
        s = acc.sum()
        return acc / s if s > 0 else acc


@dataclass
class GbtModel:
    trees: list[list[Tree]]  # per round, per class
    classes: np.ndarray
    n_features: int
    learning_rate: float
    init_score: np.ndarray  # log priors
    train_deviance: list[float] = field(default_factory=list)

    def decision_scores(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        F = np.tile(self.init_score, (len(X), 1))
        for round_trees in self.trees:
            for k, tree in enumerate(round_trees):
                F[:, k] += self.learning_rate * tree.values[tree.apply(X)]
        return F

    def predict_proba(self, X) -> np.ndarray:
        return _softmax(self.decision_scores(X))

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.decision_scores(X), axis=1)]


def _softmax(F: np.ndarray) -> np.ndarray:
    z = F - F.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _multinomial_deviance(codes: np.ndarray, F: np.ndarray) -> float:
    logp = F - F.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(codes)), codes].mean())


def train_cart(X, y, max_depth: int | None = None, min_leaf: int = 1, seed: int = 0) -> CartModel:
    """Greedy Gini tree; unrestricted depth reaches pure leaves."""
    X = _as_matrix(X)
    if len(X) == 0:
        raise EmptyData("cannot train a tree on zero rows")
    classes, codes = encode_labels(y)
    builder = _TreeBuilder(X, codes, len(classes), max_depth=max_depth, min_leaf=min_leaf)
    tree = builder.build(np.arange(len(X)))
    return CartModel(tree=tree, classes=classes, n_features=X.shape[1])


def train_forest(X, y, kind: str = "bagged", n_trees: int = 100, seed: int = 0,
                 max_depth: int | None = None, min_leaf: int = 1,
                 n_features_per_split: int | None = None) -> ForestModel:
    """Bagged forest (bootstrap rows, best split over random feature subsets)
    or extra-trees (full rows, one uniform-random threshold per candidate)."""
    if kind not in ("bagged", "extra"):
        raise ValueError(f"unknown forest kind {kind!r}")
    X = _as_matrix(X)
    if len(X) < 2:
        raise EmptyData("forests need at least two rows")
    classes, codes = encode_labels(y)
    d = X.shape[1]
    m = n_features_per_split or max(1, round(np.sqrt(d)))
    seeds = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    rows_all = np.arange(len(X))
    for i in range(n_trees):
        rng = np.random.default_rng(seeds[i])
        rows = rng.integers(0, len(X), len(X)) if kind == "bagged" else rows_all
        builder = _TreeBuilder(X, codes, len(classes), max_depth=max_depth,
                               min_leaf=min_leaf, n_candidate_features=min(m, d),
                               random_thresholds=(kind == "extra"), rng=rng)
        trees.append(builder.build(np.asarray(rows)))
    return ForestModel(kind=kind, trees=trees, classes=classes, n_features=d,
                       n_features_per_split=min(m, d), seed=seed)


def train_gbt(X, y, n_rounds: int = 200, learning_rate: float = 0.1,
              max_depth: int | None = 6, min_leaf: int = 1, seed: int = 0) -> GbtModel:
    """Gradient boosting with multinomial deviance.

    Each round fits one regression tree per class to the softmax residuals
    and applies a Newton-style leaf update; a halving step guard keeps the
    recorded training deviance nonincreasing round over round.
    """
    X = _as_matrix(X)
    if len(X) == 0:
        raise EmptyData("cannot boost on zero rows")
    classes, codes = encode_labels(y)
    K = len(classes)
    if K < 2:
        raise EmptyData("boosting needs at least two classes")
    n = len(X)
    priors = np.bincount(codes, minlength=K) / n
    init = np.log(np.clip(priors, 1e-12, None))
    F = np.tile(init, (n, 1))
    onehot = np.zeros((n, K))
    onehot[np.arange(n), codes] = 1.0

    model = GbtModel(trees=[], classes=classes, n_features=X.shape[1],
                     learning_rate=learning_rate, init_score=init)
    deviance = _multinomial_deviance(codes, F)
    model.train_deviance.append(deviance)
    if learning_rate == 0 or n_rounds == 0:
        model.train_deviance.extend([deviance] * n_rounds)
        return model

    rows = np.arange(n)
    for _ in range(n_rounds):
        p = _softmax(F)
        residual = onehot - p
        round_trees = []
        update = np.zeros_like(F)
        for k in range(K):
            r = residual[:, k]
            builder = _TreeBuilder(X, codes, K, regression=True, y_values=r,
                                   max_depth=max_depth, min_leaf=min_leaf)
            tree = builder.build(rows)
            leaf_idx = tree.apply(X)
            num = np.zeros(tree.n_nodes)
            den = np.zeros(tree.n_nodes)
            np.add.at(num, leaf_idx, r)
            np.add.at(den, leaf_idx, np.abs(r) * (1.0 - np.abs(r)))
            vals = np.zeros(tree.n_nodes)
            nonzero = den > 1e-150
            vals[nonzero] = (K - 1) / K * num[nonzero] / den[nonzero]
            tree.values = vals
            round_trees.append(tree)
            update[:, k] = vals[leaf_idx]
        scale = 1.0
        for _attempt in range(11):
            cand = _multinomial_deviance(codes, F + scale * learning_rate * update)
            if cand <= deviance:
                break
            scale /= 2.0
        else:
            scale = 0.0
            cand = deviance
        if scale != 1.0:
            for tree in round_trees:
                tree.values = tree.values * scale
            update *= scale
        F = F + learning_rate * update
        deviance = min(cand, deviance)
        model.trees.append(round_trees)
        model.train_deviance.append(deviance)
    return model
