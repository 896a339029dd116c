"""One-class detectors for zero-day camera flows.

Three of the four detectors live here: the kernel one-class SVM trained by
pairwise dual coordinate ascent, its stochastic-gradient variant on an
explicit random Fourier feature map, and the isolation forest. The deep
hypersphere detector has its own module. All detectors expose the same
surface: ``outlier_scores`` (higher = more anomalous) and ``is_outlier``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyData, EmptyScores, NonPositiveNu, WidthMismatch

OCSVM_MAX_TRAIN_ROWS = 50_000


def _check_width(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != d:
        raise WidthMismatch(f"expected {d} features, got {X.shape[1]}")
    return X


def _rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


# ---------------------------------------------------------------------------
# kernel one-class SVM
# ---------------------------------------------------------------------------

@dataclass
class OcsvmModel:
    support_vectors: np.ndarray
    alpha: np.ndarray  # dual coefficients of the support vectors, sum to 1
    rho: float
    gamma: float
    nu: float
    n_train: int
    kkt_residual: float
    objective: float

    def decision_function(self, X) -> np.ndarray:
        X = _check_width(X, self.support_vectors.shape[1])
        return _rbf_kernel(X, self.support_vectors, self.gamma) @ self.alpha - self.rho

    def outlier_scores(self, X) -> np.ndarray:
        return -self.decision_function(X)

    def is_outlier(self, X) -> np.ndarray:
        return self.decision_function(X) < 0.0


def train_ocsvm(X, nu: float = 0.001, gamma: float = 0.999,
                tol: float = 1e-4, max_iter: int | None = None) -> OcsvmModel:
    """Solve the one-class SVM dual by SMO-style pairwise coordinate ascent.

    The dual is min 0.5 a'Ka subject to 0 <= a_i <= 1/(nu n), sum a = 1.
    Pairs are chosen by maximal KKT violation with a second-order step; the
    offset rho comes from averaging the margin support vectors.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n = len(X)
    if n == 0:
        raise EmptyData("one-class SVM needs at least one training row")
    if n > OCSVM_MAX_TRAIN_ROWS:
        raise EmptyData(
            f"{n} rows exceed the {OCSVM_MAX_TRAIN_ROWS}-row kernel solver guard; "
            "use the SGD one-class SVM for sets this large")
    if not 0.0 < nu <= 1.0:
        raise NonPositiveNu(f"nu must be in (0, 1], got {nu}")
    if gamma <= 0.0:
        raise NonPositiveNu(f"gamma must be positive, got {gamma}")

    C = 1.0 / (nu * n)
    K = _rbf_kernel(X, X, gamma)
    alpha = np.full(n, 1.0 / n)
    G = K @ alpha
    if max_iter is None:
        max_iter = max(10_000, 200 * n)

    kkt = 0.0
    for _ in range(max_iter):
        can_up = alpha < C - 1e-12
        can_down = alpha > 1e-12
        if not can_up.any() or not can_down.any():
            break
        neg_G = -G
        i = int(np.flatnonzero(can_up)[np.argmax(neg_G[can_up])])
        gmax = neg_G[i]
        gmin = neg_G[can_down].min()
        kkt = gmax - gmin
        if kkt < tol:
            break
        # second-order choice of j among the descent-feasible set
        b_all = gmax + G  # positive where pair (i, t) violates KKT
        a_all = K[i, i] + np.diag(K) - 2.0 * K[i]
        a_all = np.where(a_all <= 0, 1e-12, a_all)
        gain = np.where(can_down & (b_all > 0), (b_all * b_all) / a_all, -np.inf)
        gain[i] = -np.inf
        j = int(np.argmax(gain))
        if not np.isfinite(gain[j]):
            break
        delta = (G[j] - G[i]) / a_all[j]
        old_i, old_j = alpha[i], alpha[j]
        total = old_i + old_j
        new_i = min(max(old_i + delta, max(0.0, total - C)), min(C, total))
        new_j = total - new_i
        alpha[i], alpha[j] = new_i, new_j
        G += K[:, i] * (new_i - old_i) + K[:, j] * (new_j - old_j)

    sv = alpha > 1e-12
    free = sv & (alpha < C - 1e-8 * C)
    if free.any():
        rho = float(G[free].mean())
    else:
        upper = G[alpha >= C - 1e-8 * C]
        lower = G[~sv]
        hi = float(upper.max()) if len(upper) else float(G.max())
        lo = float(lower.min()) if len(lower) else float(G.min())
        rho = (hi + lo) / 2.0
    objective = 0.5 * float(alpha @ G)
    return OcsvmModel(
        support_vectors=X[sv].copy(),
        alpha=alpha[sv].copy(),
        rho=rho,
        gamma=gamma,
        nu=nu,
        n_train=n,
        kkt_residual=float(kkt),
        objective=objective,
    )


# ---------------------------------------------------------------------------
# SGD one-class SVM on random Fourier features
# ---------------------------------------------------------------------------

@dataclass
class FourierMap:
    """Random cosine features approximating the RBF kernel of width gamma."""

    weights: np.ndarray  # (d, n_components)
    offsets: np.ndarray  # (n_components,)

    def transform(self, X: np.ndarray) -> np.ndarray:
        proj = X @ self.weights + self.offsets
        return math.sqrt(2.0 / self.weights.shape[1]) * np.cos(proj)


@dataclass
class SgdOcsvmModel:
    feature_map: FourierMap
    w: np.ndarray
    rho: float
    nu: float
    eta0: float
    epoch_objective: list[float] = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        X = _check_width(X, self.feature_map.weights.shape[0])
        return self.feature_map.transform(X) @ self.w - self.rho

    def outlier_scores(self, X) -> np.ndarray:
        return -self.decision_function(X)

    def is_outlier(self, X) -> np.ndarray:
        return self.decision_function(X) < 0.0


def _sgd_objective(Phi: np.ndarray, w: np.ndarray, rho: float, nu: float) -> float:
    hinge = np.maximum(0.0, rho - Phi @ w)
    return 0.5 * float(w @ w) - rho + hinge.sum() / (nu * len(Phi))


def train_sgd_ocsvm(X, nu: float = 0.03, eta0: float = 0.0001, epochs: int = 20,
                    gamma: float = 0.999, n_components: int = 512,
                    seed: int = 0) -> SgdOcsvmModel:
    """Hinge-loss one-class SVM by stochastic subgradient descent.

    Minimizes 0.5||w||^2 - rho + (1/(nu n)) sum max(0, rho - w.phi(x_i))
    over an explicit random Fourier feature map, with joint rho updates and
    an eta0/(1 + eta0 t) schedule. Training ends with one exact line search
    on rho (the nu-quantile of scores), which is the coordinate-wise
    optimum of the objective for the final w.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n = len(X)
    if n == 0:
        raise EmptyData("one-class SVM needs at least one training row")
    if not 0.0 < nu <= 1.0:
        raise NonPositiveNu(f"nu must be in (0, 1], got {nu}")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")

    rng = np.random.default_rng(seed)
    fmap = FourierMap(
        weights=rng.normal(scale=math.sqrt(2.0 * gamma), size=(X.shape[1], n_components)),
        offsets=rng.uniform(0.0, 2.0 * math.pi, size=n_components),
    )
    Phi = fmap.transform(X)
    w = np.zeros(n_components)
    rho = 0.0
    inv_nu = 1.0 / nu
    t = 0
    history = []
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = eta0 / (1.0 + eta0 * t)
            s = Phi[i] @ w
            if s < rho:
                w += eta * (inv_nu * Phi[i] - w)
                rho -= eta * (inv_nu - 1.0)
            else:
                w -= eta * w
                rho += eta
        history.append(_sgd_objective(Phi, w, rho, nu))

    scores = np.sort(Phi @ w)
    k = max(1, math.ceil(nu * n))
    rho = float(scores[k - 1])
    history.append(_sgd_objective(Phi, w, rho, nu))
    return SgdOcsvmModel(feature_map=fmap, w=w, rho=rho, nu=nu, eta0=eta0,
                         epoch_objective=history)


# ---------------------------------------------------------------------------
# isolation forest
# ---------------------------------------------------------------------------

def harmonic_number(i: int) -> float:
    """Exact H(i) by summation (the ln(i)+gamma shortcut is ~1/(2i) off)."""
    return float(np.sum(1.0 / np.arange(1, i + 1)))


def average_path_length(m: int) -> float:
    """c(m): average unsuccessful-search path length in a binary search tree."""
    if m <= 1:
        return 0.0
    return 2.0 * harmonic_number(m - 1) - 2.0 * (m - 1) / m


@dataclass
class _IsoTree:
    feature: np.ndarray  # -1 marks external nodes
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    depth: np.ndarray
    size: np.ndarray

    def path_lengths(self, X: np.ndarray, c_table: np.ndarray) -> np.ndarray:
        idx = np.zeros(len(X), dtype=np.int64)
        while True:
            feat = self.feature[idx]
            active = feat >= 0
            if not active.any():
                break
            rows = np.nonzero(active)[0]
            go_left = X[rows, feat[rows]] <= self.threshold[idx[rows]]
            idx = idx.copy()
            idx[rows] = np.where(go_left, self.left[idx[rows]], self.right[idx[rows]])
        return self.depth[idx] + c_table[self.size[idx]]


@dataclass
class IsolationForestModel:
    trees: list[_IsoTree]
    subsample: int
    n_train: int
    contamination: float
    threshold: float
    n_features: int
    c_norm: float
    c_table: np.ndarray

    def expected_path_length(self, X) -> np.ndarray:
        X = _check_width(X, self.n_features)
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.path_lengths(X, self.c_table)
        return total / len(self.trees)

    def outlier_scores(self, X) -> np.ndarray:
        return isolation_score_from_path(self.expected_path_length(X), self.c_norm)

    def is_outlier(self, X) -> np.ndarray:
        return self.outlier_scores(X) > self.threshold


def isolation_score_from_path(expected_h, c_norm: float) -> np.ndarray:
    """s = 2^(-E(h)/c(psi)); 0.5 at E(h) = c(psi), toward 1 as E(h) -> 0."""
    return np.exp2(-np.asarray(expected_h, dtype=float) / c_norm)


def isolation_score(model: IsolationForestModel, X) -> np.ndarray:
    return model.outlier_scores(X)


def _grow_iso_tree(X: np.ndarray, rows: np.ndarray, height_cap: int,
                   rng: np.random.Generator) -> _IsoTree:
    feature, threshold, left, right, depth, size = [], [], [], [], [], []
    stack = [(rows, 0, -1, False)]
    while stack:
        node_rows, d, parent, is_right = stack.pop()
        slot = len(feature)
        if parent >= 0:
            if is_right:
                right[parent] = slot
            else:
                left[parent] = slot
        vals = X[node_rows]
        usable = np.nonzero(vals.min(axis=0) < vals.max(axis=0))[0]
        if d >= height_cap or len(node_rows) <= 1 or len(usable) == 0:
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            depth.append(d)
            size.append(len(node_rows))
            continue
        q = int(usable[rng.integers(len(usable))])
        lo, hi = vals[:, q].min(), vals[:, q].max()
        thr = float(rng.uniform(lo, hi))
        mask = vals[:, q] <= thr
        feature.append(q)
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        depth.append(d)
        size.append(len(node_rows))
        stack.append((node_rows[~mask], d + 1, slot, True))
        stack.append((node_rows[mask], d + 1, slot, False))
    return _IsoTree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        depth=np.asarray(depth, dtype=float),
        size=np.asarray(size, dtype=np.int64),
    )


def train_isolation_forest(X, n_trees: int = 100, subsample: int = 256,
                           contamination: float = 0.1, seed: int = 0) -> IsolationForestModel:
    """Isolation forest with a height cap of ceil(log2(psi)) per tree.

    The decision threshold is the (1 - contamination) quantile of the
    training scores, so the stated fraction of training rows is flagged.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n = len(X)
    if n < 2:
        raise EmptyData("isolation forest needs at least two rows")
    if not 0.0 < contamination < 1.0:
        raise ValueError("contamination must be in (0, 1)")
    psi = min(subsample, n)
    height_cap = math.ceil(math.log2(psi)) if psi > 1 else 0
    c_table = np.array([average_path_length(m) for m in range(psi + 1)])
    seeds = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    for i in range(n_trees):
        rng = np.random.default_rng(seeds[i])
        rows = rng.choice(n, size=psi, replace=False)
        trees.append(_grow_iso_tree(X, rows, height_cap, rng))
    model = IsolationForestModel(
        trees=trees, subsample=psi, n_train=n, contamination=contamination,
        threshold=0.0, n_features=X.shape[1], c_norm=average_path_length(psi),
        c_table=c_table,
    )
    train_scores = model.outlier_scores(X)
    model.threshold = calibrate_threshold(train_scores, (1.0 - contamination) * 100.0)
    return model


# ---------------------------------------------------------------------------
# shared threshold calibration / decisions
# ---------------------------------------------------------------------------

def calibrate_threshold(scores, percentile: float) -> float:
    """Linear-interpolation percentile of a score sample."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise EmptyScores("cannot calibrate a threshold on an empty score list")
    if not 0.0 < percentile <= 100.0:
        raise ValueError("percentile must be in (0, 100]")
    return float(np.percentile(scores, percentile))


def decide(model, X) -> np.ndarray:
    """Uniform inlier/outlier decision across every detector kind."""
    return np.asarray(model.is_outlier(X), dtype=bool)
