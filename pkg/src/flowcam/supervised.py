"""K-nearest-neighbors, Gaussian naive Bayes, and linear SVM classifiers,
plus the generic predict/predict_proba entry points shared by every
supervised model in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyData
from .trees import CartModel, ForestModel, GbtModel, _as_matrix, encode_labels


@dataclass
class KnnModel:
    X: np.ndarray
    codes: np.ndarray
    classes: np.ndarray
    k: int

    def predict_proba(self, X) -> np.ndarray:
        X = _check_width(X, self.X.shape[1])
        out = np.zeros((len(X), len(self.classes)))
        train = self.X
        for start in range(0, len(X), 512):
            chunk = X[start:start + 512]
            d2 = ((chunk[:, None, :] - train[None, :, :]) ** 2).sum(axis=2)
            # ties on distance broken by training index: lexsort is stable
            order = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            for i, neighbors in enumerate(order):
                counts = np.bincount(self.codes[neighbors], minlength=len(self.classes))
                out[start + i] = counts / self.k
        return out

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.predict_proba(X), axis=1)]


@dataclass
class GnbModel:
    classes: np.ndarray
    log_priors: np.ndarray
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d), floored

    def log_posteriors(self, X) -> np.ndarray:
        X = _check_width(X, self.means.shape[1])
        out = np.empty((len(X), len(self.classes)))
        for k in range(len(self.classes)):
            var = self.variances[k]
            diff = X - self.means[k]
            out[:, k] = self.log_priors[k] - 0.5 * (
                np.log(2.0 * np.pi * var) + diff * diff / var
            ).sum(axis=1)
        return out

    def predict_proba(self, X) -> np.ndarray:
        lp = self.log_posteriors(X)
        lp -= lp.max(axis=1, keepdims=True)
        p = np.exp(lp)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.log_posteriors(X), axis=1)]


@dataclass
class LinearSvmModel:
    classes: np.ndarray
    weights: np.ndarray  # (K, d) one-vs-rest
    biases: np.ndarray  # (K,)

    def margins(self, X) -> np.ndarray:
        X = _check_width(X, self.weights.shape[1])
        return X @ self.weights.T + self.biases

    def predict_proba(self, X) -> np.ndarray:
        """Min-max-calibrated margins, rescaled to sum to one per row.

        Only the ordering is meaningful; the calibration exists so curves
        and thresholds can be computed uniformly across models.
        """
        m = self.margins(X)
        lo = m.min(axis=1, keepdims=True)
        hi = m.max(axis=1, keepdims=True)
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        scaled = (m - lo) / span
        totals = scaled.sum(axis=1, keepdims=True)
        uniform = np.full_like(scaled, 1.0 / scaled.shape[1])
        return np.where(totals > 0, scaled / np.where(totals > 0, totals, 1.0), uniform)

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.margins(X), axis=1)]


def _check_width(X, d) -> np.ndarray:
    X = _as_matrix(X)
    if X.shape[1] != d:
        raise DimensionMismatch(f"expected {d} features, got {X.shape[1]}")
    return X


def train_knn(X, y, k: int = 5) -> KnnModel:
    X = _as_matrix(X)
    if len(X) == 0:
        raise EmptyData("KNN needs at least one training row")
    classes, codes = encode_labels(y)
    return KnnModel(X=X.copy(), codes=codes, classes=classes, k=max(int(k), 1))


def train_gnb(X, y, var_smoothing: float = 1e-9) -> GnbModel:
    X = _as_matrix(X)
    if len(X) == 0:
        raise EmptyData("GNB needs at least one training row")
    classes, codes = encode_labels(y)
    K, d = len(classes), X.shape[1]
    # floor is var_smoothing times the largest overall feature variance
    max_var = float(X.var(axis=0).max()) if len(X) > 1 else 0.0
    eps = var_smoothing * max_var if max_var > 0 else var_smoothing
    means = np.empty((K, d))
    variances = np.empty((K, d))
    priors = np.empty(K)
    for k in range(K):
        rows = X[codes == k]
        priors[k] = len(rows) / len(X)
        means[k] = rows.mean(axis=0)
        variances[k] = rows.var(axis=0) + eps
    return GnbModel(classes=classes, log_priors=np.log(priors), means=means, variances=variances)


def train_linear_svm(X, y, l2: float = 1e-4, epochs: int = 1000,
                     learning_rate: float = 0.01, seed: int = 0) -> LinearSvmModel:
    """One-vs-rest hinge loss via SGD with an eta0/(1 + eta0*l2*t) schedule."""
    X = _as_matrix(X)
    if len(X) == 0:
        raise EmptyData("SVM needs at least one training row")
    classes, codes = encode_labels(y)
    K, (n, d) = len(classes), X.shape
    weights = np.zeros((K, d))
    biases = np.zeros(K)
    rng = np.random.default_rng(seed)
    for k in range(K):
        target = np.where(codes == k, 1.0, -1.0)
        w = np.zeros(d)
        b = 0.0
        t = 0
        for _ in range(epochs):
            for i in rng.permutation(n):
                t += 1
                eta = learning_rate / (1.0 + learning_rate * l2 * t)
                margin = target[i] * (X[i] @ w + b)
                if margin < 1.0:
                    w -= eta * (l2 * w - target[i] * X[i])
                    b += eta * target[i]
                else:
                    w -= eta * l2 * w
        weights[k] = w
        biases[k] = b
    return LinearSvmModel(classes=classes, weights=weights, biases=biases)


SUPERVISED_KINDS = ("cart", "rf", "et", "gbt", "knn", "gnb", "lsvm")

_MODEL_TYPES = (CartModel, ForestModel, GbtModel, KnnModel, GnbModel, LinearSvmModel)


def predict(model, X) -> np.ndarray:
    if not isinstance(model, _MODEL_TYPES):
        raise TypeError(f"not a supervised model: {type(model).__name__}")
    return model.predict(X)


def predict_proba(model, X) -> np.ndarray:
    if not isinstance(model, _MODEL_TYPES):
        raise TypeError(f"not a supervised model: {type(model).__name__}")
    return model.predict_proba(X)
