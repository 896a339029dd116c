"""Exploratory outlier detection: PCA reconstruction error and Gaussian
mixtures with BIC model selection.

Both detectors threshold a per-row score at a percentile of a calibration
sample: reconstruction error above the cut, or mixture log-density below
it. The BIC sweep runs every covariance family over a component grid and
reports the full table, not just the winner, because nearby fits are often
statistically indistinguishable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyScores, KTooLarge, TooFewRows

COV_TYPES = ("spherical", "tied", "diag", "full")


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass
class PcaModel:
    mean: np.ndarray
    axes: np.ndarray  # (k, d) orthonormal rows, deterministic sign
    explained_variance: np.ndarray  # nonincreasing
    k: int

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return (X - self.mean) @ self.axes.T

    def reconstruct(self, X) -> np.ndarray:
        return self.transform(X) @ self.axes + self.mean

    def reconstruction_errors(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        diff = X - self.reconstruct(X)
        return (diff * diff).sum(axis=1)


def fit_pca(X, k: int) -> PcaModel:
    """Top-k principal axes of the centered data.

    Sign convention: each axis's largest-magnitude coordinate is positive,
    so refitting the same data always returns identical axes.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if not 1 <= k <= d:
        raise KTooLarge(f"k must be in [1, {d}], got {k}")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    axes = vt[:k]
    for i in range(k):
        j = int(np.argmax(np.abs(axes[i])))
        if axes[i, j] < 0:
            axes[i] = -axes[i]
    explained = (s[:k] ** 2) / n
    return PcaModel(mean=mean, axes=axes, explained_variance=explained, k=k)


def pca_outliers(model: PcaModel, X, percentile: float = 95.0,
                 calibration_errors: np.ndarray | None = None
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Flag rows whose reconstruction error exceeds the percentile cut.

    The threshold is taken over ``calibration_errors`` when provided,
    otherwise over X's own errors.
    """
    errors = model.reconstruction_errors(X)
    cal = errors if calibration_errors is None else np.asarray(calibration_errors, float)
    if cal.size == 0:
        raise EmptyScores("no calibration errors to threshold")
    threshold = np.percentile(cal, percentile)
    return errors > threshold, errors


# ---------------------------------------------------------------------------
# Gaussian mixtures
# ---------------------------------------------------------------------------

@dataclass
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    covariances: np.ndarray  # full/tied: (K,d,d)/(d,d); diag: (K,d); spherical: (K,)
    cov_type: str
    log_likelihood: float  # mean per-sample at convergence
    n_iter: int
    loglik_history: list[float] = field(default_factory=list)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def _component_log_density(self, X: np.ndarray) -> np.ndarray:
        n, d = X.shape
        K = self.n_components
        out = np.empty((n, K))
        for k in range(K):
            diff = X - self.means[k]
            if self.cov_type == "spherical":
                var = self.covariances[k]
                maha = (diff * diff).sum(axis=1) / var
                logdet = d * math.log(var)
            elif self.cov_type == "diag":
                var = self.covariances[k]
                maha = (diff * diff / var).sum(axis=1)
                logdet = float(np.log(var).sum())
            else:
                cov = self.covariances if self.cov_type == "tied" else self.covariances[k]
                chol = np.linalg.cholesky(cov)
                sol = np.linalg.solve(chol, diff.T)
                maha = (sol * sol).sum(axis=0)
                logdet = 2.0 * float(np.log(np.diagonal(chol)).sum())
            out[:, k] = -0.5 * (d * math.log(2.0 * math.pi) + logdet + maha)
        return out

    def score_samples(self, X) -> np.ndarray:
        """Per-row mixture log-density."""
        X = np.asarray(X, dtype=float)
        weighted = self._component_log_density(X) + np.log(self.weights)
        return _logsumexp(weighted)

    def responsibilities(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        weighted = self._component_log_density(X) + np.log(self.weights)
        return np.exp(weighted - _logsumexp(weighted)[:, None])


def _logsumexp(A: np.ndarray) -> np.ndarray:
    m = A.max(axis=1)
    return m + np.log(np.exp(A - m[:, None]).sum(axis=1))


def _kmeanspp_centers(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(len(X))]]
    for _ in range(1, K):
        d2 = np.min([((X - c) ** 2).sum(axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(len(X))])
            continue
        centers.append(X[rng.choice(len(X), p=d2 / total)])
    return np.asarray(centers)


COV_FLOOR = 1e-6


def _m_step(X, resp, cov_type):
    n, d = X.shape
    K = resp.shape[1]
    nk = resp.sum(axis=0) + 1e-12
    weights = nk / n
    means = (resp.T @ X) / nk[:, None]
    if cov_type == "full":
        covs = np.empty((K, d, d))
        for k in range(K):
            diff = X - means[k]
            covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k]
            covs[k].flat[:: d + 1] += COV_FLOOR
        return weights, means, covs
    if cov_type == "tied":
        cov = np.zeros((d, d))
        for k in range(K):
            diff = X - means[k]
            cov += (resp[:, k, None] * diff).T @ diff
        cov /= n
        cov.flat[:: d + 1] += COV_FLOOR
        return weights, means, cov
    if cov_type == "diag":
        covs = np.empty((K, d))
        for k in range(K):
            diff = X - means[k]
            covs[k] = (resp[:, k] @ (diff * diff)) / nk[k] + COV_FLOOR
        return weights, means, covs
    if cov_type == "spherical":
        covs = np.empty(K)
        for k in range(K):
            diff = X - means[k]
            covs[k] = (resp[:, k] @ (diff * diff).sum(axis=1)) / (nk[k] * d) + COV_FLOOR
        return weights, means, covs
    raise ValueError(f"unknown covariance type {cov_type!r}")


def fit_gmm(X, K: int, cov_type: str = "full", seed: int = 0,
            max_iter: int = 200, tol: float = 1e-4) -> GmmModel:
    """EM from a kmeans++-style hard start.

    Convergence is declared when the mean per-sample log-likelihood gain
    drops below ``tol``; diagonal floors keep every covariance positive
    definite. The per-iteration log-likelihood history is kept on the model
    so the EM monotonicity guarantee is checkable from outside.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n = len(X)
    if K < 1:
        raise ValueError("K must be >= 1")
    if n < K:
        raise TooFewRows(f"{n} rows cannot support {K} components")
    if cov_type not in COV_TYPES:
        raise ValueError(f"cov_type must be one of {COV_TYPES}")

    rng = np.random.default_rng(seed)
    centers = _kmeanspp_centers(X, K, rng)
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    resp = np.zeros((n, K))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0

    weights, means, covs = _m_step(X, resp, cov_type)
    model = GmmModel(weights=weights, means=means, covariances=covs,
                     cov_type=cov_type, log_likelihood=-np.inf, n_iter=0)
    prev = -np.inf
    for it in range(1, max_iter + 1):
        weighted = model._component_log_density(X) + np.log(model.weights)
        norm = _logsumexp(weighted)
        ll = float(norm.mean())
        model.loglik_history.append(ll)
        resp = np.exp(weighted - norm[:, None])
        weights, means, covs = _m_step(X, resp, cov_type)
        model.weights, model.means, model.covariances = weights, means, covs
        model.n_iter = it
        if ll - prev < tol and it > 1:
            break
        prev = ll
    model.log_likelihood = float(model.score_samples(X).mean())
    return model


def free_parameters(K: int, d: int, cov_type: str) -> int:
    """Free-parameter count entering the BIC penalty."""
    if cov_type == "spherical":
        return K * (d + 1) + K - 1
    if cov_type == "diag":
        return K * 2 * d + K - 1
    if cov_type == "tied":
        return K * d + d * (d + 1) // 2 + K - 1
    if cov_type == "full":
        return K * d + K * d * (d + 1) // 2 + K - 1
    raise ValueError(f"unknown covariance type {cov_type!r}")


def bic_score(model: GmmModel, X) -> float:
    """BIC = p ln(n) - 2 ln L; lower is better."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    p = free_parameters(model.n_components, d, model.cov_type)
    total_ll = float(model.score_samples(X).sum())
    return p * math.log(n) - 2.0 * total_ll


@dataclass
class BicSweepResult:
    grid: dict[tuple[int, str], float]  # (K, cov_type) -> BIC
    best: tuple[int, str]

    def to_rows(self) -> list[tuple[int, str, float]]:
        return sorted((k, t, v) for (k, t), v in self.grid.items())


def bic_sweep(X, K_max: int = 20, seed: int = 0,
              cov_types: tuple[str, ...] = COV_TYPES) -> BicSweepResult:
    """Fit every (K, covariance type) pair and score each fit with BIC."""
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    grid: dict[tuple[int, str], float] = {}
    for cov_type in cov_types:
        for K in range(1, K_max + 1):
            model = fit_gmm(X, K, cov_type=cov_type, seed=seed)
            grid[(K, cov_type)] = bic_score(model, X)
    best = min(grid, key=lambda key: (grid[key], key[0], key[1]))
    return BicSweepResult(grid=grid, best=best)


def write_bic_csv(path: str | Path, result: BicSweepResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["components", "cov_type", "bic"])
        for K, cov_type, value in result.to_rows():
            writer.writerow([K, cov_type, repr(value)])


def gmm_outliers(model: GmmModel, X, percentile: float = 95.0,
                 calibration_scores: np.ndarray | None = None
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Flag the lowest-density rows: log-density below the (100 - p) cut."""
    scores = model.score_samples(X)
    cal = scores if calibration_scores is None else np.asarray(calibration_scores, float)
    if cal.size == 0:
        raise EmptyScores("no calibration scores to threshold")
    threshold = np.percentile(cal, 100.0 - percentile)
    return scores < threshold, scores


def write_outlier_csv(path: str | Path, flags, scores,
                      meta: list[dict[str, str]] | None = None,
                      labels: list[str] | None = None) -> None:
    """Flags and scores joined to each flow's identity for analyst triage.

    ``meta`` is the per-row metadata kept by the dataset loader (the flow
    6-tuple and timestamp); missing metadata leaves those cells empty.
    """
    flags = np.asarray(flags, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    meta_cols: list[str] = []
    if meta:
        for row in meta:
            for key in row:
                if key not in meta_cols:
                    meta_cols.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(meta_cols + ["decision", "score", "Label"])
        for i in range(len(flags)):
            row = [meta[i].get(c, "") if meta else "" for c in meta_cols]
            row += ["outlier" if flags[i] else "inlier", repr(float(scores[i])),
                    labels[i] if labels else ""]
            writer.writerow(row)
