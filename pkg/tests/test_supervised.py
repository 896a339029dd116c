import math

import numpy as np
import pytest

from flowcam.errors import DimensionMismatch
from flowcam.supervised import (
    predict,
    predict_proba,
    train_gnb,
    train_knn,
    train_linear_svm,
)


def blobs(seed=0, n=200, d=3, sep=8.0, classes=2):
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=sep, size=(classes, d))
    X = np.vstack([centers[k] + rng.normal(size=(n // classes, d)) for k in range(classes)])
    y = np.repeat(np.arange(classes), n // classes)
    order = rng.permutation(len(y))
    return X[order], y[order]


# --- KNN ---------------------------------------------------------------------

def test_knn_k1_memorizes_training_points():
    X, y = blobs(seed=0, n=60)
    model = train_knn(X, y, k=1)
    assert (model.predict(X) == y).all()


def test_knn_distance_tie_broken_by_training_index():
    X = np.array([[0.0], [2.0]])
    y = np.array(["a", "b"])
    model = train_knn(X, y, k=1)
    # query at 1.0 is equidistant; the earlier training row wins
    assert model.predict([[1.0]])[0] == "a"
    flipped = train_knn(X[::-1].copy(), y[::-1].copy(), k=1)
    assert flipped.predict([[1.0]])[0] == "b"


def test_knn_proba_counts_over_k():
    X = np.array([[0.0], [0.1], [0.2], [5.0], [5.1]])
    y = np.array([0, 0, 0, 1, 1])
    model = train_knn(X, y, k=5)
    assert model.predict_proba([[0.0]])[0].tolist() == [0.6, 0.4]


# --- Gaussian naive Bayes ------------------------------------------------------

def gnb_log_posterior_oracle(model, x):
    """Direct density evaluation with the model's own means/variances."""
    out = []
    for k in range(len(model.classes)):
        lp = model.log_priors[k]
        for j in range(model.means.shape[1]):
            mu, var = model.means[k, j], model.variances[k, j]
            lp += -0.5 * math.log(2 * math.pi * var) - (x[j] - mu) ** 2 / (2 * var)
        out.append(lp)
    return np.array(out)


def test_gnb_hand_computed_four_point_example():
    X = np.array([[0.0], [2.0], [10.0], [12.0]])
    y = np.array(["A", "A", "B", "B"])
    model = train_gnb(X, y)
    # population variance of {0,2,10,12} is 26, so the floor is 26e-9
    eps = 1e-9 * 26.0
    assert model.means[:, 0].tolist() == [1.0, 11.0]
    assert model.variances[:, 0] == pytest.approx([1.0 + eps, 1.0 + eps])
    assert model.predict([[1.0], [11.0]]).tolist() == ["A", "B"]

    # hand posterior at x=1: densities N(1;1,1+eps) vs N(1;11,1+eps)
    var = 1.0 + eps
    log_a = math.log(0.5) - 0.5 * math.log(2 * math.pi * var) - 0.0
    log_b = math.log(0.5) - 0.5 * math.log(2 * math.pi * var) - 100.0 / (2 * var)
    got = model.log_posteriors([[1.0]])[0]
    assert got[0] == pytest.approx(log_a, abs=1e-9)
    assert got[1] == pytest.approx(log_b, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_gnb_matches_density_oracle_on_tiny_sets(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 11))
    X = rng.normal(size=(n, 3))
    y = rng.integers(0, 2, n)
    if len(np.unique(y)) < 2:
        y[0] = 1 - y[0]
    model = train_gnb(X, y)
    for x in rng.normal(size=(5, 3)):
        got = model.log_posteriors([x])[0]
        want = gnb_log_posterior_oracle(model, x)
        assert got == pytest.approx(want, abs=1e-9)


# --- linear SVM ----------------------------------------------------------------

def test_linear_svm_separable_blobs_no_training_violations():
    X, y = blobs(seed=3, n=120, sep=10.0)
    model = train_linear_svm(X, y, epochs=200, seed=0)
    assert (model.predict(X) == y).all()


def test_linear_svm_multiclass_and_proba_rows_sum_to_one():
    X, y = blobs(seed=4, n=150, classes=3, sep=10.0)
    model = train_linear_svm(X, y, epochs=200, seed=0)
    assert (model.predict(X) == y).mean() >= 0.98
    proba = model.predict_proba(X)
    assert proba.sum(axis=1) == pytest.approx(np.ones(len(X)))
    assert (model.classes[np.argmax(proba, axis=1)] == model.predict(X)).all()
    assert np.isfinite(model.weights).all()


def test_linear_svm_deterministic_under_seed():
    X, y = blobs(seed=5, n=80)
    m1 = train_linear_svm(X, y, epochs=20, seed=1)
    m2 = train_linear_svm(X, y, epochs=20, seed=1)
    assert np.array_equal(m1.weights, m2.weights) and np.array_equal(m1.biases, m2.biases)


# --- generic dispatch ------------------------------------------------------------

def test_dimension_mismatch_raised():
    X, y = blobs(seed=6, n=40)
    for model in (train_knn(X, y), train_gnb(X, y), train_linear_svm(X, y, epochs=5)):
        with pytest.raises(DimensionMismatch):
            model.predict(np.zeros((3, X.shape[1] + 1)))


def test_generic_predict_functions_dispatch():
    X, y = blobs(seed=7, n=40)
    model = train_knn(X, y, k=3)
    assert (predict(model, X) == model.predict(X)).all()
    assert np.array_equal(predict_proba(model, X), model.predict_proba(X))
    with pytest.raises(TypeError):
        predict(object(), X)
