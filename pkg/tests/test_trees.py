import numpy as np
import pytest

from flowcam import trees
from flowcam.errors import EmptyData
from flowcam.trees import train_cart, train_forest, train_gbt


def blobs(seed=0, n=200, d=4, sep=6.0, classes=2):
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=sep, size=(classes, d))
    X = np.vstack([centers[k] + rng.normal(size=(n // classes, d)) for k in range(classes)])
    y = np.repeat(np.arange(classes), n // classes)
    order = rng.permutation(len(y))
    return X[order], y[order]


# --- CART -------------------------------------------------------------------

def test_cart_linear_split_gives_depth_one_tree():
    X = np.array([[0.0], [1.0], [2.0], [10.0], [11.0], [12.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    model = train_cart(X, y)
    assert model.tree.n_nodes == 3  # root + two leaves
    assert model.tree.feature[0] == 0
    assert model.tree.threshold[0] == pytest.approx(6.0)  # midpoint of 2 and 10
    assert (model.predict(X) == y).all()


def test_cart_contradictory_point_mixed_leaf_majority():
    X = np.array([[1.0], [1.0], [1.0]])
    y = np.array([0, 1, 1])
    model = train_cart(X, y)
    assert model.tree.n_nodes == 1
    assert model.tree.counts[0].tolist() == [1.0, 2.0]
    assert model.predict([[1.0]])[0] == 1
    assert model.predict_proba([[1.0]])[0].tolist() == [1 / 3, 2 / 3]


def brute_force_root_split(X, y, min_leaf=1):
    """Exhaustive search over every feature and midpoint, documented tie rules."""
    n, d = X.shape
    classes = np.unique(y)
    best = None
    for f in range(d):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = (a + b) / 2
            left = X[:, f] <= thr
            nl, nr = left.sum(), n - left.sum()
            if nl < min_leaf or nr < min_leaf:
                continue
            gini_sum = 0.0
            for mask, m in ((left, nl), (~left, nr)):
                counts = np.array([(y[mask] == c).sum() for c in classes], dtype=float)
                gini_sum += m * (1.0 - ((counts / m) ** 2).sum())
            cand = (gini_sum, f, thr)
            if best is None or cand[0] < best[0] - 1e-12:
                best = cand
    return best[1], best[2]


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_cart_root_split_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 3))
    y = rng.integers(0, 2, 30)
    model = train_cart(X, y)
    assert (model.predict(X) == y).all()  # unrestricted depth, consistent data
    f, thr = brute_force_root_split(X, y)
    root_gain_oracle = _weighted_gini_sum(X, y, f, thr)
    got_gain = _weighted_gini_sum(X, y, int(model.tree.feature[0]), float(model.tree.threshold[0]))
    assert got_gain == pytest.approx(root_gain_oracle, abs=1e-9)


def _weighted_gini_sum(X, y, f, thr):
    left = X[:, f] <= thr
    total = 0.0
    for mask in (left, ~left):
        m = mask.sum()
        if m == 0:
            continue
        counts = np.bincount(y[mask])
        total += m * (1.0 - ((counts / m) ** 2).sum())
    return total


def test_cart_max_depth_and_min_leaf_respected():
    X, y = blobs(seed=5, n=100)
    model = train_cart(X, y, max_depth=1)
    assert model.tree.n_nodes <= 3
    model = train_cart(X, y, min_leaf=30)
    counts = model.tree.counts[model.tree.feature < 0].sum(axis=1)
    assert (counts >= 30).all()


def test_cart_empty_raises():
    with pytest.raises(EmptyData):
        train_cart(np.empty((0, 2)), np.empty(0))


# --- forests ------------------------------------------------------------------

def test_single_bagged_tree_reproducible():
    X, y = blobs(seed=1)
    m1 = train_forest(X, y, kind="bagged", n_trees=1, seed=7)
    m2 = train_forest(X, y, kind="bagged", n_trees=1, seed=7)
    t1, t2 = m1.trees[0], m2.trees[0]
    assert np.array_equal(t1.feature, t2.feature)
    assert np.array_equal(t1.threshold, t2.threshold)
    assert np.array_equal(t1.counts, t2.counts)
    m3 = train_forest(X, y, kind="bagged", n_trees=1, seed=8)
    assert not (np.array_equal(m1.trees[0].feature, m3.trees[0].feature)
                and np.array_equal(m1.trees[0].threshold, m3.trees[0].threshold))


@pytest.mark.parametrize("kind", ["bagged", "extra"])
def test_forest_holdout_accuracy_on_blobs(kind):
    X, y = blobs(seed=2, n=200)
    model = train_forest(X[:150], y[:150], kind=kind, n_trees=50, seed=0)
    acc = (model.predict(X[150:]) == y[150:]).mean()
    assert acc >= 0.95


def test_extra_trees_constant_labels_single_leaf():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 3))
    y = np.full(40, 3)
    model = train_forest(X, y, kind="extra", n_trees=10, seed=0)
    for tree in model.trees:
        assert tree.n_nodes == 1
    assert (model.predict(X) == 3).all()


def test_forest_prediction_invariant_to_tree_order():
    X, y = blobs(seed=3, n=120, classes=3)
    model = train_forest(X, y, kind="bagged", n_trees=20, seed=0)
    base = model.predict(X)
    rng = np.random.default_rng(9)
    model.trees = [model.trees[i] for i in rng.permutation(len(model.trees))]
    assert (model.predict(X) == base).all()


# --- gradient boosting ---------------------------------------------------------

def test_gbt_zero_learning_rate_predicts_priors():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 3))
    y = np.array([0] * 40 + [1] * 15 + [2] * 5)
    model = train_gbt(X, y, n_rounds=5, learning_rate=0.0)
    proba = model.predict_proba(rng.normal(size=(10, 3)))
    assert proba == pytest.approx(np.tile([40 / 60, 15 / 60, 5 / 60], (10, 1)))
    assert (model.predict(X) == 0).all()


def test_gbt_training_deviance_nonincreasing():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(150, 5))
    y = rng.integers(0, 3, 150)
    model = train_gbt(X, y, n_rounds=25, learning_rate=0.2, max_depth=3)
    dev = model.train_deviance
    assert len(dev) == 26
    assert all(b <= a + 1e-12 for a, b in zip(dev, dev[1:]))


def test_gbt_one_round_full_depth_matches_cart_like_fit():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(25, 3))
    y = rng.integers(0, 2, 25)
    gbt = train_gbt(X, y, n_rounds=1, learning_rate=1.0, max_depth=None)
    cart = train_cart(X, y)
    assert (gbt.predict(X) == y).all()
    assert (gbt.predict(X) == cart.predict(X)).all()


# --- shared invariants -----------------------------------------------------------

def test_monotone_transform_preserves_predictions_on_training_points():
    X, y = blobs(seed=6, n=80, d=3, classes=3)
    transforms = [lambda v: v ** 3, lambda v: np.exp(v / 4), lambda v: 2 * v + 1]
    Xt = np.column_stack([transforms[j](X[:, j]) for j in range(3)])
    pairs = [
        (train_cart(X, y), train_cart(Xt, y)),
        (train_forest(X, y, kind="bagged", n_trees=10, seed=0),
         train_forest(Xt, y, kind="bagged", n_trees=10, seed=0)),
        (train_gbt(X, y, n_rounds=5, learning_rate=0.5, max_depth=3),
         train_gbt(Xt, y, n_rounds=5, learning_rate=0.5, max_depth=3)),
    ]
    for original, transformed in pairs:
        assert (original.predict(X) == transformed.predict(Xt)).all()
        # thresholds genuinely changed for at least one split
    assert not np.allclose(pairs[0][0].tree.threshold, pairs[0][1].tree.threshold)


@pytest.mark.parametrize("seed", [0, 1])
def test_predict_proba_argmax_equals_predict(seed):
    X, y = blobs(seed=seed, n=90, classes=3)
    models = [
        train_cart(X, y),
        train_forest(X, y, kind="bagged", n_trees=15, seed=seed),
        train_forest(X, y, kind="extra", n_trees=15, seed=seed),
        train_gbt(X, y, n_rounds=5, learning_rate=0.3, max_depth=3),
    ]
    rng = np.random.default_rng(seed)
    Q = rng.normal(scale=4.0, size=(40, X.shape[1]))
    for model in models:
        proba = model.predict_proba(Q)
        assert proba.sum(axis=1) == pytest.approx(np.ones(len(Q)))
        assert (model.classes[np.argmax(proba, axis=1)] == model.predict(Q)).all()


def test_string_labels_sorted_class_order():
    X = np.array([[0.0], [1.0], [10.0], [11.0]])
    y = np.array(["SpyBulb", "SpyBulb", "Netatmo", "Netatmo"])
    model = train_cart(X, y)
    assert model.classes.tolist() == ["Netatmo", "SpyBulb"]
    assert model.predict([[0.5], [10.5]]).tolist() == ["SpyBulb", "Netatmo"]
