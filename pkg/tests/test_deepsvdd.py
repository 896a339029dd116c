import numpy as np
import pytest

from flowcam.deepsvdd import (
    DeepSvddConfig,
    DeepSvddModel,
    forward,
    init_center,
    init_weights,
    svdd_loss,
    svdd_loss_and_grads,
    train_deep_svdd,
)
from flowcam.errors import WidthMismatch


def small_config(**kwargs):
    defaults = dict(input_dim=6, hidden_dim=32, latent_dim=4, epochs=30,
                    batch_size=64, seed=0)
    defaults.update(kwargs)
    return DeepSvddConfig(**defaults)


def test_default_config_is_the_operating_point():
    cfg = DeepSvddConfig()
    assert cfg.input_dim == 10
    assert cfg.hidden_dim == 512
    assert cfg.latent_dim == 8
    assert cfg.learning_rate == 1e-4
    assert cfg.epochs == 150
    assert cfg.threshold_percentile == 95.0


def test_glorot_init_bounds_and_shapes():
    cfg = DeepSvddConfig()
    W = init_weights(cfg, np.random.default_rng(0))
    assert [w.shape for w in W] == [(10, 512), (512, 512), (512, 8)]
    for w in W:
        limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        assert np.abs(w).max() <= limit


def test_center_snap_guard():
    cfg = small_config()
    W = init_weights(cfg, np.random.default_rng(1))
    X = np.random.default_rng(2).normal(scale=0.001, size=(50, 6))
    c = init_center(W, X, guard=0.1)
    assert (np.abs(c) >= 0.1 - 1e-12).all()


def test_loss_zero_when_outputs_equal_center():
    cfg = small_config()
    W = init_weights(cfg, np.random.default_rng(3))
    x = np.random.default_rng(4).normal(size=(1, 6))
    X = np.repeat(x, 20, axis=0)
    c = forward(W, X)[0]  # constant outputs: every row equals this
    assert svdd_loss(W, X, c) == 0.0


def test_loss_near_zero_after_center_init_on_equal_inputs():
    cfg = small_config()
    W = init_weights(cfg, np.random.default_rng(5))
    X = np.repeat(np.random.default_rng(6).normal(size=(1, 6)), 50, axis=0)
    c = forward(W, X).mean(axis=0)
    assert svdd_loss(W, X, c) <= 1e-28


@pytest.mark.parametrize("sample", range(5))
def test_gradient_matches_central_finite_differences(sample):
    cfg = DeepSvddConfig(seed=10 + sample)
    rng = np.random.default_rng(20 + sample)
    W = init_weights(cfg, rng)
    x = rng.normal(size=(1, 10))
    c = rng.normal(size=8) * 2.0
    _, grads = svdd_loss_and_grads(W, x, c)
    h = 1e-6
    for li in range(3):
        for _ in range(15):
            i = int(rng.integers(W[li].shape[0]))
            j = int(rng.integers(W[li].shape[1]))
            Wp = [w.copy() for w in W]
            Wm = [w.copy() for w in W]
            Wp[li][i, j] += h
            Wm[li][i, j] -= h
            fd = (svdd_loss(Wp, x, c) - svdd_loss(Wm, x, c)) / (2.0 * h)
            g = grads[li][i, j]
            denom = max(abs(fd), abs(g))
            if denom > 1e-10:
                assert abs(fd - g) / denom <= 1e-4


def test_training_loss_drops_on_gaussian_data():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(1000, 6))
    model = train_deep_svdd(X, small_config(epochs=30))
    assert model.epoch_loss[-1] < model.epoch_loss[0]


def test_threshold_flags_five_percent_of_training():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(400, 6))
    model = train_deep_svdd(X, small_config(epochs=10))
    assert model.is_outlier(X).sum() == 20  # 5% of 400


def test_far_points_are_outliers():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(600, 6))
    model = train_deep_svdd(X, small_config(epochs=40))
    far = rng.normal(loc=8.0, size=(100, 6))
    assert model.is_outlier(far).mean() >= 0.9


def test_width_mismatch():
    rng = np.random.default_rng(3)
    with pytest.raises(WidthMismatch):
        train_deep_svdd(rng.normal(size=(50, 4)), small_config())
    model = train_deep_svdd(rng.normal(size=(50, 6)), small_config(epochs=2))
    with pytest.raises(WidthMismatch):
        model.distances(np.zeros((3, 9)))


def test_training_is_bit_reproducible():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(200, 6))
    m1 = train_deep_svdd(X, small_config(epochs=5))
    m2 = train_deep_svdd(X, small_config(epochs=5))
    for w1, w2 in zip(m1.weights, m2.weights):
        assert np.array_equal(w1, w2)
    assert m1.threshold == m2.threshold
    assert np.array_equal(m1.center, m2.center)


def test_soft_boundary_mode_trains_and_flags():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(300, 6))
    model = train_deep_svdd(X, small_config(epochs=15, mode="soft-boundary", nu=0.1))
    assert model.radius2 > 0.0
    assert 0.0 < model.is_outlier(X).mean() < 0.3
