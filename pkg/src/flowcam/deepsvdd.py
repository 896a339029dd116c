"""Deep hypersphere (SVDD-style) one-class detector.

A small fully connected network with no bias terms maps inputs near a
fixed center in latent space; training minimizes the mean squared distance
to that center. Bias-free layers and a center snapped away from zero rule
out the degenerate solution where the network collapses everything onto
the center regardless of input.

The default architecture and optimizer settings are the operating point
used throughout the zero-day experiments: 10 -> 512 -> 512 -> 8 with
rectified-linear hidden activations, adaptive-moment updates at learning
rate 1e-4 for 150 epochs, and a decision threshold at the 95th percentile
of training distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyData, WidthMismatch
from .oneclass import calibrate_threshold


@dataclass(frozen=True)
class DeepSvddConfig:
    input_dim: int = 10
    hidden_dim: int = 512
    latent_dim: int = 8
    learning_rate: float = 1e-4
    epochs: int = 150
    batch_size: int = 256
    threshold_percentile: float = 95.0
    seed: int = 0
    mode: str = "one-class"  # or "soft-boundary"
    nu: float = 0.1  # soft-boundary only
    center_guard: float = 0.1


def init_weights(config: DeepSvddConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """Uniform +/- sqrt(6 / (fan_in + fan_out)) per layer, no biases."""
    dims = [config.input_dim, config.hidden_dim, config.hidden_dim, config.latent_dim]
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
    return weights


def forward(weights: list[np.ndarray], X: np.ndarray) -> np.ndarray:
    h = X
    for W in weights[:-1]:
        h = np.maximum(h @ W, 0.0)
    return h @ weights[-1]


def init_center(weights: list[np.ndarray], X: np.ndarray, guard: float = 0.1) -> np.ndarray:
    """Mean network output over the data, with small coordinates snapped to
    +/- guard so the all-zero-weights solution cannot reach the center."""
    c = forward(weights, X).mean(axis=0)
    small = np.abs(c) < guard
    c[small] = np.where(c[small] >= 0.0, guard, -guard)
    return c


def svdd_loss(weights: list[np.ndarray], X: np.ndarray, c: np.ndarray) -> float:
    diff = forward(weights, X) - c
    return float((diff * diff).sum(axis=1).mean())


def svdd_loss_and_grads(weights: list[np.ndarray], X: np.ndarray, c: np.ndarray
                        ) -> tuple[float, list[np.ndarray]]:
    """Mean squared distance to the center and its gradient per layer."""
    W1, W2, W3 = weights
    Z1 = X @ W1
    A1 = np.maximum(Z1, 0.0)
    Z2 = A1 @ W2
    A2 = np.maximum(Z2, 0.0)
    out = A2 @ W3
    diff = out - c
    loss = float((diff * diff).sum(axis=1).mean())
    dout = 2.0 * diff / len(X)
    g3 = A2.T @ dout
    dA2 = dout @ W3.T
    dZ2 = dA2 * (Z2 > 0.0)
    g2 = A1.T @ dZ2
    dA1 = dZ2 @ W2.T
    dZ1 = dA1 * (Z1 > 0.0)
    g1 = X.T @ dZ1
    return loss, [g1, g2, g3]


@dataclass
class DeepSvddModel:
    weights: list[np.ndarray]
    center: np.ndarray
    threshold: float
    config: DeepSvddConfig
    radius2: float = 0.0  # soft-boundary mode only
    epoch_loss: list[float] = field(default_factory=list)

    def distances(self, X) -> np.ndarray:
        """Squared latent distance to the center."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.config.input_dim:
            raise WidthMismatch(
                f"expected {self.config.input_dim} features, got {X.shape[1]}")
        diff = forward(self.weights, X) - self.center
        return (diff * diff).sum(axis=1)

    def outlier_scores(self, X) -> np.ndarray:
        return self.distances(X)

    def is_outlier(self, X) -> np.ndarray:
        return self.distances(X) > self.threshold


class _Adam:
    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def train_deep_svdd(X, config: DeepSvddConfig | None = None) -> DeepSvddModel:
    """Mini-batch training of the hypersphere objective.

    The center is fixed to the (guarded) mean initial output; the decision
    threshold is the configured percentile of training distances.
    """
    config = config or DeepSvddConfig()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if len(X) == 0:
        raise EmptyData("deep SVDD needs at least one training row")
    if X.shape[1] != config.input_dim:
        raise WidthMismatch(
            f"configured input dimension {config.input_dim} but data has {X.shape[1]} columns")

    rng = np.random.default_rng(config.seed)
    weights = init_weights(config, rng)
    center = init_center(weights, X, guard=config.center_guard)
    adam = _Adam([w.shape for w in weights], lr=config.learning_rate)
    n = len(X)
    soft = config.mode == "soft-boundary"
    radius2 = 0.0
    epoch_loss: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            batch = X[order[start:start + config.batch_size]]
            if soft:
                loss, grads = _soft_boundary_loss_and_grads(weights, batch, center,
                                                            radius2, config.nu)
            else:
                loss, grads = svdd_loss_and_grads(weights, batch, center)
            adam.step(weights, grads)
            batch_losses.append(loss)
        epoch_loss.append(float(np.mean(batch_losses)))
        if soft:
            dists = _distances(weights, X, center)
            radius2 = float(np.quantile(dists, 1.0 - config.nu))
    model = DeepSvddModel(weights=weights, center=center, threshold=0.0,
                          config=config, radius2=radius2, epoch_loss=epoch_loss)
    model.threshold = calibrate_threshold(model.distances(X), config.threshold_percentile)
    return model


def _distances(weights, X, center) -> np.ndarray:
    diff = forward(weights, X) - center
    return (diff * diff).sum(axis=1)


def _soft_boundary_loss_and_grads(weights, X, center, radius2, nu):
    """radius^2 + (1/nu) mean max(0, dist^2 - radius^2), gradient wrt weights."""
    W1, W2, W3 = weights
    Z1 = X @ W1
    A1 = np.maximum(Z1, 0.0)
    Z2 = A1 @ W2
    A2 = np.maximum(Z2, 0.0)
    out = A2 @ W3
    diff = out - center
    d2 = (diff * diff).sum(axis=1)
    over = d2 - radius2
    active = over > 0.0
    loss = radius2 + float(np.maximum(over, 0.0).mean()) / nu
    dout = (2.0 / (nu * len(X))) * diff * active[:, None]
    g3 = A2.T @ dout
    dA2 = dout @ W3.T
    dZ2 = dA2 * (Z2 > 0.0)
    g2 = A1.T @ dZ2
    dA1 = dZ2 @ W2.T
    dZ1 = dA1 * (Z1 > 0.0)
    g1 = X.T @ dZ1
    return loss, [g1, g2, g3]
