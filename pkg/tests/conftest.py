"""Shared fixtures: the two-moons reference runs used across the suite.

Training is deterministic, so every fixture is reproducible; they are
session-scoped because the augmented runs take a few seconds each.
"""

import numpy as np
import pytest

from dustbin_lab.attacks import AttackConfig
from dustbin_lab.datasets import (
    InterpolationConfig,
    MixSpec,
    adversarial_dustbin,
    build_mix,
    interpolate,
    synthetic_outdist,
    two_moons,
)
from dustbin_lab.models import ModelConfig, TrainConfig, build, train

MOON_NOISE = 0.08


@pytest.fixture(scope="session")
def moons_train():
    return two_moons(300, MOON_NOISE, seed=42)


@pytest.fixture(scope="session")
def moons_test():
    return two_moons(200, MOON_NOISE, seed=43)


def _train_naive(moons, seed):
    model = build(ModelConfig("mlp3", (2,), 2, hidden=32), seed=seed)
    cfg = TrainConfig(0.2, 32, 200, seed=seed, optimizer="sgd-momentum")
    return train(model, moons, cfg)[0]


@pytest.fixture(scope="session")
def naive_model(moons_train):
    return _train_naive(moons_train, seed=1)


@pytest.fixture(scope="session")
def naive_source(moons_train):
    """Same architecture and data, different initial weights (transfer source)."""
    return _train_naive(moons_train, seed=11)


@pytest.fixture(scope="session")
def uniform_outdist(moons_train):
    return synthetic_outdist("uniform-box", 400, seed=7, domain=moons_train.domain, dim=2)


@pytest.fixture(scope="session")
def interp_set(moons_train, naive_model):
    return interpolate(moons_train, naive_model, InterpolationConfig(0.5, 200, seed=8))


@pytest.fixture(scope="session")
def augmented_model(moons_train, uniform_outdist, interp_set):
    """Out-dist + interpolated dustbin sources (the representative recipe)."""
    mix = build_mix(
        moons_train, uniform_outdist, interp_set, None, MixSpec(600, 400, 200), seed=9
    )
    model = build(ModelConfig("mlp3", (2,), 2, augmented=True, hidden=64), seed=2)
    cfg = TrainConfig(0.05, 32, 800, seed=2, optimizer="sgd-momentum")
    return train(model, mix, cfg)[0]


@pytest.fixture(scope="session")
def ifgs_config():
    return AttackConfig(epsilon=0.03, clip_radius=0.3, iterations=20)


@pytest.fixture(scope="session")
def adv_only_model(moons_train, naive_model, ifgs_config):
    """Dustbin trained only on iterative signed-gradient adversaries."""
    advs = adversarial_dustbin(moons_train, naive_model, ifgs_config, 400, seed=12)
    mix = build_mix(moons_train, None, None, advs, MixSpec(600, 0, 0, 400), seed=13)
    model = build(ModelConfig("mlp3", (2,), 2, augmented=True, hidden=64), seed=3)
    cfg = TrainConfig(0.05, 32, 800, seed=3, optimizer="sgd-momentum")
    return train(model, mix, cfg)[0]


@pytest.fixture(scope="session")
def ring_outdist(moons_train):
    """Held-out out-distribution set, never used in any training mix."""
    return synthetic_outdist(
        "ring", 400, seed=15, domain=moons_train.domain, dim=2, radius=3.0, sigma=0.1
    )


class LinearModel:
    """Softmax-linear classifier exposing the attack-facing surface.

    logits(x) = W^T x + b with W of shape (d, K); closed forms make it the
    oracle model for attack tests.
    """

    class _Cfg:
        def __init__(self, k, d):
            self.augmented = False
            self.input_shape = (d,)
            self.k_classes = k

    def __init__(self, weights, biases):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.biases = np.asarray(biases, dtype=np.float64)
        d, k = self.weights.shape
        self.config = self._Cfg(k, d)

    @property
    def k_classes(self):
        return self.config.k_classes

    @property
    def output_dim(self):
        return self.weights.shape[1]

    def logits(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x @ self.weights + self.biases

    def probs(self, x):
        z = self.logits(x)
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def predict(self, x):
        z = self.logits(x)
        return int(np.argmax(z)) if z.ndim == 1 else np.argmax(z, axis=1)

    def grad_loss_x(self, x, y):
        z = self.logits(x)
        p = np.exp(z - z.max())
        p /= p.sum()
        onehot = np.zeros_like(p)
        onehot[y] = 1.0
        return float(-np.log(p[y])), self.weights @ (p - onehot)

    def grad_logit_x(self, x, k):
        return self.logits(x).copy(), self.weights[:, k].copy()


@pytest.fixture
def linear_model_factory():
    return LinearModel
