"""Model construction, inference contracts, training, and checkpoints."""

import math

import numpy as np
import pytest

from dustbin_lab import autodiff as ad
from dustbin_lab.datasets import MixSpec, build_mix, synthetic_outdist, two_moons
from dustbin_lab.models import (
    CheckpointError,
    ConfigError,
    LabelError,
    Model,
    ModelConfig,
    TrainConfig,
    build,
    load_checkpoint,
    predict_with_reject,
    save_checkpoint,
    train,
)


class TestBuild:
    def test_augmented_adds_one_output(self):
        cfg = ModelConfig("mlp3", (2,), 2, augmented=True)
        model = build(cfg, seed=0)
        assert model.output_dim == 3
        assert model.logits(np.zeros(2)).shape == (3,)

    def test_naive_output_is_k(self):
        model = build(ModelConfig("mlp3", (2,), 2), seed=0)
        assert model.output_dim == 2

    def test_same_seed_identical_params(self):
        cfg = ModelConfig("mlp3", (4,), 3, hidden=8)
        a = build(cfg, seed=5)
        b = build(cfg, seed=5)
        for pa, pb in zip(a.params, b.params):
            assert np.array_equal(pa, pb)

    def test_lenet_small_filter_counts(self):
        cfg = ModelConfig("lenet-small", (1, 28, 28), 10)
        model = build(cfg, seed=0)
        shapes = {n: p.shape for n, p in zip(model.param_names, model.params)}
        assert shapes["conv1"] == (32, 1, 5, 5)
        assert shapes["conv2"] == (32, 32, 5, 5)
        assert shapes["conv3"] == (64, 32, 5, 5)
        assert shapes["wfc"] == (64 * 16 * 16, 10)

    def test_unsupported_architecture(self):
        with pytest.raises(ConfigError, match="unsupported"):
            ModelConfig("vgg", (2,), 2)


class TestInference:
    def test_zero_params_give_zero_logits(self):
        model = build(ModelConfig("mlp3", (2,), 2), seed=0)
        model.params = [np.zeros_like(p) for p in model.params]
        assert np.array_equal(model.logits([0.3, -0.7]), np.zeros(2))

    def test_probs_is_softmax_of_logits(self):
        model = build(ModelConfig("mlp3", (3,), 4, hidden=6), seed=1)
        x = np.array([0.2, -0.4, 0.9])
        z = model.logits(x)
        e = np.exp(z - z.max())
        assert np.abs(model.probs(x) - e / e.sum()).max() < 1e-12

    def test_zero_logits_give_uniform_probs(self):
        model = build(ModelConfig("mlp3", (2,), 5, hidden=4), seed=0)
        model.params = [np.zeros_like(p) for p in model.params]
        assert np.abs(model.probs(np.ones(2)) - 0.2).max() < 1e-15

    def test_hand_computed_affine_chain(self):
        # hidden width 2; weights chosen so every ReLU stays active
        model = build(ModelConfig("mlp3", (2,), 2, hidden=2), seed=0)
        model.params = [
            np.array([[1.0, 0.5], [0.0, 1.0]]),  # w1
            np.array([0.1, 0.2]),  # b1
            np.array([[1.0, 0.0], [1.0, 1.0]]),  # w2
            np.array([0.0, 0.3]),  # b2
            np.array([[2.0, -1.0], [0.5, 1.5]]),  # w3
            np.array([0.05, -0.05]),  # b3
        ]
        x = [1.0, 2.0]
        h1 = [1.0 * 1 + 0.0 * 2 + 0.1, 0.5 * 1 + 1.0 * 2 + 0.2]  # [1.1, 2.7]
        h2 = [h1[0] + h1[1] + 0.0, h1[1] + 0.3]  # [3.8, 3.0]
        want = [2.0 * h2[0] + 0.5 * h2[1] + 0.05, -1.0 * h2[0] + 1.5 * h2[1] - 0.05]
        assert np.abs(model.logits(x) - np.array(want)).max() < 1e-12

    def test_probs_sum_to_one_many_inputs(self):
        model = build(ModelConfig("mlp3", (2,), 5, hidden=8), seed=2)
        rng = np.random.default_rng(0)
        xs = rng.normal(size=(1000, 2))
        p = model.probs(xs)
        assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-12
        assert (p > 0).all() and (p < 1).all()

    def test_argmax_probs_equals_argmax_logits(self):
        model = build(ModelConfig("mlp3", (2,), 3, hidden=8), seed=3)
        rng = np.random.default_rng(1)
        xs = rng.normal(size=(200, 2))
        assert np.array_equal(
            np.argmax(model.probs(xs), axis=1), np.argmax(model.logits(xs), axis=1)
        )

    def test_feature_length_matches_hidden(self):
        model = build(ModelConfig("mlp3", (2,), 2, hidden=16), seed=0)
        assert model.features(np.zeros(2)).shape == (16,)

    def test_features_nonnegative_and_deterministic(self):
        model = build(ModelConfig("mlp3", (2,), 2, hidden=8), seed=4)
        x = np.array([0.5, -1.2])
        f1, f2 = model.features(x), model.features(x)
        assert (f1 >= 0).all()
        assert np.array_equal(f1, f2)

    def test_shape_mismatch(self):
        model = build(ModelConfig("mlp3", (2,), 2), seed=0)
        with pytest.raises(ad.DimensionError):
            model.logits(np.zeros(3))


class TestPredictWithReject:
    def _constant_model(self, logits):
        # zero weights, final bias = wanted logits: constant output everywhere
        model = build(ModelConfig("mlp3", (2,), len(logits) - 1, augmented=True), seed=0)
        model.params = [np.zeros_like(p) for p in model.params]
        model.params[5] = np.asarray(logits, dtype=np.float64)
        return model

    def test_dustbin_wins(self):
        model = self._constant_model([0.1, 0.2, 0.7])
        assert predict_with_reject(model, np.zeros(2)) == 2

    def test_class_zero_wins(self):
        model = self._constant_model([0.9, 0.05, 0.05])
        assert predict_with_reject(model, np.zeros(2)) == 0

    def test_tie_breaks_to_lowest_index(self):
        model = self._constant_model([0.4, 0.4, 0.2])
        assert predict_with_reject(model, np.zeros(2)) == 0

    def test_rejects_naive_model(self):
        model = build(ModelConfig("mlp3", (2,), 2), seed=0)
        with pytest.raises(ad.ContractError):
            predict_with_reject(model, np.zeros(2))

    def test_logit_scaling_invariance(self):
        model = build(ModelConfig("mlp3", (2,), 2, augmented=True, hidden=8), seed=5)
        rng = np.random.default_rng(2)
        xs = rng.normal(size=(50, 2))
        before = model.predict(xs)
        model.params[4] = model.params[4] * 3.7  # w3
        model.params[5] = model.params[5] * 3.7  # b3
        assert np.array_equal(before, model.predict(xs))


class TestTrain:
    def test_two_moons_naive_accuracy(self, moons_train, naive_model):
        preds = naive_model.predict(moons_train.stacked())
        acc = np.mean(preds == np.asarray(moons_train.labels))
        assert acc >= 0.99

    def test_zero_learning_rate_keeps_params(self, moons_train):
        model = build(ModelConfig("mlp3", (2,), 2, hidden=8), seed=6)
        before = [p.copy() for p in model.params]
        train(model, moons_train, TrainConfig(0.0, 32, 2, seed=0))
        for b, a in zip(before, model.params):
            assert np.array_equal(b, a)

    def test_augmented_uniform_square_dustbin(self, moons_train):
        out = synthetic_outdist("uniform-box", 400, seed=21, domain=moons_train.domain, dim=2)
        mix = build_mix(moons_train, out, None, None, MixSpec(600, 400), seed=22)
        model = build(ModelConfig("mlp3", (2,), 2, augmented=True, hidden=64), seed=7)
        model, _ = train(model, mix, TrainConfig(0.05, 32, 800, seed=7, optimizer="sgd-momentum"))
        preds = model.predict(mix.stacked())
        labels = np.asarray(mix.labels)
        for label in (0, 1, 2):
            m = labels == label
            assert np.mean(preds[m] == label) >= 0.97

    def test_dustbin_label_on_naive_model_raises(self, moons_train, uniform_outdist):
        mix = build_mix(moons_train, uniform_outdist, None, None, MixSpec(600, 300), seed=0)
        model = build(ModelConfig("mlp3", (2,), 2), seed=0)
        with pytest.raises(LabelError):
            train(model, mix, TrainConfig(0.1, 32, 1, seed=0))

    def test_training_is_deterministic(self, moons_train):
        def run():
            model = build(ModelConfig("mlp3", (2,), 2, hidden=8), seed=9)
            model, hist = train(model, moons_train, TrainConfig(0.1, 32, 5, seed=9))
            return model.params, hist

        p1, h1 = run()
        p2, h2 = run()
        assert h1 == h2
        for a, b in zip(p1, p2):
            assert np.array_equal(a, b)

    def test_loss_history_length(self, moons_train):
        model = build(ModelConfig("mlp3", (2,), 2, hidden=8), seed=10)
        _, hist = train(model, moons_train, TrainConfig(0.1, 64, 7, seed=0))
        assert len(hist) == 7
        assert all(math.isfinite(v) for v in hist)

    def test_dropout_training_runs(self, moons_train):
        model = build(ModelConfig("mlp3", (2,), 2, hidden=16, dropout_p=0.5), seed=11)
        model, hist = train(model, moons_train, TrainConfig(0.1, 32, 30, seed=11))
        acc = np.mean(model.predict(moons_train.stacked()) == np.asarray(moons_train.labels))
        assert acc > 0.8  # dropout only at train time; inference is deterministic


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = build(ModelConfig("mlp3", (3,), 4, augmented=True, hidden=8), seed=12)
        p1 = tmp_path / "m.ckpt"
        p2 = tmp_path / "m2.ckpt"
        save_checkpoint(model, p1)
        loaded = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert loaded.config == model.config
        for a, b in zip(model.params, loaded.params):
            assert np.array_equal(a, b)

    def test_lenet_round_trip(self, tmp_path):
        model = build(ModelConfig("lenet-small", (1, 14, 14), 3, filters=(4, 4, 8)), seed=13)
        path = tmp_path / "lenet.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        x = np.random.default_rng(0).random((1, 14, 14))
        assert np.array_equal(model.logits(x), loaded.logits(x))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        model = build(ModelConfig("mlp3", (2,), 2, hidden=4), seed=0)
        path = tmp_path / "t.ckpt"
        save_checkpoint(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 9])
        with pytest.raises((CheckpointError, ValueError)):
            load_checkpoint(path)
