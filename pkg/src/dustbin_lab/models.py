"""Naive (K-class) and augmented (K+1-class) classifiers.

Two architectures are supported: ``mlp3`` (three weight layers with ReLU
between them) and ``lenet-small`` (three 5x5 convolution layers of 32/32/64
filters followed by a single fully connected softmax head). The dustbin
class, when enabled, is always the last output index K.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad

CHECKPOINT_MAGIC = b"DBLM"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Invalid model or training configuration."""


class LabelError(ValueError):
    """A label is outside the model's output range."""


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


@dataclass
class ModelConfig:
    architecture: str  # "mlp3" | "lenet-small"
    input_shape: tuple
    k_classes: int
    augmented: bool = False
    hidden: int = 32  # mlp3 hidden width
    filters: tuple = (32, 32, 64)  # lenet-small conv filter counts
    kernel_size: int = 5
    dropout_p: float = 0.0

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self.filters = tuple(self.filters)
        if self.architecture not in ("mlp3", "lenet-small"):
            raise ConfigError(f"unsupported architecture {self.architecture!r}")
        if self.architecture == "mlp3" and len(self.input_shape) != 1:
            raise ConfigError("mlp3 expects a flat input shape")
        if self.architecture == "lenet-small":
            if len(self.input_shape) != 3:
                raise ConfigError("lenet-small expects a CxHxW input shape")
            if len(self.filters) != 3:
                raise ConfigError("lenet-small takes exactly three filter counts")
        if self.k_classes < 2:
            raise ConfigError("need at least two in-distribution classes")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must be in [0, 1)")

    @property
    def output_dim(self) -> int:
        return self.k_classes + 1 if self.augmented else self.k_classes

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    optimizer: str = "sgd"  # "sgd" | "sgd-momentum"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "sgd-momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


def _lenet_geometry(config: ModelConfig):
    """Spatial extents after each valid 5x5 convolution."""
    c, h, w = config.input_shape
    k = config.kernel_size
    dims = []
    for _ in config.filters:
        h, w = h - k + 1, w - k + 1
        if h < 1 or w < 1:
            raise ConfigError(
                f"input {config.input_shape} too small for three {k}x{k} convolutions"
            )
        dims.append((h, w))
    return dims


class Model:
    """A built classifier: immutable once training finishes.

    ``params`` is the ordered list of weight/bias arrays; ``param_names``
    parallels it. Inference methods never mutate state, so a trained model
    is safe to share across threads.
    """

    def __init__(self, config: ModelConfig, params: list, param_names: list):
        self.config = config
        self.params = params
        self.param_names = param_names

    @property
    def k_classes(self) -> int:
        return self.config.k_classes

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    @property
    def dustbin_label(self) -> int:
        return self.config.k_classes

    # -- forward graph ---------------------------------------------------

    def _build_forward(self, tape, x_node, param_nodes, dropout_mask=None):
        """Returns (logits_node, features_node) for a batch input node."""
        cfg = self.config
        if cfg.architecture == "mlp3":
            w1, b1, w2, b2, w3, b3 = param_nodes
            h1 = ad.relu(ad.add(ad.matmul(x_node, w1), b1))
            h2 = ad.relu(ad.add(ad.matmul(h1, w2), b2))
            feats = h2
            if dropout_mask is not None:
                feats = ad.mul_const(feats, dropout_mask)
            logits = ad.add(ad.matmul(feats, w3), b3)
            return logits, h2
        # lenet-small
        cur = x_node
        for i in range(3):
            kern = param_nodes[2 * i]
            bias = param_nodes[2 * i + 1]
            conv = ad.conv2d_batch(cur, kern, stride=1, padding="valid")
            bias3 = ad.reshape(bias, (bias.value.shape[0], 1, 1))
            cur = ad.relu(ad.add(conv, bias3))
        n = cur.value.shape[0]
        flat = ad.reshape(cur, (n, cur.value[0].size))
        feats = flat
        if dropout_mask is not None:
            feats = ad.mul_const(feats, dropout_mask)
        wfc, bfc = param_nodes[6], param_nodes[7]
        logits = ad.add(ad.matmul(feats, wfc), bfc)
        return logits, flat

    def _batchify(self, x) -> np.ndarray:
        x = ad.as_f64(x)
        if x.shape == self.config.input_shape:
            return x[None]
        if x.shape[1:] == self.config.input_shape:
            return x
        raise ad.DimensionError(
            f"input shape {x.shape} does not match model input {self.config.input_shape}"
        )

    def _forward_values(self, xb: np.ndarray):
        tape = ad.Tape()
        x_node = tape.leaf(xb)
        param_nodes = [tape.leaf(p) for p in self.params]
        logits, feats = self._build_forward(tape, x_node, param_nodes)
        return logits.value, feats.value

    # -- inference -------------------------------------------------------

    def logits(self, x) -> np.ndarray:
        """Pre-softmax scores Z(x); dropout inactive."""
        xb = self._batchify(x)
        out = self._forward_values(xb)[0]
        return out[0] if ad.as_f64(x).shape == self.config.input_shape else out

    def probs(self, x) -> np.ndarray:
        z = self.logits(x)
        shifted = z - z.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    def features(self, x) -> np.ndarray:
        """Activations feeding the classifier head (post-ReLU)."""
        xb = self._batchify(x)
        out = self._forward_values(xb)[1]
        return out[0] if ad.as_f64(x).shape == self.config.input_shape else out

    def predict(self, x):
        z = self.logits(x)
        return int(np.argmax(z)) if z.ndim == 1 else np.argmax(z, axis=1)

    # -- gradients for attacks --------------------------------------------

    def grad_loss_x(self, x, y: int):
        """Loss J(F(x), y) and its gradient with respect to the input."""
        if not 0 <= y < self.output_dim:
            raise LabelError(f"label {y} out of range for {self.output_dim} outputs")
        tape = ad.Tape()
        x_node = tape.leaf(ad.as_f64(x)[None])
        param_nodes = [tape.leaf(p) for p in self.params]
        logits, _ = self._build_forward(tape, x_node, param_nodes)
        loss = ad.softmax_cross_entropy_batch(logits, [y])
        g = ad.grad(loss)
        return float(loss.value), g.wrt(x_node)[0]

    def grad_logit_x(self, x, k: int):
        """All logits at x and the gradient of logit k with respect to x."""
        if not 0 <= k < self.output_dim:
            raise LabelError(f"class {k} out of range for {self.output_dim} outputs")
        tape = ad.Tape()
        x_node = tape.leaf(ad.as_f64(x)[None])
        param_nodes = [tape.leaf(p) for p in self.params]
        logits, _ = self._build_forward(tape, x_node, param_nodes)
        zk = ad.pick(ad.reshape(logits, (logits.value.shape[1],)), k)
        g = ad.grad(zk)
        return logits.value[0].copy(), g.wrt(x_node)[0]


def build(config: ModelConfig, seed: int) -> Model:
    """Initialize parameters with scaled uniform fan-in draws from the seed."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params, names = [], []
    if config.architecture == "mlp3":
        d = config.input_shape[0]
        h = config.hidden
        out = config.output_dim
        for name, shape, fan in (
            ("w1", (d, h), d),
            ("b1", (h,), d),
            ("w2", (h, h), h),
            ("b2", (h,), h),
            ("w3", (h, out), h),
            ("b3", (out,), h),
        ):
            arr = uniform(shape, fan) if name.startswith("w") else np.zeros(shape)
            params.append(arr)
            names.append(name)
    else:
        c_in = config.input_shape[0]
        k = config.kernel_size
        _lenet_geometry(config)  # validates spatial extents
        for i, f in enumerate(config.filters):
            fan = c_in * k * k
            params.append(uniform((f, c_in, k, k), fan))
            names.append(f"conv{i + 1}")
            params.append(np.zeros((f,)))
            names.append(f"bconv{i + 1}")
            c_in = f
        h_last, w_last = _lenet_geometry(config)[-1]
        feat = config.filters[-1] * h_last * w_last
        params.append(uniform((feat, config.output_dim), feat))
        names.append("wfc")
        params.append(np.zeros((config.output_dim,)))
        names.append("bfc")
    return Model(config, params, names)


def predict_with_reject(model: Model, x):
    """Argmax over K+1 outputs; index K means dustbin. Ties pick the lowest index."""
    if not model.config.augmented:
        raise ad.ContractError("predict_with_reject requires an augmented model")
    return model.predict(x)


def train(model: Model, data, cfg: TrainConfig):
    """Minibatch gradient descent on softmax cross-entropy.

    ``data`` is a LabeledSet-like object with ``samples`` and ``labels``.
    Returns (model, per-epoch mean loss history); deterministic given
    (config, data, seed).
    """
    labels = np.asarray(data.labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= model.output_dim):
        raise LabelError(
            f"labels must lie in [0, {model.output_dim}); got max {labels.max()}"
        )
    xs = np.stack([ad.as_f64(s) for s in data.samples])
    rng = np.random.default_rng(cfg.seed)
    n = xs.shape[0]
    p = model.config.dropout_p
    feat_dim = model.features(xs[0]).size if p > 0.0 else 0
    velocity = [np.zeros_like(q) for q in model.params]
    momentum = 0.9 if cfg.optimizer == "sgd-momentum" else 0.0
    history = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, yb = xs[idx], labels[idx]
            tape = ad.Tape()
            x_node = tape.leaf(xb)
            param_nodes = [tape.leaf(q) for q in model.params]
            mask = None
            if p > 0.0:
                keep = rng.random((len(idx), feat_dim)) >= p
                mask = keep / (1.0 - p)  # inverted dropout
            logits, _ = model._build_forward(tape, x_node, param_nodes, mask)
            loss = ad.softmax_cross_entropy_batch(logits, yb)
            grads = ad.grad(loss)
            epoch_loss += float(loss.value) * len(idx)
            if cfg.learning_rate > 0.0:
                for j, node in enumerate(param_nodes):
                    g = grads.wrt(node)
                    velocity[j] = momentum * velocity[j] - cfg.learning_rate * g
                    model.params[j] = model.params[j] + velocity[j]
        history.append(epoch_loss / n)
    return model, history


# -- checkpoint container -------------------------------------------------


def save_checkpoint(model: Model, path) -> None:
    """Versioned binary container; round-trips bit-exactly."""
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    cfg_bytes = json.dumps(
        model.config.to_dict(), sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    blob += struct.pack("<I", len(cfg_bytes))
    blob += cfg_bytes
    blob += struct.pack("<I", len(model.params))
    for arr in model.params:
        blob += struct.pack("<I", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.astype("<f8").tobytes()
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_checkpoint(path) -> Model:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    off = 4
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    config = ModelConfig.from_dict(json.loads(blob[off : off + cfg_len].decode("utf-8")))
    off += cfg_len
    (n_params,) = struct.unpack_from("<I", blob, off)
    off += 4
    params = []
    for _ in range(n_params):
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        params.append(arr.astype(np.float64))
    if off != len(blob):
        raise CheckpointError("trailing bytes after last parameter array")
    reference = build(config, seed=0)
    if len(params) != len(reference.params):
        raise CheckpointError("parameter count does not match the configuration")
    for got, want in zip(params, reference.params):
        if got.shape != want.shape:
            raise CheckpointError(
                f"parameter shape {got.shape} does not match config shape {want.shape}"
            )
    return Model(config, params, reference.param_names)
