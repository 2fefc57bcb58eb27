"""Tape-based reverse-mode automatic differentiation on dense float64 arrays.

Values are numpy arrays recorded as nodes on an explicit ``Tape``. Nodes are
appended in creation order, which is a valid topological order, so reverse
accumulation is a single backward sweep over ``tape.nodes``. Arrays are never
mutated after a node is built; replaying a tape reproduces the cached forward
values bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .kernels import conv2d_backward_input, conv2d_backward_kernels, conv2d_forward


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an operation is called outside its contract."""


def as_f64(values) -> np.ndarray:
    """Coerce to a float64 ndarray without copying when already one."""
    return np.asarray(values, dtype=np.float64)


class Node:
    """One recorded value on a tape.

    ``parents`` holds ``(parent_node, pull)`` pairs where ``pull(grad)``
    maps the gradient at this node to the contribution for that parent.
    ``recompute`` re-runs the forward primitive from parent values (used by
    ``Tape.replay``); leaves have no recompute.
    """

    __slots__ = ("tape", "value", "parents", "recompute", "name", "index")

    def __init__(self, tape, value, parents=(), recompute=None, name=""):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.recompute = recompute
        self.name = name
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Ordered record of primitive operations; single-owner, single-threaded."""

    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, values, name="") -> Node:
        return Node(self, as_f64(values), name=name)

    def replay(self) -> None:
        """Re-run every non-leaf forward computation in recorded order."""
        for node in self.nodes:
            if node.recompute is not None:
                node.value = node.recompute()


class GradientMap:
    """Gradients of a scalar loss keyed by node identity."""

    def __init__(self, grads: dict[int, np.ndarray], tape: Tape):
        self._grads = grads
        self._tape = tape

    def wrt(self, node: Node) -> np.ndarray:
        """Gradient with respect to ``node``; zeros if the loss never saw it."""
        if node.tape is not self._tape:
            raise ContractError("node belongs to a different tape")
        g = self._grads.get(node.index)
        if g is None:
            return np.zeros_like(node.value)
        return g


def grad(loss: Node) -> GradientMap:
    """Reverse accumulation from a scalar loss node over its whole tape."""
    if loss.value.shape != ():
        raise ContractError(
            f"grad() needs a scalar root, got shape {loss.value.shape}"
        )
    tape = loss.tape
    grads: dict[int, np.ndarray] = {loss.index: np.ones(())}
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = grads.get(node.index)
        if g is None:
            continue
        for parent, pull in node.parents:
            contrib = pull(g)
            if parent.index in grads:
                grads[parent.index] = grads[parent.index] + contrib
            else:
                grads[parent.index] = contrib
    return GradientMap(grads, tape)


def _same_tape(*nodes: Node) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ContractError("operands recorded on different tapes")
    return tape


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    try:
        value = a.value + b.value
    except ValueError:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")
    parents = (
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(g, b.value.shape)),
    )
    return Node(tape, value, parents, lambda: a.value + b.value, "add")


def sub(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    try:
        value = a.value - b.value
    except ValueError:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}")
    parents = (
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(-g, b.value.shape)),
    )
    return Node(tape, value, parents, lambda: a.value - b.value, "sub")


def mul(a: Node, b: Node) -> Node:
    """Elementwise (broadcasting) product."""
    tape = _same_tape(a, b)
    try:
        value = a.value * b.value
    except ValueError:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    parents = (
        (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
    )
    return Node(tape, value, parents, lambda: a.value * b.value, "mul")


def scale(a: Node, k: float) -> Node:
    """Product with a constant scalar (constant is not differentiated)."""
    k = float(k)
    return Node(a.tape, a.value * k, ((a, lambda g: g * k),), lambda: a.value * k, "scale")


def mul_const(a: Node, arr) -> Node:
    """Elementwise product with a constant array (e.g. a dropout mask)."""
    arr = as_f64(arr)
    return Node(
        a.tape, a.value * arr, ((a, lambda g: g * arr),), lambda: a.value * arr, "mul_const"
    )


def matmul(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    parents = (
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    )
    return Node(tape, a.value @ b.value, parents, lambda: a.value @ b.value, "matmul")


def relu(a: Node) -> Node:
    value = np.maximum(a.value, 0.0)
    mask = a.value > 0.0
    return Node(
        a.tape,
        value,
        ((a, lambda g: g * mask),),
        lambda: np.maximum(a.value, 0.0),
        "relu",
    )


def reshape(a: Node, shape) -> Node:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.value.size:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}")
    return Node(
        a.tape,
        a.value.reshape(shape),
        ((a, lambda g: g.reshape(a.value.shape)),),
        lambda: a.value.reshape(shape),
        "reshape",
    )


def sum_all(a: Node) -> Node:
    return Node(
        a.tape,
        np.asarray(a.value.sum()),
        ((a, lambda g: np.broadcast_to(g, a.value.shape).copy()),),
        lambda: np.asarray(a.value.sum()),
        "sum",
    )


def _conv_geometry(in_shape, kern_shape, stride, padding):
    c, h, w = in_shape
    f, kc, kh, kw = kern_shape
    if kc != c:
        raise DimensionError(f"kernel channels {kc} != input channels {c}")
    if padding == "valid":
        ph = pw = 0
    elif padding == "same":
        # Output spatial extents equal ceil(in/stride); standard same padding.
        ph = max((int(np.ceil(h / stride)) - 1) * stride + kh - h, 0)
        pw = max((int(np.ceil(w / stride)) - 1) * stride + kw - w, 0)
    else:
        raise ContractError(f"padding must be 'same' or 'valid', got {padding!r}")
    if kh > h + ph or kw > w + pw:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input {h + ph}x{w + pw}"
        )
    ho = (h + ph - kh) // stride + 1
    wo = (w + pw - kw) // stride + 1
    return ph, pw, ho, wo


def conv2d(x: Node, kernels: Node, stride: int = 1, padding: str = "valid") -> Node:
    """Cross-correlation of a C*H*W input with F*C*kh*kw kernels.

    No kernel flip; output is F*H'*W' per the standard valid/same formulas.
    """
    tape = _same_tape(x, kernels)
    if x.value.ndim != 3 or kernels.value.ndim != 4:
        raise DimensionError(
            f"conv2d expects CxHxW input and FxCxKhxKw kernels, got {x.shape} / {kernels.shape}"
        )
    if stride < 1:
        raise ContractError("stride must be >= 1")
    ph, pw, _, _ = _conv_geometry(x.shape, kernels.shape, stride, padding)

    def forward():
        return conv2d_forward(x.value[None], kernels.value, stride, ph, pw)[0]

    value = forward()
    parents = (
        (
            x,
            lambda g: conv2d_backward_input(
                g[None], kernels.value, x.value.shape[1:], stride, ph, pw
            )[0],
        ),
        (
            kernels,
            lambda g: conv2d_backward_kernels(
                g[None], x.value[None], kernels.value.shape, stride, ph, pw
            ),
        ),
    )
    return Node(tape, value, parents, forward, "conv2d")


def conv2d_batch(x: Node, kernels: Node, stride: int = 1, padding: str = "valid") -> Node:
    """Batched variant of conv2d: N*C*H*W -> N*F*H'*W'."""
    tape = _same_tape(x, kernels)
    if x.value.ndim != 4 or kernels.value.ndim != 4:
        raise DimensionError(
            f"conv2d_batch expects NxCxHxW input, got {x.shape} / {kernels.shape}"
        )
    ph, pw, _, _ = _conv_geometry(x.shape[1:], kernels.shape, stride, padding)

    def forward():
        return conv2d_forward(x.value, kernels.value, stride, ph, pw)

    value = forward()
    parents = (
        (
            x,
            lambda g: conv2d_backward_input(
                g, kernels.value, x.value.shape[2:], stride, ph, pw
            ),
        ),
        (
            kernels,
            lambda g: conv2d_backward_kernels(
                g, x.value, kernels.value.shape, stride, ph, pw
            ),
        ),
    )
    return Node(tape, value, parents, forward, "conv2d_batch")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Node, target: int) -> Node:
    """-log softmax(logits)[target] with max-subtraction stabilization."""
    z = logits.value
    if z.ndim != 1:
        raise DimensionError(f"expected a logit vector, got shape {logits.shape}")
    k = z.shape[0]
    if not 0 <= target < k:
        raise IndexError(f"target {target} out of range for {k} classes")
    log_p = _log_softmax(z)
    value = np.asarray(-log_p[target])
    softmax = np.exp(log_p)
    onehot = np.zeros(k)
    onehot[target] = 1.0

    def pull(g):
        return g * (softmax - onehot)

    def forward():
        return np.asarray(-_log_softmax(logits.value)[target])

    return Node(logits.tape, value, ((logits, pull),), forward, "softmax_xent")


def softmax_cross_entropy_batch(logits: Node, targets) -> Node:
    """Mean -log softmax(logits)[i, targets[i]] over a batch of logit rows."""
    z = logits.value
    if z.ndim != 2:
        raise DimensionError(f"expected BxK logits, got shape {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    n, k = z.shape
    if targets.shape != (n,):
        raise DimensionError(f"targets shape {targets.shape} != ({n},)")
    if targets.min() < 0 or targets.max() >= k:
        raise IndexError(f"target out of range for {k} classes")
    rows = np.arange(n)
    log_p = _log_softmax(z)
    value = np.asarray(-log_p[rows, targets].mean())
    softmax = np.exp(log_p)
    onehot = np.zeros_like(z)
    onehot[rows, targets] = 1.0

    def pull(g):
        return g * (softmax - onehot) / n

    def forward():
        return np.asarray(-_log_softmax(logits.value)[rows, targets].mean())

    return Node(logits.tape, value, ((logits, pull),), forward, "softmax_xent_batch")


def pick(a: Node, index: int) -> Node:
    """Select one component of a vector node as a scalar node."""
    if a.value.ndim != 1:
        raise DimensionError(f"pick expects a vector, got shape {a.shape}")

    def pull(g):
        out = np.zeros_like(a.value)
        out[index] = g
        return out

    return Node(
        a.tape, np.asarray(a.value[index]), ((a, pull),), lambda: np.asarray(a.value[index]), "pick"
    )
