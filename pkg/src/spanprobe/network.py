"""Feedforward network model: ground truth for validation and, behind the
oracle wrapper, the blackbox under attack.

Layers are stored in application order, so ``layers[0].weight`` is the
innermost matrix whose row span the recovery algorithms target.  Hidden
layers are bias-free; only the softmax classifier head may carry a bias.
All activations satisfy phi(0) = 0 (sigmoid and softplus are shifted to
make that hold), which the thresholded-recovery pipeline relies on.
"""

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .linalg import as_matrix, as_vector

BOUNDARY_TOL = 1e-12
_LN2 = math.log(2.0)


class BoundaryPointError(RuntimeError):
    """The point sits on (or within 1e-12 of) a ReLU activation boundary,
    where the gradient is undefined.  Callers resample."""


class WeightFormatError(ValueError):
    """A weight file failed to parse or validate."""


class UnsupportedVersionError(WeightFormatError):
    """The weight file declares a format version this build cannot read."""


class Activation(Enum):
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    SOFTPLUS = "softplus"
    IDENTITY = "identity"

    def apply(self, z):
        if self is Activation.RELU:
            return np.maximum(z, 0.0)
        if self is Activation.TANH:
            return np.tanh(z)
        if self is Activation.SIGMOID:
            # sigmoid(z) - 1/2, written in its exact tanh form
            return 0.5 * np.tanh(0.5 * z)
        if self is Activation.SOFTPLUS:
            # log(1 + e^z) - log 2, so the value at zero is zero
            return np.logaddexp(0.0, z) - _LN2
        return np.asarray(z, dtype=np.float64)

    def derivative(self, z):
        if self is Activation.RELU:
            return (z > 0).astype(np.float64)
        if self is Activation.TANH:
            t = np.tanh(z)
            return 1.0 - t * t
        if self is Activation.SIGMOID:
            t = np.tanh(0.5 * z)
            return 0.25 * (1.0 - t * t)
        if self is Activation.SOFTPLUS:
            return 0.5 * (1.0 + np.tanh(0.5 * z))
        return np.ones_like(np.asarray(z, dtype=np.float64))

    @property
    def smooth(self):
        return self is not Activation.RELU


class HeadKind(Enum):
    LINEAR = "linear"
    THRESHOLD = "threshold"
    SOFTMAX = "softmax"


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray
    activation: Activation

    def __post_init__(self):
        object.__setattr__(self, "weight", as_matrix(self.weight, "layer weight"))


@dataclass(frozen=True)
class OutputHead:
    kind: HeadKind
    weight: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "weight", as_matrix(self.weight, "head weight"))
        if self.kind is not HeadKind.SOFTMAX and self.weight.shape[0] != 1:
            raise ValueError(f"{self.kind.value} head needs a single output row")
        if self.bias is not None:
            if self.kind is not HeadKind.SOFTMAX:
                raise ValueError("bias is only permitted on the softmax head")
            b = as_vector(self.bias, dim=self.weight.shape[0], name="head bias")
            object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class Network:
    input_dim: int
    layers: tuple
    head: OutputHead
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        k, n = layers[0].weight.shape
        if n != self.input_dim:
            raise ValueError(f"layer 0 expects input dim {n}, network says {self.input_dim}")
        if k >= n:
            raise ValueError(f"inner dimension k={k} must be < input dim n={n}")
        prev = k
        for i, layer in enumerate(layers[1:], start=1):
            rows, cols = layer.weight.shape
            if cols != prev:
                raise ValueError(
                    f"layer {i} expects input dim {cols}, but layer {i - 1} outputs {prev}"
                )
            prev = rows
        if self.head.weight.shape[1] != prev:
            raise ValueError(
                f"head expects input dim {self.head.weight.shape[1]}, last layer outputs {prev}"
            )
        for layer in layers:
            if abs(float(layer.activation.apply(np.array(0.0)))) > 0.0:
                raise ValueError(f"activation {layer.activation} has phi(0) != 0")
        object.__setattr__(self, "layers", layers)

    @property
    def inner_weights(self):
        """The innermost weight matrix (k x n) whose row span is the target."""
        return self.layers[0].weight

    @property
    def inner_dim(self):
        return self.layers[0].weight.shape[0]


def _forward(net, x):
    """Pre- and post-activation values per layer for a single input."""
    pre, post = [], []
    h = x
    for layer in net.layers:
        z = layer.weight @ h
        pre.append(z)
        h = layer.activation.apply(z)
        post.append(h)
    return pre, post


def _head_value(net, hidden):
    logits = net.head.weight @ hidden
    if net.head.bias is not None:
        logits = logits + net.head.bias
    return logits


def evaluate(net, x):
    """Forward pass.  Linear head -> scalar; thresholded head -> 0.0/1.0
    (threshold at 1); softmax head -> probability vector."""
    x = as_vector(x, dim=net.input_dim, name="input")
    _, post = _forward(net, x)
    logits = _head_value(net, post[-1])
    if net.head.kind is HeadKind.LINEAR:
        return float(logits[0])
    if net.head.kind is HeadKind.THRESHOLD:
        return 1.0 if logits[0] >= 1.0 else 0.0
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    return e / np.sum(e)


def analytic_gradient(net, x, logit_index=0):
    """Gradient of the scalar output with respect to the input.

    For linear heads this is the gradient of the output itself; for softmax
    heads, of the selected pre-softmax logit.  Thresholded heads have zero
    gradient almost everywhere and are rejected; strip the threshold with
    with_linear_head first.  For ReLU layers any pre-activation within
    1e-12 of zero raises BoundaryPointError (the caller resamples).
    """
    if net.head.kind is HeadKind.THRESHOLD:
        raise ValueError("thresholded output has zero gradient a.e.; "
                         "use with_linear_head(net) for the pre-threshold map")
    x = as_vector(x, dim=net.input_dim, name="input")
    pre, _ = _forward(net, x)
    for z, layer in zip(pre, net.layers):
        if layer.activation is Activation.RELU and np.any(np.abs(z) <= BOUNDARY_TOL):
            raise BoundaryPointError("input lies on a ReLU activation boundary")
    v = net.head.weight[logit_index].copy()
    for z, layer in zip(reversed(pre), reversed(net.layers)):
        v = (v * layer.activation.derivative(z)) @ layer.weight
    return v


def sign_patterns(net, x):
    """0/1 indicator of nonzero post-activation coordinates, one vector per
    ReLU layer, innermost first."""
    x = as_vector(x, dim=net.input_dim, name="input")
    _, post = _forward(net, x)
    return [
        (h != 0.0).astype(np.uint8)
        for h, layer in zip(post, net.layers)
        if layer.activation is Activation.RELU
    ]


def with_linear_head(net, logit_index=0):
    """Replace the output head by the plain linear map it thresholds or
    classifies with, exposing the pre-decision scalar."""
    w = net.head.weight[logit_index : logit_index + 1]
    return Network(net.input_dim, net.layers, OutputHead(HeadKind.LINEAR, w), seed=net.seed)


def as_blackbox(net, logit_index=0):
    """Scalar query function suitable for wrapping in a QueryOracle.

    Linear and thresholded heads expose their output directly; softmax
    heads expose the selected pre-softmax logit (a piecewise-linear scalar
    for ReLU nets).
    """
    if net.head.kind is HeadKind.SOFTMAX:
        linear = with_linear_head(net, logit_index)
        bias = 0.0 if net.head.bias is None else float(net.head.bias[logit_index])
        return lambda x: evaluate(linear, x) + bias
    return lambda x: evaluate(net, x)


def random_network(n, k, widths, activation=Activation.RELU, head=HeadKind.LINEAR,
                   seed=0, classes=10):
    """Network with i.i.d. standard Gaussian weights, deterministic per seed.

    ``widths`` are the hidden widths after the innermost k x n matrix.  A
    linear or thresholded head taps the last width with a weight vector;
    a softmax head maps it to ``classes`` logits (bias initialized to zero).
    """
    if k >= n:
        raise ValueError(f"k must be < n, got k={k}, n={n}")
    if not widths:
        raise ValueError("need at least one hidden width")
    rng = np.random.default_rng(seed)
    layers = [Layer(rng.standard_normal((k, n)), activation)]
    prev = k
    for w in widths:
        layers.append(Layer(rng.standard_normal((w, prev)), activation))
        prev = w
    if head is HeadKind.SOFTMAX:
        out = OutputHead(HeadKind.SOFTMAX, rng.standard_normal((classes, prev)),
                         bias=np.zeros(classes))
    else:
        out = OutputHead(head, rng.standard_normal((1, prev)))
    return Network(n, tuple(layers), out, seed=seed)


def he_scaled(net):
    """Rescale weights by sqrt(2 / fan_in) (head by sqrt(1 / fan_in)).

    Positive per-layer scaling: leaves the row span of every matrix, and in
    particular of the innermost one, unchanged.  Makes standard-Gaussian
    nets trainable at MNIST-like depth.
    """
    layers = tuple(
        Layer(layer.weight * math.sqrt(2.0 / layer.weight.shape[1]), layer.activation)
        for layer in net.layers
    )
    hw = net.head.weight * math.sqrt(1.0 / net.head.weight.shape[1])
    head = OutputHead(net.head.kind, hw, bias=net.head.bias)
    return Network(net.input_dim, layers, head, seed=net.seed)


# ---------------------------------------------------------------------------
# softmax trainer (plumbing for the obfuscation demo)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    epochs: int
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")


def _batch_forward(net, X):
    pre, post = [], []
    H = X
    for layer in net.layers:
        Z = H @ layer.weight.T
        pre.append(Z)
        H = layer.activation.apply(Z)
        post.append(H)
    logits = post[-1] @ net.head.weight.T
    if net.head.bias is not None:
        logits = logits + net.head.bias
    return pre, post, logits


def _check_dataset(net, images, labels):
    X = np.asarray(images, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(f"images must be (m, {net.input_dim}), got {X.shape}")
    if y.shape != (X.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match {X.shape[0]} images")
    if X.shape[0] == 0:
        raise ValueError("dataset is empty")
    return X, y.astype(np.int64)


def softmax_loss(net, images, labels):
    """Mean cross-entropy of the softmax head on the dataset."""
    X, y = _check_dataset(net, images, labels)
    _, _, logits = _batch_forward(net, X)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logz - shifted[np.arange(len(y)), y]))


def accuracy(net, images, labels):
    X, y = _check_dataset(net, images, labels)
    _, _, logits = _batch_forward(net, X)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def train_softmax(net, images, labels, cfg):
    """Mini-batch SGD on the softmax cross-entropy loss.

    Returns a new Network; the input is left untouched.  Zero learning rate
    reproduces the input weights exactly.
    """
    if net.head.kind is not HeadKind.SOFTMAX:
        raise ValueError("train_softmax needs a softmax head")
    X, y = _check_dataset(net, images, labels)
    rng = np.random.default_rng(cfg.seed)
    weights = [layer.weight.copy() for layer in net.layers]
    acts = [layer.activation for layer in net.layers]
    hw = net.head.weight.copy()
    hb = None if net.head.bias is None else net.head.bias.copy()
    m = X.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(m)
        for start in range(0, m, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            Xb, yb = X[idx], y[idx]
            work = Network(
                net.input_dim,
                tuple(Layer(w, a) for w, a in zip(weights, acts)),
                OutputHead(HeadKind.SOFTMAX, hw, bias=hb),
            )
            pre, post, logits = _batch_forward(work, Xb)
            shifted = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            probs = e / e.sum(axis=1, keepdims=True)
            delta = probs
            delta[np.arange(len(yb)), yb] -= 1.0
            delta /= len(yb)
            grad_hw = delta.T @ post[-1]
            grad_hb = delta.sum(axis=0) if hb is not None else None
            back = delta @ hw
            grads = [None] * len(weights)
            for i in range(len(weights) - 1, -1, -1):
                dz = back * acts[i].derivative(pre[i])
                below = Xb if i == 0 else post[i - 1]
                grads[i] = dz.T @ below
                if i > 0:
                    back = dz @ weights[i]
            lr = cfg.learning_rate
            for i in range(len(weights)):
                weights[i] -= lr * grads[i]
            hw -= lr * grad_hw
            if hb is not None:
                hb -= lr * grad_hb
    return Network(
        net.input_dim,
        tuple(Layer(w, a) for w, a in zip(weights, acts)),
        OutputHead(HeadKind.SOFTMAX, hw, bias=hb),
        seed=net.seed,
    )


# ---------------------------------------------------------------------------
# SPNW v1 weight files
# ---------------------------------------------------------------------------

SPNW_VERSION = 1


def save(net, path):
    """Write the network as an SPNW v1 text document (UTF-8 JSON).

    Floats serialize as shortest round-trip decimals, so save/load is
    bitwise exact on weights.
    """
    params = {
        "rows": net.head.weight.shape[0],
        "cols": net.head.weight.shape[1],
        "weights": net.head.weight.ravel().tolist(),
    }
    if net.head.bias is not None:
        params["bias"] = net.head.bias.tolist()
    doc = {
        "version": SPNW_VERSION,
        "input_dim": net.input_dim,
        "head": {"kind": net.head.kind.value, "params": params},
        "layers": [
            {
                "rows": layer.weight.shape[0],
                "cols": layer.weight.shape[1],
                "activation": layer.activation.value,
                "weights": layer.weight.ravel().tolist(),
            }
            for layer in net.layers
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def _field(doc, key, where):
    if key not in doc:
        raise WeightFormatError(f"missing field '{key}' in {where}")
    return doc[key]


def _block_matrix(block, where):
    rows = int(_field(block, "rows", where))
    cols = int(_field(block, "cols", where))
    raw = _field(block, "weights", where)
    if len(raw) != rows * cols:
        raise WeightFormatError(
            f"{where}: expected {rows * cols} weights ({rows}x{cols}), got {len(raw)}"
        )
    return np.array(raw, dtype=np.float64).reshape(rows, cols)


def load(path):
    """Read an SPNW v1 weight file, validating the dimension chain."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise WeightFormatError(f"parse error at byte {e.pos}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise WeightFormatError("top-level document must be an object")
    version = _field(doc, "version", "document")
    if version != SPNW_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version!r}")
    input_dim = int(_field(doc, "input_dim", "document"))
    head_doc = _field(doc, "head", "document")
    layer_docs = _field(doc, "layers", "document")
    if not layer_docs:
        raise WeightFormatError("document has no layers")
    layers = []
    prev = input_dim
    for i, block in enumerate(layer_docs):
        where = f"layer {i}"
        w = _block_matrix(block, where)
        if w.shape[1] != prev:
            raise WeightFormatError(
                f"{where}: expects input dim {w.shape[1]}, chain provides {prev}"
            )
        try:
            act = Activation(_field(block, "activation", where))
        except ValueError as e:
            raise WeightFormatError(f"{where}: unknown activation") from e
        layers.append(Layer(w, act))
        prev = w.shape[0]
    where = "head"
    try:
        kind = HeadKind(_field(head_doc, "kind", where))
    except ValueError as e:
        raise WeightFormatError("head: unknown kind") from e
    params = _field(head_doc, "params", where)
    hw = _block_matrix(params, where)
    if hw.shape[1] != prev:
        raise WeightFormatError(
            f"head: expects input dim {hw.shape[1]}, chain provides {prev}"
        )
    bias = np.array(params["bias"], dtype=np.float64) if "bias" in params else None
    try:
        return Network(input_dim, tuple(layers), OutputHead(kind, hw, bias=bias))
    except ValueError as e:
        raise WeightFormatError(str(e)) from e
