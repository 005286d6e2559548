"""
Dense Network Core
Copyright (c) caprelu contributors - BSD-2 License

This module contains the numerical core used by every experiment:
- Activation kinds (ReLU, capped ReLU, scaled Sigmoid/Tanh, identity)
- Dense feed-forward networks and their forward traces
- Exact manual backpropagation for parameter and input gradients
- Adam optimization and the training loop
- Versioned binary checkpoints
"""

import dataclasses
import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from tqdm.auto import trange

from .data_io import batches
from .errors import ActivationError, CheckpointError, DatasetError, ShapeError
from .fileio import atomic_write_bytes

logger = logging.getLogger(__name__)

RELU = "relu"
CAPPED_RELU = "capped_relu"
SIGMOID = "sigmoid"
TANH = "tanh"
IDENTITY = "identity"

ACTIVATION_NAMES = (RELU, CAPPED_RELU, SIGMOID, TANH, IDENTITY)

_ALIASES = {
    "relu": RELU,
    "capped": CAPPED_RELU,
    "capped_relu": CAPPED_RELU,
    "cappedrelu": CAPPED_RELU,
    "sigmoid": SIGMOID,
    "tanh": TANH,
    "identity": IDENTITY,
    "linear": IDENTITY,
}

CHECKPOINT_MAGIC = b"CRLU"
CHECKPOINT_VERSION = 1
_BLOB_DTYPE = np.dtype("<f8")


# ========== Activations ==========

@dataclass(frozen=True)
class ActivationKind:
    """
    One elementwise, monotone non-decreasing activation.

    `param` is the cap beta for capped ReLU and the argument scale c for
    Sigmoid/Tanh; it is None for ReLU and identity.
    """

    name: str
    param: Optional[float] = None

    def __post_init__(self):
        if self.name not in ACTIVATION_NAMES:
            raise ActivationError(f"Unknown activation '{self.name}'")
        if self.name == CAPPED_RELU:
            if self.param is None or not np.isfinite(self.param) or self.param <= 0:
                raise ActivationError(f"Capped ReLU needs beta > 0, got {self.param}")
            object.__setattr__(self, "param", float(self.param))
        elif self.name in (SIGMOID, TANH):
            scale = 1.0 if self.param is None else float(self.param)
            if not np.isfinite(scale) or scale < 1.0:
                raise ActivationError(f"{self.name} scale must be >= 1, got {self.param}")
            object.__setattr__(self, "param", scale)
        elif self.param is not None:
            raise ActivationError(f"{self.name} takes no parameter")

    @classmethod
    def relu(cls):
        return cls(RELU)

    @classmethod
    def capped(cls, beta):
        return cls(CAPPED_RELU, beta)

    @classmethod
    def sigmoid(cls, scale=1.0):
        return cls(SIGMOID, scale)

    @classmethod
    def tanh(cls, scale=1.0):
        return cls(TANH, scale)

    @classmethod
    def identity(cls):
        return cls(IDENTITY)

    @classmethod
    def parse(cls, text):
        """
        Parse 'relu', 'identity', 'capped:0.1', 'sigmoid:2' or 'tanh:5'.

        An ActivationKind passes through unchanged.
        """
        if isinstance(text, ActivationKind):
            return text
        raw = str(text).strip().lower()
        name, _, value = raw.partition(":")
        if name not in _ALIASES:
            raise ActivationError(f"Unknown activation '{text}'")
        return cls(_ALIASES[name], float(value) if value else None)

    @property
    def beta(self):
        return self.param if self.name == CAPPED_RELU else None

    @property
    def is_cappable(self):
        return self.name in (RELU, CAPPED_RELU)

    def apply(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.name == RELU:
            return np.maximum(z, 0.0)
        if self.name == CAPPED_RELU:
            return np.clip(z, 0.0, self.param)
        if self.name == SIGMOID:
            # 1 / (1 + exp(-c z)) without overflow
            return 0.5 * (1.0 + np.tanh(0.5 * self.param * z))
        if self.name == TANH:
            return np.tanh(self.param * z)
        return z

    def derivative(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.name == RELU:
            return (z > 0.0).astype(np.float64)
        if self.name == CAPPED_RELU:
            # subgradient 0 at both kinks
            return ((z > 0.0) & (z < self.param)).astype(np.float64)
        if self.name == SIGMOID:
            s = self.apply(z)
            return self.param * s * (1.0 - s)
        if self.name == TANH:
            t = np.tanh(self.param * z)
            return self.param * (1.0 - t * t)
        return np.ones_like(z)

    def to_dict(self):
        return {"name": self.name, "param": self.param}

    @classmethod
    def from_dict(cls, data):
        return cls(data["name"], data.get("param"))

    def __str__(self):
        if self.param is None:
            return self.name
        return f"{self.name}:{self.param:g}"


def _scalar_or_array(value, z):
    return float(value) if np.ndim(z) == 0 else value


def activation_apply(kind, z):
    """Apply an activation to a scalar or array"""
    kind = ActivationKind.parse(kind)
    return _scalar_or_array(kind.apply(z), z)


def activation_derivative(kind, z):
    """Derivative (subgradient 0 at kinks) of an activation at a scalar or array"""
    kind = ActivationKind.parse(kind)
    return _scalar_or_array(kind.derivative(z), z)


# ========== Layers and Networks ==========

@dataclass
class DenseLayer:
    """Affine map z = a_prev @ W.T + b followed by an activation"""

    weights: np.ndarray
    bias: np.ndarray
    activation: ActivationKind

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.activation = ActivationKind.parse(self.activation)
        if self.weights.ndim != 2:
            raise ShapeError(f"Weights must be a matrix, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"Bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ShapeError("Layer parameters must be finite")

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]


@dataclass
class ForwardTrace:
    """Per-layer pre- and post-activations of one batch"""

    inputs: np.ndarray
    pre: List[np.ndarray]
    post: List[np.ndarray]

    @property
    def logits(self):
        return self.post[-1]

    @property
    def hidden(self):
        return self.post[:-1]


class Network:
    """
    Ordered stack of dense layers ending in an identity layer (the logits Z).

    Softmax is never part of the network; it is applied by the loss and by
    `predict_proba`.
    """

    def __init__(self, layers, seed=None):
        layers = list(layers)
        if not layers:
            raise ShapeError("A network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise ShapeError(
                    f"Layer {i} expects {layers[i].in_dim} inputs but layer {i - 1} "
                    f"produces {layers[i - 1].out_dim}"
                )
        if layers[-1].activation.name != IDENTITY:
            raise ActivationError("The output layer must use the identity activation")
        self.layers = layers
        self.seed = seed

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def num_classes(self):
        return self.layers[-1].out_dim

    @property
    def dims(self):
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    @property
    def activations(self):
        return [layer.activation for layer in self.layers]

    @property
    def hidden_layer_indices(self):
        return list(range(len(self.layers) - 1))

    @property
    def cap_values(self):
        """Beta of each layer, None where the layer is not capped"""
        return [layer.activation.beta for layer in self.layers]

    def parameters(self):
        """Live parameter arrays in the order [W0, b0, W1, b1, ...]"""
        params = []
        for layer in self.layers:
            params.extend([layer.weights, layer.bias])
        return params

    def copy(self):
        layers = [
            DenseLayer(layer.weights.copy(), layer.bias.copy(), layer.activation)
            for layer in self.layers
        ]
        return Network(layers, seed=self.seed)

    def forward(self, x):
        return forward(self, x)

    def logits(self, x):
        return forward(self, x).logits

    def predict_proba(self, x):
        return softmax(self.logits(x))

    def predict(self, x):
        """Argmax of the logits; ties go to the lowest class index"""
        return np.argmax(self.logits(x), axis=1)

    def __repr__(self):
        acts = ", ".join(str(a) for a in self.activations)
        return f"Network(dims={self.dims}, activations=[{acts}])"


def build_network(dims, activations, seed=0):
    """
    Create a network with uniform He-style initialization.

    Weights are drawn from U(-sqrt(6/in_dim), +sqrt(6/in_dim)), biases start at 0.

    Args:
        dims: [input_dim, hidden..., num_classes]
        activations: one ActivationKind (or parseable string) per layer
        seed: PRNG seed; identical seeds give bitwise-identical networks

    Returns:
        Network
    """
    dims = [int(d) for d in dims]
    activations = [ActivationKind.parse(a) for a in activations]
    if len(dims) < 2 or len(activations) != len(dims) - 1:
        raise ShapeError(
            f"Need len(activations) == len(dims) - 1, got {len(activations)} and {len(dims)}"
        )
    if any(d <= 0 for d in dims):
        raise ShapeError(f"Layer sizes must be positive, got {dims}")

    rng = np.random.default_rng(seed)
    layers = []
    for in_dim, out_dim, act in zip(dims[:-1], dims[1:], activations):
        limit = np.sqrt(6.0 / in_dim)
        weights = rng.uniform(-limit, limit, size=(out_dim, in_dim))
        layers.append(DenseLayer(weights, np.zeros(out_dim), act))
    return Network(layers, seed=seed)


def set_cap(net, layer_selector, beta):
    """
    Cap the selected layers at beta without touching their weights.

    The returned network shares parameter arrays with `net`; only the
    activation kinds differ. Cap values are an inference-time knob.

    Args:
        net: Network
        layer_selector: iterable of 0-based layer indices (hidden layers only)
        beta: new cap value, > 0

    Returns:
        Network
    """
    selector = sorted({int(i) for i in layer_selector})
    output_index = len(net.layers) - 1
    capped = ActivationKind.capped(beta)
    layers = list(net.layers)
    for idx in selector:
        if idx < 0 or idx > output_index:
            raise ActivationError(f"Layer {idx} does not exist (network has {len(layers)})")
        if idx == output_index:
            raise ActivationError("The output layer cannot be capped")
        if not layers[idx].activation.is_cappable:
            raise ActivationError(
                f"Layer {idx} uses {layers[idx].activation.name}; only ReLU layers can be capped"
            )
        layers[idx] = dataclasses.replace(layers[idx], activation=capped)
    return Network(layers, seed=net.seed)


# ========== Forward and Backward ==========

def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[np.newaxis, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"Expected input with {net.input_dim} columns, got shape {x.shape}")
    return x, single


def forward(net, x):
    """
    Run a batch through the network and keep every intermediate result.

    Args:
        net: Network
        x: [batch x input_dim] array (a single 1-D sample is promoted)

    Returns:
        ForwardTrace with logits row i = Z(x_i)
    """
    x, _ = _as_batch(net, x)
    pre, post = [], []
    a = x
    for layer in net.layers:
        z = a @ layer.weights.T + layer.bias
        a = layer.activation.apply(z)
        pre.append(z)
        post.append(a)
    return ForwardTrace(inputs=x, pre=pre, post=post)


def _backpropagate(net, trace, grad_logits, want_params=True):
    """Push dObjective/dlogits back through the stored trace"""
    delta = grad_logits
    param_grads = [None] * (2 * len(net.layers))
    for idx in reversed(range(len(net.layers))):
        layer = net.layers[idx]
        if layer.activation.name == IDENTITY:
            dz = delta
        else:
            dz = delta * layer.activation.derivative(trace.pre[idx])
        if want_params:
            a_prev = trace.inputs if idx == 0 else trace.post[idx - 1]
            param_grads[2 * idx] = dz.T @ a_prev
            param_grads[2 * idx + 1] = dz.sum(axis=0)
        delta = dz @ layer.weights
    return param_grads, delta


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(labels, n, num_classes):
    labels = np.asarray(labels)
    if labels.ndim == 0:
        labels = np.full(n, int(labels))
    labels = labels.astype(np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise ShapeError(f"Got {labels.shape[0]} labels for a batch of {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ShapeError(f"Labels must lie in [0, {num_classes})")
    return labels


def cross_entropy(logits, labels):
    """Per-sample softmax cross-entropy"""
    logp = log_softmax(logits)
    return -logp[np.arange(logp.shape[0]), labels]


def _loss_grads_and_logits(net, x, labels):
    trace = forward(net, x)
    n = trace.inputs.shape[0]
    labels = _check_labels(labels, n, net.num_classes)
    logits = trace.logits
    loss = float(cross_entropy(logits, labels).mean())
    grad_logits = softmax(logits)
    grad_logits[np.arange(n), labels] -= 1.0
    grad_logits /= n
    grads, _ = _backpropagate(net, trace, grad_logits, want_params=True)
    return loss, grads, logits


def loss_and_param_grads(net, x, labels):
    """
    Mean softmax cross-entropy over the batch and its exact parameter gradients.

    Returns:
        tuple: (loss: float, grads: list shaped like net.parameters())
    """
    loss, grads, _ = _loss_grads_and_logits(net, x, labels)
    return loss, grads


# ========== Input Objectives ==========

class InputObjective:
    """Scalar objective of the logits, summed over the batch"""

    def logit_gradient(self, logits):
        raise NotImplementedError


class CrossEntropy(InputObjective):
    """Softmax cross-entropy against the given labels"""

    def __init__(self, labels):
        self.labels = labels

    def logit_gradient(self, logits):
        n, k = logits.shape
        labels = _check_labels(self.labels, n, k)
        grad = softmax(logits)
        grad[np.arange(n), labels] -= 1.0
        return grad


class Logit(InputObjective):
    """The raw logit Z_c of one class"""

    def __init__(self, class_index):
        self.class_index = int(class_index)

    def logit_gradient(self, logits):
        n, k = logits.shape
        if not 0 <= self.class_index < k:
            raise ShapeError(f"Class index {self.class_index} out of range [0, {k})")
        grad = np.zeros((n, k))
        grad[:, self.class_index] = 1.0
        return grad


class LogitCombination(InputObjective):
    """Weighted sum of logits, sum_c w_c Z_c (per-sample weights allowed)"""

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=np.float64)

    def logit_gradient(self, logits):
        try:
            return np.broadcast_to(self.weights, logits.shape).copy()
        except ValueError as exc:
            raise ShapeError(f"Weights {self.weights.shape} do not fit logits {logits.shape}") from exc


class LogitMargin(InputObjective):
    """Z_label - Z_other per sample"""

    def __init__(self, labels, other):
        self.labels = labels
        self.other = other

    def logit_gradient(self, logits):
        n, k = logits.shape
        labels = _check_labels(self.labels, n, k)
        other = _check_labels(self.other, n, k)
        grad = np.zeros((n, k))
        rows = np.arange(n)
        grad[rows, labels] += 1.0
        grad[rows, other] -= 1.0
        return grad


def input_gradient(net, x, objective, trace=None):
    """
    Exact gradient of an objective with respect to the input.

    Args:
        net: Network
        x: input batch (or one 1-D sample)
        objective: InputObjective (CrossEntropy, Logit, LogitCombination, LogitMargin)
        trace: optional precomputed forward(net, x)

    Returns:
        array shaped like x
    """
    x_arr, single = _as_batch(net, x)
    if trace is None:
        trace = forward(net, x_arr)
    grad_logits = objective.logit_gradient(trace.logits)
    _, grad_x = _backpropagate(net, trace, grad_logits, want_params=False)
    return grad_x[0] if single else grad_x


# ========== Optimization ==========

@dataclass
class AdamState:
    """Moments, step counter and hyperparameters of an Adam optimizer"""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stability: float = 1e-8
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(state, params, grads):
    """
    One bias-corrected Adam update, applied to `params` in place.

    Returns:
        tuple: (params, state)
    """
    if len(params) != len(grads):
        raise ShapeError(f"Got {len(grads)} gradients for {len(params)} parameters")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"Gradient shape {np.shape(g)} does not match parameter {np.shape(p)}")
    if not state.m:
        state.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.v = [np.zeros_like(p, dtype=np.float64) for p in params]
    elif [m.shape for m in state.m] != [np.shape(p) for p in params]:
        raise ShapeError("Adam moments do not match the parameter shapes")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps_stability)
    return params, state


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainingHistory:
    records: List[EpochRecord] = field(default_factory=list)

    @property
    def losses(self):
        return [r.loss for r in self.records]

    @property
    def accuracies(self):
        return [r.accuracy for r in self.records]

    def to_dict(self):
        return {"epochs": [dataclasses.asdict(r) for r in self.records]}


Adversary = Callable[[Network, np.ndarray, np.ndarray], np.ndarray]


def train(net, dataset, epochs, batch_size=128, lr=0.001, seed=0,
          adversary: Optional[Adversary] = None, mixed=False,
          state: Optional[AdamState] = None, progress=None):
    """
    Train `net` in place with Adam on shuffled mini-batches.

    When `adversary` is given, every mini-batch is replaced by adversarial
    examples crafted against the current parameters (or extended with them
    when `mixed` is true).

    Args:
        net: Network, updated in place
        dataset: ImageDataset
        epochs: number of passes over the data
        batch_size: mini-batch size
        lr: Adam learning rate (ignored when `state` is passed)
        seed: shuffling seed; identical seeds give identical parameters
        adversary: optional callable (net, x, labels) -> x_adv
        mixed: train on clean + adversarial batches instead of adversarial only
        state: optional AdamState to continue from
        progress: show a tqdm progress bar; None shows it when DEBUG logging is on

    Returns:
        TrainingHistory with per-epoch mean loss and accuracy
    """
    if len(dataset) == 0:
        raise DatasetError("Cannot train on an empty dataset")
    if state is None:
        state = AdamState(lr=lr)
    history = TrainingHistory()
    params = net.parameters()

    if progress is None:
        progress = logger.isEnabledFor(logging.DEBUG)
    for epoch in trange(int(epochs), desc="train", disable=not progress):
        total_loss = 0.0
        correct = 0
        seen = 0
        for x, y in batches(dataset, batch_size, seed=[seed, epoch]):
            if adversary is not None:
                x_adv = adversary(net, x, y)
                if mixed:
                    x, y = np.concatenate([x, x_adv]), np.concatenate([y, y])
                else:
                    x = x_adv
            loss, grads, logits = _loss_grads_and_logits(net, x, y)
            adam_step(state, params, grads)
            total_loss += loss * len(y)
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
            seen += len(y)
        record = EpochRecord(epoch=epoch + 1, loss=total_loss / seen, accuracy=correct / seen)
        history.records.append(record)
        logger.info("epoch %d/%d loss=%.4f acc=%.4f", record.epoch, epochs,
                    record.loss, record.accuracy)
    return history


# ========== Checkpoints ==========

def save_checkpoint(net, path, provenance=None):
    """
    Write a versioned binary checkpoint.

    Layout: b"CRLU" | u32 version | u32 header length | JSON header |
    row-major little-endian float64 weight and bias blobs in layer order.
    """
    header = {
        "dims": net.dims,
        "activations": [a.to_dict() for a in net.activations],
        "caps": net.cap_values,
        "seed": net.seed,
        "provenance": provenance or {},
        "dtype": _BLOB_DTYPE.str,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)), header_bytes]
    for param in net.parameters():
        chunks.append(np.ascontiguousarray(param, dtype=_BLOB_DTYPE).tobytes())
    return atomic_write_bytes(path, b"".join(chunks))


def load_checkpoint(path):
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        CheckpointError: unreadable, corrupt, truncated, wrong version or inconsistent dims
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise CheckpointError(f"Cannot read checkpoint {path}: {exc}") from exc

    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a capped-ReLU checkpoint (bad magic or too short)")
    version, header_len = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path} has format version {version}, expected {CHECKPOINT_VERSION}"
        )
    header_end = 12 + header_len
    if len(data) < header_end:
        raise CheckpointError(f"{path} is truncated inside its header")
    try:
        header = json.loads(data[12:header_end].decode("utf-8"))
        dims = [int(d) for d in header["dims"]]
        activations = [ActivationKind.from_dict(a) for a in header["activations"]]
    except (ValueError, KeyError, TypeError, ActivationError) as exc:
        raise CheckpointError(f"{path} has a corrupt header: {exc}") from exc
    if len(activations) != len(dims) - 1:
        raise CheckpointError(f"{path}: {len(activations)} activations for dims {dims}")

    shapes = []
    for in_dim, out_dim in zip(dims[:-1], dims[1:]):
        shapes.extend([(out_dim, in_dim), (out_dim,)])
    expected = sum(int(np.prod(s)) for s in shapes) * _BLOB_DTYPE.itemsize
    payload = data[header_end:]
    if len(payload) != expected:
        raise CheckpointError(
            f"{path} is corrupt: expected {expected} parameter bytes, found {len(payload)}"
        )

    arrays = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype=_BLOB_DTYPE, count=count, offset=offset)
        arrays.append(arr.reshape(shape).astype(np.float64))
        offset += count * _BLOB_DTYPE.itemsize

    try:
        layers = [
            DenseLayer(arrays[2 * i], arrays[2 * i + 1], activations[i])
            for i in range(len(activations))
        ]
        return Network(layers, seed=header.get("seed"))
    except (ShapeError, ActivationError) as exc:
        raise CheckpointError(f"{path} is inconsistent: {exc}") from exc


def checkpoint_provenance(path):
    """Return the provenance block stored in a checkpoint header"""
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12 or head[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a capped-ReLU checkpoint")
        _, header_len = struct.unpack("<II", head[4:12])
        try:
            return json.loads(f.read(header_len).decode("utf-8")).get("provenance", {})
        except ValueError as exc:
            raise CheckpointError(f"{path} has a corrupt header: {exc}") from exc

