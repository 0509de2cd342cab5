"""Fully-connected ReLU classifier with hand-written reverse-mode gradients.

Weights are stored ``(fan_out, fan_in)`` so that row ``k`` of the last
matrix is the weight vector of output class ``k``. A batch ``X`` of shape
``(n, d)`` is propagated as ``X @ W.T + b``.

The output head is either ``"linear"`` or ``"cosine"``. The cosine head
returns ``scale * cos(h, w_k)`` where ``h`` is the last hidden activation
and ``scale`` is a learnable positive scalar; its bias vector is kept for
shape regularity but never used.

Gradients are plain lists of arrays aligned with :meth:`Network.parameters`.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import make_rng, row_normalize

CHECKPOINT_FORMAT = "harcl-network"
CHECKPOINT_VERSION = 1
COSINE_INIT_SCALE = 10.0
_EPS = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.01
    scheduler_step: int = 40
    lr_decay: float = 10.0
    weight_decay: float = 1e-6

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or self.lr_decay <= 0 or self.scheduler_step < 1:
            raise ValueError("lr, lr_decay must be positive and scheduler_step >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


# Named training presets (GEM needs a smaller learning rate on some datasets).
TRAIN_PRESETS: dict[str, dict] = {
    "default": {},
    "gem-twor": {"lr": 0.01, "scheduler_step": 40, "weight_decay": 1e-6},
    "gem-aruba": {"lr": 0.01, "scheduler_step": 40, "weight_decay": 2e-6},
    "gem-dsads": {"lr": 0.001, "scheduler_step": 50, "weight_decay": 1e-4},
}


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Step schedule: divide by ``lr_decay`` every ``scheduler_step`` epochs."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return config.lr * float(config.lr_decay) ** -(epoch // config.scheduler_step)


def default_hidden_dims(input_dim: int) -> list[int]:
    """Hidden widths ``[input_dim // 2, input_dim // 4]``, each at least 8."""
    return [max(8, input_dim // 2), max(8, input_dim // 4)]


@dataclass
class Network:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: str = "linear"
    scale: np.ndarray = field(default_factory=lambda: np.array([COSINE_INIT_SCALE]))

    def __post_init__(self):
        if self.head not in ("linear", "cosine"):
            raise ValueError(f"unknown head {self.head!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weights {w.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input width {w.shape[1]} != previous output {self.weights[i - 1].shape[0]}")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def parameters(self) -> list[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params += [w, b]
        if self.head == "cosine":
            params.append(self.scale)
        return params

    def parameter_kinds(self) -> list[str]:
        kinds = ["weight", "bias"] * len(self.weights)
        if self.head == "cosine":
            kinds.append("scale")
        return kinds

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def zeros_like(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.parameters()]


def _uniform_init(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_network(layer_dims, head: str = "linear", seed: int = 0) -> Network:
    """Build a network with uniform ``±sqrt(6/(fan_in+fan_out))`` weights and zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ValueError(f"need at least input and output dims, got {dims}")
    if any(d < 1 for d in dims):
        raise ValueError(f"all dims must be positive, got {dims}")
    rng = make_rng(seed)
    weights = [_uniform_init(rng, dout, din) for din, dout in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(d) for d in dims[1:]]
    return Network(weights, biases, head=head)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]      # input to each layer
    preacts: list[np.ndarray]     # hidden pre-activations
    features: np.ndarray          # last hidden activation (or the raw input)
    cos: np.ndarray | None = None
    feat_unit: np.ndarray | None = None
    feat_norm: np.ndarray | None = None
    w_unit: np.ndarray | None = None
    w_norm: np.ndarray | None = None


def _check_batch(net: Network, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(f"batch has shape {X.shape}, network expects (n, {net.input_dim})")
    return X


def forward(net: Network, X) -> tuple[ForwardCache, np.ndarray]:
    X = _check_batch(net, X)
    inputs, preacts = [], []
    a = X
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        inputs.append(a)
        z = a @ w.T + b
        preacts.append(z)
        a = np.maximum(z, 0.0)
    inputs.append(a)
    cache = ForwardCache(inputs, preacts, a)
    w_out = net.weights[-1]
    if net.head == "linear":
        logits = a @ w_out.T + net.biases[-1]
    else:
        cache.feat_unit, cache.feat_norm = row_normalize(a, _EPS)
        cache.w_unit, cache.w_norm = row_normalize(w_out, _EPS)
        cache.cos = cache.feat_unit @ cache.w_unit.T
        logits = net.scale[0] * cache.cos
    return cache, logits


def predict_logits(net: Network, X) -> np.ndarray:
    return forward(net, X)[1]


def penultimate_features(net: Network, X) -> np.ndarray:
    """Activations feeding the output layer (the input itself for a 1-layer net)."""
    X = _check_batch(net, X)
    a = X
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        a = np.maximum(a @ w.T + b, 0.0)
    return a


def _unit_backward(d_unit: np.ndarray, unit: np.ndarray, norm: np.ndarray) -> np.ndarray:
    # d/dv of v/|v| applied row-wise; zero rows get zero gradient
    proj = np.sum(d_unit * unit, axis=1, keepdims=True)
    safe = np.where(norm < _EPS, np.inf, norm)
    return (d_unit - proj * unit) / safe[:, None]


def backward(net: Network, cache: ForwardCache, dlogits, dfeatures=None, dcos=None) -> list[np.ndarray]:
    """Gradients of a scalar loss given its gradient w.r.t. the network outputs.

    ``dlogits`` is dL/dlogits. ``dfeatures`` (optional) adds a direct
    gradient on the penultimate features; ``dcos`` (cosine head only) adds
    a gradient on the unscaled cosine similarities.
    """
    dlogits = np.asarray(dlogits, dtype=np.float64)
    n = cache.inputs[0].shape[0]
    if dlogits.shape != (n, net.num_classes):
        raise ValueError(f"dlogits shape {dlogits.shape} != {(n, net.num_classes)}")
    if dfeatures is not None and np.shape(dfeatures) != cache.features.shape:
        raise ValueError("dfeatures shape does not match the cached features")

    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.weights)
    h = cache.features
    w_out = net.weights[-1]
    dscale = None
    if net.head == "linear":
        if dcos is not None:
            raise ValueError("dcos is only defined for the cosine head")
        grads_w[-1] = dlogits.T @ h
        grads_b[-1] = dlogits.sum(axis=0)
        dh = dlogits @ w_out
    else:
        g = dlogits * net.scale[0]
        if dcos is not None:
            if np.shape(dcos) != dlogits.shape:
                raise ValueError("dcos shape does not match logits")
            g = g + dcos
        dscale = np.array([np.sum(dlogits * cache.cos)])
        d_feat_unit = g @ cache.w_unit
        d_w_unit = g.T @ cache.feat_unit
        grads_w[-1] = _unit_backward(d_w_unit, cache.w_unit, cache.w_norm)
        grads_b[-1] = np.zeros_like(net.biases[-1])
        dh = _unit_backward(d_feat_unit, cache.feat_unit, cache.feat_norm)
    if dfeatures is not None:
        dh = dh + dfeatures

    for i in range(len(net.weights) - 2, -1, -1):
        dz = dh * (cache.preacts[i] > 0)
        grads_w[i] = dz.T @ cache.inputs[i]
        grads_b[i] = dz.sum(axis=0)
        dh = dz @ net.weights[i]

    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads += [gw, gb]
    if net.head == "cosine":
        grads.append(dscale)
    return grads


def add_grads(a: list[np.ndarray], b: list[np.ndarray], scale: float = 1.0) -> list[np.ndarray]:
    if len(a) != len(b):
        raise ValueError("gradient sets have different lengths")
    return [x + scale * y for x, y in zip(a, b)]


def flatten(grads: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads])


def unflatten(vec: np.ndarray, like: list[np.ndarray]) -> list[np.ndarray]:
    out, pos = [], 0
    for p in like:
        out.append(vec[pos:pos + p.size].reshape(p.shape))
        pos += p.size
    if pos != vec.size:
        raise ValueError("vector length does not match parameter shapes")
    return out


def sgd_step(net: Network, grads: list[np.ndarray], lr: float, weight_decay: float = 0.0) -> Network:
    """In-place SGD update; L2 decay applies to weight matrices only.

    Raises ``FloatingPointError`` on a non-finite gradient so divergence
    surfaces immediately instead of poisoning the parameters.
    """
    params = net.parameters()
    if len(grads) != len(params):
        raise ValueError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient (training diverged)")
    for kind, p, g in zip(net.parameter_kinds(), params, grads):
        if kind == "weight" and weight_decay:
            p -= lr * (g + weight_decay * p)
        else:
            p -= lr * g
    if net.head == "cosine":
        net.scale[0] = max(net.scale[0], _EPS)
    return net


def expand_output_layer(net: Network, added: int, seed: int = 0) -> Network:
    """Return a copy with ``added`` fresh output rows; old rows are kept bit-exact."""
    if added < 1:
        raise ValueError("added must be >= 1")
    out = net.copy()
    w_old = out.weights[-1]
    fan_in = w_old.shape[1]
    fresh = _uniform_init(make_rng(seed), w_old.shape[0] + added, fan_in)[:added]
    out.weights[-1] = np.vstack([w_old, fresh])
    out.biases[-1] = np.concatenate([out.biases[-1], np.zeros(added)])
    return out


def save_network(net: Network, path) -> None:
    """Write a JSON checkpoint; floats are serialised with ``repr`` so they round-trip exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": net.dims,
        "head": net.head,
        "scale": float(net.scale[0]),
        "layers": [{"weights": w.tolist(), "biases": b.tolist()} for w, b in zip(net.weights, net.biases)],
    }
    Path(path).write_text(json.dumps(doc))


def load_network(path) -> Network:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a network checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    weights = [np.array(layer["weights"], dtype=np.float64) for layer in doc["layers"]]
    biases = [np.array(layer["biases"], dtype=np.float64) for layer in doc["layers"]]
    net = Network(weights, biases, head=doc["head"], scale=np.array([doc["scale"]]))
    if net.dims != doc["dims"]:
        raise ValueError(f"{path}: layer shapes disagree with declared dims")
    return net
