"""Dense MLP with hand-written forward and backward passes.

Layout: ``hidden_layers`` hidden layers of width ``hidden_width`` with a shared
activation, inverted dropout after every hidden activation, then a linear
output layer with an optional tanh squash.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

LECUN_SCALE = 1.7159
LECUN_SLOPE = 2.0 / 3.0

CHECKPOINT_FORMAT = "rbrl-mlp"
CHECKPOINT_VERSION = 1


class Activation(str, Enum):
    TANH = "tanh"
    SIGMOID = "sigmoid"
    ARCTAN = "arctan"
    LECUN_TANH = "lecun_tanh"


class Squash(str, Enum):
    NONE = "none"
    TANH = "tanh"


def activation_apply(kind, x):
    kind = Activation(kind)
    if kind is Activation.TANH:
        return np.tanh(x)
    if kind is Activation.SIGMOID:
        # split form avoids overflow in exp for large |x|
        x = np.asarray(x, dtype=float)
        e = np.exp(-np.abs(x))
        return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    if kind is Activation.ARCTAN:
        return np.arctan(x)
    return LECUN_SCALE * np.tanh(LECUN_SLOPE * x)


def activation_grad(kind, x):
    """Derivative of :func:`activation_apply` at ``x``."""
    kind = Activation(kind)
    if kind is Activation.TANH:
        t = np.tanh(x)
        return 1.0 - t * t
    if kind is Activation.SIGMOID:
        s = activation_apply(kind, x)
        return s * (1.0 - s)
    if kind is Activation.ARCTAN:
        return 1.0 / (1.0 + np.square(x))
    t = np.tanh(LECUN_SLOPE * x)
    return LECUN_SCALE * LECUN_SLOPE * (1.0 - t * t)


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_layers: int = 2
    hidden_width: int = 256
    activation: Activation = Activation.TANH
    dropout_rate: float = 0.0
    output_squash: Squash = Squash.TANH
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "output_squash", Squash(self.output_squash))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("need at least one hidden layer of positive width")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def layer_sizes(self):
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]

    def to_dict(self):
        d = asdict(self)
        d["activation"] = self.activation.value
        d["output_squash"] = self.output_squash.value
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class MlpParams:
    weights: list
    biases: list
    # bumped by every in-place update so stale forward caches can be detected
    version: int = field(default=0, compare=False)

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self):
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def check(self, spec: MlpSpec):
        sizes = spec.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("layer count does not match spec")
        for w, b, fan_in, fan_out in zip(self.weights, self.biases, sizes[:-1], sizes[1:]):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ValueError(f"layer shape {w.shape}/{b.shape} != ({fan_in}, {fan_out})")
        if not all(np.all(np.isfinite(a)) for a in self.arrays()):
            raise ValueError("non-finite parameter")


def init_params(spec: MlpSpec, rng: np.random.Generator, output_scale: float = 1.0) -> MlpParams:
    """He-uniform weights (limit sqrt(6 / fan_in)), zero biases."""
    sizes = spec.layer_sizes
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        if i == len(sizes) - 2:
            w *= output_scale
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def zero_params(spec: MlpSpec) -> MlpParams:
    sizes = spec.layer_sizes
    return MlpParams(
        [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
        [np.zeros(b) for b in sizes[1:]],
    )


def sample_dropout_masks(spec: MlpSpec, batch: int, rng: np.random.Generator):
    """Keep-masks (1 = keep) for every hidden layer, or None when dropout is off."""
    if spec.dropout_rate == 0.0:
        return None
    keep = 1.0 - spec.dropout_rate
    return [(rng.random((batch, spec.hidden_width)) < keep).astype(float) for _ in range(spec.hidden_layers)]


@dataclass
class ForwardCache:
    params: MlpParams
    version: int
    spec: MlpSpec
    inputs: list  # input to each linear layer
    pre: list  # hidden pre-activations
    masks: list | None
    output: np.ndarray
    single: bool


def forward(params: MlpParams, spec: MlpSpec, x, dropout_mask=None):
    """Run the network on one input vector or a (batch, input_dim) matrix.

    ``dropout_mask`` is a list of per-layer keep masks (training mode); pass
    None for evaluation. Returns ``(output, cache)``; for a single input with
    ``output_dim == 1`` the output is a Python float.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"expected input of width {spec.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    if dropout_mask is not None and len(dropout_mask) != spec.hidden_layers:
        raise ValueError("need one dropout mask per hidden layer")

    scale = 1.0 / (1.0 - spec.dropout_rate)
    inputs, pre = [], []
    h = x
    for i in range(spec.hidden_layers):
        inputs.append(h)
        z = h @ params.weights[i] + params.biases[i]
        pre.append(z)
        h = activation_apply(spec.activation, z)
        if dropout_mask is not None:
            h = h * (dropout_mask[i] * scale)
    inputs.append(h)
    out = h @ params.weights[-1] + params.biases[-1]
    if spec.output_squash is Squash.TANH:
        out = np.tanh(out)

    cache = ForwardCache(params, params.version, spec, inputs, pre, dropout_mask, out, single)
    if single:
        y = out[0]
        return (float(y[0]) if spec.output_dim == 1 else y), cache
    return out, cache


def predict(params: MlpParams, spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    """Evaluation-mode batched forward without building a cache."""
    h = x
    for i in range(spec.hidden_layers):
        h = activation_apply(spec.activation, h @ params.weights[i] + params.biases[i])
    out = h @ params.weights[-1] + params.biases[-1]
    if spec.output_squash is Squash.TANH:
        out = np.tanh(out)
    return out


def backward(cache: ForwardCache, upstream_grad) -> MlpParams:
    """Gradient of ``sum(upstream_grad * output)`` w.r.t. every parameter."""
    params, spec = cache.params, cache.spec
    if params.version != cache.version:
        raise ValueError("stale forward cache: parameters changed since forward()")
    out = cache.output
    g = np.asarray(upstream_grad, dtype=float)
    if g.ndim == 0:
        g = np.full(out.shape, float(g))
    elif cache.single and g.shape == (spec.output_dim,):
        g = g[None, :]
    elif g.ndim == 1 and spec.output_dim == 1 and g.shape[0] == out.shape[0]:
        g = g[:, None]
    if g.shape != out.shape:
        raise ValueError(f"upstream gradient shape {g.shape} does not match output {out.shape}")

    if spec.output_squash is Squash.TANH:
        g = g * (1.0 - out * out)

    n = len(params.weights)
    dw = [None] * n
    db = [None] * n
    scale = 1.0 / (1.0 - spec.dropout_rate)
    for i in range(n - 1, -1, -1):
        dw[i] = cache.inputs[i].T @ g
        db[i] = g.sum(axis=0)
        if i == 0:
            break
        g = g @ params.weights[i].T
        if cache.masks is not None:
            g = g * (cache.masks[i - 1] * scale)
        g = g * activation_grad(spec.activation, cache.pre[i - 1])
    return MlpParams(dw, db)


def save_checkpoint(path, params: MlpParams, spec: MlpSpec):
    """Write a JSON checkpoint.

    Field order: ``format``, ``version``, ``spec`` (MlpSpec fields), then
    ``layers`` as a list of ``{"weight": [[...]], "bias": [...]}`` from input
    to output. Weights are stored (fan_in, fan_out).
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "layers": [{"weight": w.tolist(), "bias": b.tolist()} for w, b in zip(params.weights, params.biases)],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an MLP checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    spec = MlpSpec.from_dict(doc["spec"])
    params = MlpParams(
        [np.array(layer["weight"], dtype=float).reshape(a, b) for layer, a, b in
         zip(doc["layers"], spec.layer_sizes[:-1], spec.layer_sizes[1:])],
        [np.array(layer["bias"], dtype=float) for layer in doc["layers"]],
    )
    params.check(spec)
    return params, spec
