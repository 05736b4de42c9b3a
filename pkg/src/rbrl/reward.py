"""Reward inference from categorical segment ratings.

Per batch: sum per-step rewards into segment returns, min-max normalize them,
place class bounds so that bin counts match the rating counts, score each
segment against every class, and minimize the rating cross-entropy.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import _kernels
from .nn import MlpParams, MlpSpec, backward, forward, init_params, predict, sample_dropout_masks
from .optim import Optimizer, OptimizerConfig

logger = logging.getLogger(__name__)

RATINGS_FORMAT = "rbrl-ratings"
RATINGS_VERSION = 1


class RewardDivergenceError(RuntimeError):
    """Reward-model training produced a non-finite loss."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class Segment:
    states: np.ndarray  # (L, state_dim)
    actions: np.ndarray  # (L, action_dim)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.actions = np.atleast_2d(np.asarray(self.actions, dtype=float))
        if len(self.states) != len(self.actions):
            raise ValueError("states and actions differ in length")

    def inputs(self):
        return np.concatenate([self.states, self.actions], axis=1)


@dataclass
class RatingDataset:
    states: np.ndarray  # (N, L, state_dim)
    actions: np.ndarray  # (N, L, action_dim)
    labels: np.ndarray  # (N,) ints in [0, n_classes)
    n_classes: int

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.n_classes < 2:
            raise ValueError("need at least two rating classes")
        if self.states.ndim != 3 or self.actions.ndim != 3:
            raise ValueError("states/actions must be (N, L, dim)")
        n = len(self.labels)
        if self.states.shape[0] != n or self.actions.shape[0] != n:
            raise ValueError("labels and segments differ in count")
        if self.states.shape[1] != self.actions.shape[1]:
            raise ValueError("state and action segment lengths differ")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label outside [0, n_classes)")

    def __len__(self):
        return len(self.labels)

    @property
    def segment_length(self):
        return self.states.shape[1]

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    def segment(self, i) -> Segment:
        return Segment(self.states[i], self.actions[i])

    def subset(self, idx) -> "RatingDataset":
        return RatingDataset(self.states[idx], self.actions[idx], self.labels[idx], self.n_classes)

    def inputs(self):
        return np.concatenate([self.states, self.actions], axis=2)

    def to_jsonl(self, path):
        """One header line, then one ``{"states", "actions", "label"}`` line per segment."""
        header = {
            "format": RATINGS_FORMAT,
            "version": RATINGS_VERSION,
            "n_classes": int(self.n_classes),
            "segment_length": int(self.segment_length),
            "state_dim": int(self.states.shape[2]),
            "action_dim": int(self.actions.shape[2]),
        }
        with open(path, "w") as f:
            f.write(json.dumps(header) + "\n")
            for s, a, y in zip(self.states, self.actions, self.labels):
                f.write(json.dumps({"states": s.tolist(), "actions": a.tolist(), "label": int(y)}) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "RatingDataset":
        lines = Path(path).read_text().splitlines()
        header = json.loads(lines[0])
        if header.get("format") != RATINGS_FORMAT:
            raise ValueError(f"{path} is not a ratings file")
        if header.get("version") != RATINGS_VERSION:
            raise ValueError(f"unsupported ratings version {header.get('version')}")
        recs = [json.loads(line) for line in lines[1:] if line.strip()]
        L, ds, da = header["segment_length"], header["state_dim"], header["action_dim"]
        states = np.array([r["states"] for r in recs], dtype=float).reshape(len(recs), L, ds)
        actions = np.array([r["actions"] for r in recs], dtype=float).reshape(len(recs), L, da)
        return cls(states, actions, np.array([r["label"] for r in recs]), header["n_classes"])


@dataclass(frozen=True)
class ClassBounds:
    bounds: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        object.__setattr__(self, "bounds", b)
        if b.ndim != 1 or len(b) < 3:
            raise ValueError("need at least two classes (three bounds)")
        if b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) < 0):
            raise ValueError(f"bounds must run non-decreasingly from 0 to 1: {b}")

    @property
    def n_classes(self):
        return len(self.bounds) - 1

    @property
    def midpoints(self):
        return 0.5 * (self.bounds[:-1] + self.bounds[1:])


class QVariant(str, Enum):
    ORIGINAL = "original"  # interval form: -k (r - lo)(r - hi)
    MIDPOINT = "midpoint"  # distance to interval centre: -k (r - mid)^2


@dataclass(frozen=True)
class QConfig:
    variant: QVariant = QVariant.ORIGINAL
    k: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "variant", QVariant(self.variant))
        if not self.k > 0:
            raise ValueError("confidence index k must be positive")

    @property
    def kernel_variant(self):
        return _kernels.ORIGINAL if self.variant is QVariant.ORIGINAL else _kernels.MIDPOINT


@dataclass
class RewardModel:
    spec: MlpSpec
    params: MlpParams

    @classmethod
    def create(cls, spec: MlpSpec, rng: np.random.Generator):
        return cls(spec, init_params(spec, rng))

    def reward(self, states, actions):
        """Per-step rewards for (..., dim) arrays, dropout off."""
        x = np.concatenate([np.asarray(states, float), np.asarray(actions, float)], axis=-1)
        lead = x.shape[:-1]
        return predict(self.params, self.spec, x.reshape(-1, x.shape[-1]))[:, 0].reshape(lead)


@dataclass(frozen=True)
class RewardTrainerConfig:
    mlp: MlpSpec
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    q: QConfig = field(default_factory=QConfig)
    batch_size: int = 64
    epochs: int = 50

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def segment_return(model: RewardModel, segment: Segment) -> float:
    x = segment.inputs()
    if x.shape[1] != model.spec.input_dim:
        raise ValueError(f"segment width {x.shape[1]} != model input_dim {model.spec.input_dim}")
    return float(predict(model.params, model.spec, x)[:, 0].sum())


def normalize_batch(returns) -> np.ndarray:
    """Min-max scale to [0, 1]; an all-equal batch maps to 0.5 everywhere."""
    r = np.asarray(returns, dtype=float)
    if r.size == 0:
        raise ValueError("cannot normalize an empty batch")
    lo, hi = r.min(), r.max()
    if hi == lo:
        return np.full_like(r, 0.5)
    return (r - lo) / (hi - lo)


def estimate_bounds(normalized_returns, labels, n_classes: int) -> ClassBounds:
    """Place each inner bound midway between the last sample of the classes
    below it and the first sample above it, in sorted order."""
    r = np.sort(np.asarray(normalized_returns, dtype=float))
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)
    if len(counts) != n_classes:
        raise ValueError("label outside [0, n_classes)")
    if len(r) != counts.sum():
        raise ValueError("returns and labels differ in length")
    N = len(r)
    b = np.empty(n_classes + 1)
    b[0], b[-1] = 0.0, 1.0
    for i, c in enumerate(np.cumsum(counts)[:-1], start=1):
        if c == 0:
            b[i] = 0.0
        elif c == N:
            b[i] = 1.0
        else:
            b[i] = 0.5 * (r[c - 1] + r[c])
    # keep monotone even when inputs stray outside [0, 1]
    b = np.clip(np.maximum.accumulate(b), 0.0, 1.0)
    return ClassBounds(b)


def rebin_counts(normalized_returns, bounds: ClassBounds, counts_hint=None) -> np.ndarray:
    """Count samples per interval [lo, hi) (last interval closed).

    A value sitting exactly on a bound is ambiguous; those are resolved by
    sorted rank against ``counts_hint`` (the cumulative rating counts) when
    given, else by the half-open rule.
    """
    r = np.asarray(normalized_returns, dtype=float)
    b = bounds.bounds
    n = bounds.n_classes
    inner = b[1:-1]
    by_value = np.clip(np.searchsorted(inner, r, side="right"), 0, n - 1)
    if counts_hint is None:
        return np.bincount(by_value, minlength=n)
    cum = np.cumsum(counts_hint)
    order = np.argsort(r, kind="stable")
    rank = np.empty(len(r), dtype=np.int64)
    rank[order] = np.arange(len(r))
    by_rank = np.searchsorted(cum, rank, side="right")
    on_bound = np.isin(r, inner)
    # a rank assignment is only accepted if the value lies in that class's closed interval
    ok = (b[by_rank] <= r) & (r <= b[np.minimum(by_rank + 1, n)])
    cls = np.where(on_bound & ok, by_rank, by_value)
    return np.bincount(cls, minlength=n)


def class_probabilities(r_tilde: float, bounds: ClassBounds, q: QConfig) -> np.ndarray:
    if not math.isfinite(r_tilde):
        raise ValueError("r_tilde must be finite")
    logp, _ = _kernels.class_log_probs(np.array([r_tilde]), bounds.bounds, q.k, q.kernel_variant)
    return np.exp(logp[0])


def class_log_probabilities(r_tilde, bounds: ClassBounds, q: QConfig):
    """Batched log-probabilities (N, n) and d(logit)/d(r_tilde) (N, n)."""
    return _kernels.class_log_probs(np.asarray(r_tilde, dtype=float), bounds.bounds, q.k, q.kernel_variant)


def rating_nll(log_probs, labels) -> float:
    """Cross-entropy summed over samples for integer labels."""
    log_probs = np.atleast_2d(log_probs)
    labels = np.atleast_1d(labels)
    return float(-log_probs[np.arange(len(labels)), labels].sum())


def normalize_grad(returns, normalized, upstream):
    """Back-propagate d/d(normalized) through min-max scaling to d/d(returns)."""
    r = np.asarray(returns, dtype=float)
    lo, hi = r.min(), r.max()
    span = hi - lo
    if span == 0.0:
        return np.zeros_like(r)
    g = upstream / span
    g_out = g.copy()
    g_out[np.argmin(r)] += np.sum(g * (normalized - 1.0))
    g_out[np.argmax(r)] += np.sum(-g * normalized)
    return g_out


def cross_entropy_loss(batch: RatingDataset, model: RewardModel, q: QConfig,
                       bounds: ClassBounds | None = None, dropout_rng: np.random.Generator | None = None):
    """Sum over the batch of -log Q(label). Returns ``(loss, grads, bounds)``.

    Bounds default to the count-matched bounds of this batch and are treated
    as constants when differentiating. Dropout is active iff ``dropout_rng``
    is given.
    """
    N = len(batch)
    if N < 2:
        raise ValueError("batch needs at least two segments to normalize")
    if batch.n_classes != (bounds.n_classes if bounds is not None else batch.n_classes):
        raise ValueError("bounds and batch disagree on class count")
    L = batch.segment_length
    x = batch.inputs().reshape(N * L, -1)
    masks = sample_dropout_masks(model.spec, N * L, dropout_rng) if dropout_rng is not None else None
    out, cache = forward(model.params, model.spec, x, masks)
    returns = out[:, 0].reshape(N, L).sum(axis=1)
    r_tilde = normalize_batch(returns)
    if bounds is None:
        bounds = estimate_bounds(r_tilde, batch.labels, batch.n_classes)

    logp, dlogits = class_log_probabilities(r_tilde, bounds, q)
    idx = np.arange(N)
    loss = float(-logp[idx, batch.labels].sum())

    # dL/dlogit = Q - onehot
    dz = np.exp(logp)
    dz[idx, batch.labels] -= 1.0
    g_tilde = (dz * dlogits).sum(axis=1)
    g_returns = normalize_grad(returns, r_tilde, g_tilde)
    grads = backward(cache, np.repeat(g_returns, L)[:, None])
    return loss, grads, bounds


def train_reward_model(dataset: RatingDataset, cfg: RewardTrainerConfig, seed: int,
                       model: RewardModel | None = None):
    """Minibatch training on the rating cross-entropy.

    Returns ``(model, history)`` where ``history[e]`` is the mean per-segment
    loss over epoch ``e``. Raises :class:`RewardDivergenceError` on a
    non-finite loss.
    """
    if len(dataset) < 2:
        raise ValueError("need at least two rated segments")
    width = dataset.states.shape[2] + dataset.actions.shape[2]
    if width != cfg.mlp.input_dim:
        raise ValueError(f"dataset width {width} != reward net input_dim {cfg.mlp.input_dim}")
    rng = np.random.default_rng(seed)
    if model is None:
        model = RewardModel.create(cfg.mlp, rng)
    opt = Optimizer(cfg.optimizer)
    bs = min(cfg.batch_size, len(dataset))
    history = []
    use_dropout = cfg.mlp.dropout_rate > 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(dataset))
        starts = list(range(0, len(perm), bs))
        # fold a trailing singleton into the previous batch
        if len(starts) > 1 and len(perm) - starts[-1] < 2:
            starts.pop()
        total = 0.0
        for j, s in enumerate(starts):
            stop = starts[j + 1] if j + 1 < len(starts) else len(perm)
            batch = dataset.subset(perm[s:stop])
            loss, grads, _ = cross_entropy_loss(batch, model, cfg.q, dropout_rng=rng if use_dropout else None)
            if not math.isfinite(loss):
                raise RewardDivergenceError(f"non-finite loss at epoch {epoch}, batch {j}", history)
            try:
                opt.step(model.params, grads)
            except FloatingPointError as e:
                raise RewardDivergenceError(f"epoch {epoch}, batch {j}: {e}", history) from e
            total += loss
        history.append(total / len(dataset))
        logger.debug("reward epoch %d loss %.5f", epoch, history[-1])
    return model, history
