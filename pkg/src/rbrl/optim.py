"""Adam and AdamW over lists of numpy arrays.

AdamW applies weight decay directly to the parameters (decoupled); Adam with a
nonzero ``weight_decay`` folds an L2 term into the gradient instead.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .nn import MlpParams


class OptimizerKind(str, Enum):
    ADAM = "adam"
    ADAMW = "adamw"


@dataclass(frozen=True)
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float | None = None  # None -> 1e-2 for AdamW, 0 for Adam

    def __post_init__(self):
        kind = OptimizerKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.weight_decay is None:
            object.__setattr__(self, "weight_decay", 1e-2 if kind is OptimizerKind.ADAMW else 0.0)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


@dataclass
class OptimizerState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        arrays = _arrays(params)
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def _arrays(p):
    return p.arrays() if isinstance(p, MlpParams) else list(p)


def optimizer_step(params, grads, config: OptimizerConfig, state: OptimizerState):
    """One in-place update. Returns ``(params, state)`` for convenience.

    Rejects non-finite gradients before touching anything.
    """
    p_arr = _arrays(params)
    g_arr = _arrays(grads)
    if len(p_arr) != len(g_arr) or len(p_arr) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    for p, g, m in zip(p_arr, g_arr, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; step rejected")

    lr, b1, b2, eps, wd = config.learning_rate, config.beta1, config.beta2, config.epsilon, config.weight_decay
    decoupled = config.kind is OptimizerKind.ADAMW
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(p_arr, g_arr, state.m, state.v):
        if not decoupled and wd:
            g = g + wd * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if decoupled:
            p -= lr * wd * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    if isinstance(params, MlpParams):
        params.version += 1
    return params, state


@dataclass
class Optimizer:
    """Bundles a config with its state for the training loops."""

    config: OptimizerConfig
    state: OptimizerState = field(default=None)

    def step(self, params, grads):
        if self.state is None:
            self.state = OptimizerState.zeros_like(params)
        optimizer_step(params, grads, self.config, self.state)
