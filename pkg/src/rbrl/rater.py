"""Synthetic rater: rates segments by true return against equal partitions
of a maximum reward (class i covers [i, i+1) * max_reward / n)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import SegmentBuffer
from .reward import RatingDataset


@dataclass(frozen=True)
class RaterConfig:
    n_classes: int = 2
    max_reward: float = 25.0
    budget: int = 200

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        if not self.max_reward > 0:
            raise ValueError("max_reward must be positive")
        if self.budget < 1:
            raise ValueError("budget must be positive")

    @property
    def boundaries(self):
        return [self.max_reward * i / self.n_classes for i in range(1, self.n_classes)]


def rate_segment(true_return: float, cfg: RaterConfig) -> int:
    if not math.isfinite(true_return):
        raise ValueError("true_return must be finite")
    label = math.floor(true_return * cfg.n_classes / cfg.max_reward)
    return min(max(label, 0), cfg.n_classes - 1)


def rate_returns(true_returns, cfg: RaterConfig) -> np.ndarray:
    r = np.asarray(true_returns, dtype=float)
    return np.clip(np.floor(r * cfg.n_classes / cfg.max_reward), 0, cfg.n_classes - 1).astype(np.int64)


def rate_buffer(buffer: SegmentBuffer, cfg: RaterConfig, rng: np.random.Generator,
                budget: int | None = None) -> RatingDataset:
    """Rate ``budget`` segments drawn uniformly without replacement."""
    budget = cfg.budget if budget is None else budget
    if budget > len(buffer):
        raise ValueError(f"buffer holds {len(buffer)} segments, budget is {budget}")
    idx = np.sort(rng.choice(len(buffer), size=budget, replace=False))
    labels = rate_returns(buffer.true_returns[idx], cfg)
    return RatingDataset(buffer.states[idx], buffer.actions[idx], labels, cfg.n_classes)
