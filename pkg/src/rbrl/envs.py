"""Small continuous-control tasks with closed-form per-step reward in [0, 1].

All environments are batched: states are (B, state_dim) arrays and every
method acts on a whole batch. Dynamics are explicit difference equations:

PointMass   state (px, py, vx, vy), target at the origin.
            v' = 0.8 v + 0.2 a,  p' = clip(p + 0.05 v', -2, 2)
            reward = 1 - min(1, |p|)
CartSwing   state (cos th, sin th, w), th = 0 upright.
            w' = clip(w + 0.05 (15 sin th + 6 a), -8, 8),  th' = th + 0.05 w'
            reward = (1 + cos th) / 2
LineRunner  state (v, v_target).
            v' = v + 0.1 (2 a - 0.5 v)
            reward = 1 - min(1, |v - v_target|)

Rewards are functions of the pre-step state (and action). The only source of
randomness is the reset distribution, so rollouts are reproducible from the
rng stream alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    horizon: int = 200
    action_low: float = -1.0
    action_high: float = 1.0

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1 or self.horizon < 1:
            raise ValueError("dims and horizon must be positive")


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    true_reward: float


class Env:
    spec: EnvSpec
    # default synthetic-rater maximum for a 50-step segment
    default_max_reward: float = 25.0

    def __init__(self, horizon: int = 200, reset_scale: float = 1.0):
        self.spec = EnvSpec(self.name, self.state_dim, self.action_dim, horizon)
        self.reset_scale = reset_scale

    def clip_action(self, actions):
        return np.clip(actions, self.spec.action_low, self.spec.action_high)

    def _check(self, states, actions):
        states = np.asarray(states, dtype=float)
        actions = np.asarray(actions, dtype=float)
        if states.shape[-1] != self.spec.state_dim or actions.shape[-1] != self.spec.action_dim:
            raise ValueError("state/action width does not match the environment")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(actions))):
            raise ValueError("non-finite state or action")
        return np.atleast_2d(states), np.atleast_2d(self.clip_action(actions))

    def reset(self, rng: np.random.Generator, batch: int = 1) -> np.ndarray:
        raise NotImplementedError

    def step(self, states, actions) -> np.ndarray:
        """Next states for a batch; actions are clipped to bounds."""
        s, a = self._check(states, actions)
        return self._step(s, a)

    def true_reward(self, states, actions) -> np.ndarray:
        s, a = self._check(states, actions)
        return self._reward(s, a)


class PointMass(Env):
    name = "pointmass"
    state_dim = 4
    action_dim = 2
    default_max_reward = 20.0

    def reset(self, rng, batch=1):
        s = np.zeros((batch, 4))
        s[:, :2] = rng.uniform(-1.0, 1.0, size=(batch, 2)) * self.reset_scale
        return s

    def _step(self, s, a):
        v = 0.8 * s[:, 2:] + 0.2 * a
        p = np.clip(s[:, :2] + 0.05 * v, -2.0, 2.0)
        return np.concatenate([p, v], axis=1)

    def _reward(self, s, a):
        return 1.0 - np.minimum(1.0, np.hypot(s[:, 0], s[:, 1]))


class CartSwing(Env):
    name = "cartswing"
    state_dim = 3
    action_dim = 1
    default_max_reward = 25.0

    def reset(self, rng, batch=1):
        th = np.pi + rng.uniform(-0.5, 0.5, size=batch) * self.reset_scale
        w = rng.uniform(-0.5, 0.5, size=batch) * self.reset_scale
        return np.stack([np.cos(th), np.sin(th), w], axis=1)

    def _step(self, s, a):
        th = np.arctan2(s[:, 1], s[:, 0])
        w = np.clip(s[:, 2] + 0.05 * (15.0 * np.sin(th) + 6.0 * a[:, 0]), -8.0, 8.0)
        th = th + 0.05 * w
        return np.stack([np.cos(th), np.sin(th), w], axis=1)

    def _reward(self, s, a):
        return 0.5 * (1.0 + s[:, 0])


class LineRunner(Env):
    name = "linerunner"
    state_dim = 2
    action_dim = 1
    default_max_reward = 25.0

    def reset(self, rng, batch=1):
        s = np.zeros((batch, 2))
        s[:, 1] = rng.uniform(0.5, 1.0, size=batch)
        if self.reset_scale != 1.0:
            s[:, 1] = 0.75 + (s[:, 1] - 0.75) * self.reset_scale
        return s

    def _step(self, s, a):
        v = s[:, 0] + 0.1 * (2.0 * a[:, 0] - 0.5 * s[:, 0])
        return np.stack([v, s[:, 1]], axis=1)

    def _reward(self, s, a):
        return 1.0 - np.minimum(1.0, np.abs(s[:, 0] - s[:, 1]))


REGISTRY = {cls.name: cls for cls in (PointMass, CartSwing, LineRunner)}


def make_env(name: str, **kwargs) -> Env:
    try:
        return REGISTRY[name.lower()](**kwargs)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(REGISTRY)}") from None


def env_step(env: Env, state, action, rng: np.random.Generator | None = None) -> Transition:
    """Single-transition convenience wrapper. ``rng`` is accepted for API
    symmetry; the dynamics themselves are noise-free."""
    state = np.asarray(state, dtype=float)
    action = np.asarray(action, dtype=float)
    r = env.true_reward(state[None], action[None])[0]
    nxt = env.step(state[None], action[None])[0]
    return Transition(state.copy(), env.clip_action(action), nxt, float(r))


class SegmentBuffer:
    """Ring buffer of fixed-length segments tagged with their true return."""

    def __init__(self, capacity: int, length: int, state_dim: int, action_dim: int):
        if capacity < 1 or length < 1:
            raise ValueError("capacity and segment length must be positive")
        self.capacity = capacity
        self.length = length
        self._states = np.zeros((capacity, length, state_dim))
        self._actions = np.zeros((capacity, length, action_dim))
        self._returns = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, states, actions, true_return):
        if len(states) != self.length or len(actions) != self.length:
            raise ValueError(f"segment must have length {self.length}")
        i = self._next
        self._states[i] = states
        self._actions[i] = actions
        self._returns[i] = true_return
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self):
        # oldest first
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self.capacity) + self._next) % self.capacity

    @property
    def states(self):
        return self._states[self._order()]

    @property
    def actions(self):
        return self._actions[self._order()]

    @property
    def true_returns(self):
        return self._returns[self._order()]


def collect_segments(env: Env, policy, count: int, length: int, rng: np.random.Generator) -> SegmentBuffer:
    """Roll out ``count`` independent segments, each from a fresh reset.

    ``policy(states, rng) -> actions`` acts on a batch.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    buf = SegmentBuffer(count, length, env.spec.state_dim, env.spec.action_dim)
    s = env.reset(rng, count)
    S = np.zeros((count, length, env.spec.state_dim))
    A = np.zeros((count, length, env.spec.action_dim))
    R = np.zeros(count)
    for t in range(length):
        a = env.clip_action(policy(s, rng))
        S[:, t], A[:, t] = s, a
        R += env.true_reward(s, a)
        s = env.step(s, a)
    for i in range(count):
        buf.add(S[i], A[i], R[i])
    return buf


def rollout_trace(env: Env, policy, rng: np.random.Generator, steps: int | None = None):
    """One episode from reset: returns (states, actions, true_rewards)."""
    steps = env.spec.horizon if steps is None else steps
    s = env.reset(rng, 1)
    S, A, R = [], [], []
    for _ in range(steps):
        a = env.clip_action(policy(s, rng))
        S.append(s[0])
        A.append(a[0])
        R.append(env.true_reward(s, a)[0])
        s = env.step(s, a)
    return np.array(S), np.array(A), np.array(R)


def export_trace_csv(path, states, actions, rewards):
    """Columns: t, s0..s{d-1}, a0..a{k-1}, true_reward."""
    states = np.asarray(states)
    actions = np.asarray(actions)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t"] + [f"s{i}" for i in range(states.shape[1])]
                   + [f"a{i}" for i in range(actions.shape[1])] + ["true_reward"])
        for t, (s, a, r) in enumerate(zip(states, actions, rewards)):
            w.writerow([t] + [repr(float(v)) for v in s] + [repr(float(v)) for v in a] + [repr(float(r))])
