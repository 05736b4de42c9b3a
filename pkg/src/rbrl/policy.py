"""PPO on a learned reward, with an entropy-rewarded warm-up phase.

A run has two phases. Phase 1 trains PPO on the policy's own action entropy
while every completed segment is buffered with its true return. At the phase
boundary the synthetic rater labels a budget of buffered segments, a reward
model is fit to those ratings, and phase 2 continues PPO on the model's
predicted reward only. Evaluation always reports the true environment reward.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels
from .envs import Env, SegmentBuffer
from .nn import Activation, MlpParams, MlpSpec, Squash, backward, forward, init_params, predict
from .optim import Optimizer, OptimizerConfig
from .rater import RaterConfig, rate_buffer
from .reward import RewardDivergenceError, RewardModel, RewardTrainerConfig, train_reward_model

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs_per_update: int = 10
    rollout_length: int = 2048
    minibatch_size: int = 64
    hidden_layers: int = 2
    hidden_width: int = 64
    activation: str = "tanh"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    ent_coef: float = 0.0
    max_grad_norm: float = 0.5
    init_log_std: float = 0.0
    # log-std ceiling while the exploration phase ascends entropy
    max_log_std: float = 0.5
    exploration_steps: int = 32_000
    n_envs: int = 8
    segment_length: int = 50
    eval_interval: int = 4000
    eval_episodes: int = 10
    # reserved: periodic reward-model refits during phase 2 (0 = fit once)
    reward_refit_interval: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if self.exploration_steps < 0:
            raise ValueError("exploration_steps must be nonnegative")
        if self.rollout_length % self.n_envs:
            raise ValueError("rollout_length must be a multiple of n_envs")
        if self.exploration_steps % self.n_envs:
            raise ValueError("exploration_steps must be a multiple of n_envs")
        if self.reward_refit_interval:
            raise NotImplementedError("periodic reward refits are not implemented")
        if isinstance(self.optimizer, dict):
            object.__setattr__(self, "optimizer", OptimizerConfig(**self.optimizer))

    def to_dict(self):
        d = asdict(self)
        d["optimizer"] = self.optimizer.to_dict()
        return d


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------


@dataclass
class GaussianPolicy:
    """Diagonal Gaussian with an MLP mean and a state-independent log-std."""

    spec: MlpSpec
    params: MlpParams
    log_std: np.ndarray

    @classmethod
    def create(cls, state_dim, action_dim, cfg: PpoConfig, rng):
        spec = MlpSpec(state_dim, cfg.hidden_layers, cfg.hidden_width, Activation(cfg.activation),
                       0.0, Squash.NONE, action_dim)
        return cls(spec, init_params(spec, rng, output_scale=0.01), np.full(action_dim, cfg.init_log_std))

    def arrays(self):
        return self.params.arrays() + [self.log_std]

    def mean(self, states):
        return predict(self.params, self.spec, states)

    def act(self, states, rng, deterministic=False):
        mu = self.mean(states)
        if deterministic:
            return mu
        return mu + np.exp(self.log_std) * rng.standard_normal(mu.shape)

    def log_prob(self, states, actions, mu=None):
        mu = self.mean(states) if mu is None else mu
        z = (actions - mu) * np.exp(-self.log_std)
        return -0.5 * np.sum(z * z, axis=-1) - self.log_std.sum() - 0.5 * len(self.log_std) * LOG_2PI

    def entropy(self) -> float:
        return float(np.sum(self.log_std) + len(self.log_std) * HALF_LOG_2PIE)


@dataclass
class ValueNet:
    spec: MlpSpec
    params: MlpParams

    @classmethod
    def create(cls, state_dim, cfg: PpoConfig, rng):
        spec = MlpSpec(state_dim, cfg.hidden_layers, cfg.hidden_width, Activation(cfg.activation), 0.0, Squash.NONE, 1)
        return cls(spec, init_params(spec, rng))

    def __call__(self, states):
        return predict(self.params, self.spec, states)[:, 0]


def predicted_reward(model: RewardModel, state, action) -> float:
    """r_hat(s, a) for one transition, dropout off."""
    return float(model.reward(np.asarray(state)[None], np.asarray(action)[None])[0])


def entropy_reward(policy: GaussianPolicy, state=None) -> float:
    """Differential entropy of the action distribution; the log-std does not
    depend on the state, so neither does this."""
    return policy.entropy()


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------


@dataclass
class Rollout:
    obs: np.ndarray  # (T, E, ds)
    raw_actions: np.ndarray  # (T, E, da) sampled, pre-clip
    actions: np.ndarray  # (T, E, da) as applied
    next_obs: np.ndarray  # (T, E, ds) before any reset
    episode_end: np.ndarray  # (T, E)
    rewards: np.ndarray | None = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    log_probs: np.ndarray | None = None


class SegmentHarvester:
    """Cuts per-env episode streams into length-L segments for the buffer."""

    def __init__(self, env: Env, n_envs: int, length: int, capacity: int):
        self.env = env
        self.length = length
        self.buffer = SegmentBuffer(capacity, length, env.spec.state_dim, env.spec.action_dim)
        self._s = np.zeros((n_envs, length, env.spec.state_dim))
        self._a = np.zeros((n_envs, length, env.spec.action_dim))
        self._r = np.zeros((n_envs, length))

    def record(self, states, actions, ep_t):
        pos = ep_t % self.length
        idx = np.arange(len(states))
        self._s[idx, pos] = states
        self._a[idx, pos] = actions
        self._r[idx, pos] = self.env.true_reward(states, actions)
        for e in np.flatnonzero(pos == self.length - 1):
            self.buffer.add(self._s[e], self._a[e], self._r[e].sum())


def gae_advantages(rewards, values, next_values, episode_end, gamma, lam, terminated=None):
    """Advantages and value targets for (T, E) arrays. Episode ends are
    time-limit truncations unless ``terminated`` says otherwise, so the
    next-state value is still bootstrapped."""
    terminated = np.zeros_like(rewards) if terminated is None else terminated
    return _kernels.gae(rewards, values, next_values, terminated, episode_end, gamma, lam)


def discounted_returns(rewards, episode_end, gamma):
    return _kernels.discounted_returns(rewards, episode_end, gamma)


def _clip_grads(arrays, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in arrays))
    if max_norm and norm > max_norm:
        s = max_norm / (norm + 1e-12)
        arrays = [g * s for g in arrays]
    return arrays


class PpoTrainer:
    """Owns the policy, the value net, their optimizers and the env batch."""

    def __init__(self, env: Env, cfg: PpoConfig, seed_seq: np.random.SeedSequence):
        self.env = env
        self.cfg = cfg
        init_ss, roll_ss, upd_ss = seed_seq.spawn(3)
        init_rng = np.random.default_rng(init_ss)
        self.policy = GaussianPolicy.create(env.spec.state_dim, env.spec.action_dim, cfg, init_rng)
        self.value = ValueNet.create(env.spec.state_dim, cfg, init_rng)
        self.policy_opt = Optimizer(cfg.optimizer)
        self.value_opt = Optimizer(cfg.optimizer)
        self.rng = np.random.default_rng(roll_ss)
        self.update_rng = np.random.default_rng(upd_ss)
        self.states = env.reset(self.rng, cfg.n_envs)
        self.ep_t = np.zeros(cfg.n_envs, dtype=np.int64)
        self.steps = 0
        self.diagnostics = []

    def collect(self, n_steps, harvester: SegmentHarvester | None = None) -> Rollout:
        """Step all envs for ``n_steps`` total transitions. True rewards are
        read only when a harvester is attached."""
        E = self.cfg.n_envs
        T = n_steps // E
        env = self.env
        ds, da = env.spec.state_dim, env.spec.action_dim
        obs = np.zeros((T, E, ds))
        raw = np.zeros((T, E, da))
        act = np.zeros((T, E, da))
        nxt = np.zeros((T, E, ds))
        end = np.zeros((T, E))
        s = self.states
        for t in range(T):
            a_raw = self.policy.act(s, self.rng)
            a = env.clip_action(a_raw)
            if harvester is not None:
                harvester.record(s, a, self.ep_t)
            s_next = env.step(s, a)
            obs[t], raw[t], act[t], nxt[t] = s, a_raw, a, s_next
            self.ep_t += 1
            done = self.ep_t >= env.spec.horizon
            if done.any():
                end[t] = done
                s_next = s_next.copy()
                s_next[done] = env.reset(self.rng, int(done.sum()))
                self.ep_t[done] = 0
            s = s_next
        self.states = s
        self.steps += T * E
        return Rollout(obs, raw, act, nxt, end)

    def finish(self, ro: Rollout, rewards):
        cfg = self.cfg
        T, E = ro.episode_end.shape
        flat = lambda x: x.reshape(T * E, -1)  # noqa: E731
        values = self.value(flat(ro.obs)).reshape(T, E)
        next_values = self.value(flat(ro.next_obs)).reshape(T, E)
        ro.rewards = np.asarray(rewards, dtype=float).reshape(T, E)
        ro.advantages, ro.returns = gae_advantages(ro.rewards, values, next_values, ro.episode_end,
                                                   cfg.gamma, cfg.gae_lambda)
        ro.log_probs = self.policy.log_prob(flat(ro.obs), flat(ro.raw_actions)).reshape(T, E)
        return ro

    def update(self, ro: Rollout, explore=False):
        diag = ppo_update(self.policy, self.value, ro, self.cfg, self.policy_opt, self.value_opt, self.update_rng,
                          explore=explore)
        self.diagnostics.append(diag)
        return diag

    def train(self, n_steps, reward_fn, harvester=None, on_rollout=None, explore=False):
        """Collect/update until ``n_steps`` more transitions are consumed.

        ``reward_fn(states, actions) -> rewards`` supplies the learning signal.
        ``explore`` marks the entropy-reward phase (see :func:`ppo_update`).
        """
        target = self.steps + n_steps
        while self.steps < target:
            chunk = min(self.cfg.rollout_length, target - self.steps)
            ro = self.collect(chunk, harvester)
            T, E = ro.episode_end.shape
            r = reward_fn(ro.obs.reshape(T * E, -1), ro.actions.reshape(T * E, -1))
            self.update(self.finish(ro, r), explore=explore)
            if on_rollout is not None:
                on_rollout(self)


def ppo_update(policy: GaussianPolicy, value: ValueNet, ro: Rollout, cfg: PpoConfig,
               policy_opt: Optimizer, value_opt: Optimizer, rng: np.random.Generator, explore: bool = False):
    """Clipped-surrogate PPO epochs over one rollout. Returns mean diagnostics.

    With ``explore`` the rewards are the policy's own entropy. That reward
    does not depend on the sampled action, so the true advantage is zero and
    the surrogate term is dropped; the policy instead ascends the entropy
    directly (log-std capped at ``cfg.max_log_std``). The value net trains
    as usual.
    """
    if not np.all(np.isfinite(ro.advantages)):
        raise FloatingPointError("non-finite advantage; update rejected")
    obs = ro.obs.reshape(-1, ro.obs.shape[-1])
    acts = ro.raw_actions.reshape(-1, ro.raw_actions.shape[-1])
    old_logp = ro.log_probs.ravel()
    adv_all = ro.advantages.ravel()
    ret_all = ro.returns.ravel()
    N = len(obs)
    mb = min(cfg.minibatch_size, N)
    eps = cfg.clip_epsilon
    stats = {"policy_loss": [], "value_loss": [], "clip_fraction": [], "approx_kl": []}

    for _ in range(cfg.epochs_per_update):
        perm = rng.permutation(N)
        for start in range(0, N, mb):
            idx = perm[start:start + mb]
            B = len(idx)
            x, a = obs[idx], acts[idx]
            adv = adv_all[idx]
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)

            mu, pcache = forward(policy.params, policy.spec, x)
            inv_std = np.exp(-policy.log_std)
            z = (a - mu) * inv_std
            logp = -0.5 * np.sum(z * z, axis=1) - policy.log_std.sum() - 0.5 * len(inv_std) * LOG_2PI
            log_ratio = logp - old_logp[idx]
            ratio = np.exp(log_ratio)
            surr1 = ratio * adv
            surr2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
            stats["policy_loss"].append(-float(np.mean(np.minimum(surr1, surr2))))
            stats["clip_fraction"].append(float(np.mean(np.abs(ratio - 1.0) > eps)))
            stats["approx_kl"].append(float(np.mean((ratio - 1.0) - log_ratio)))

            if explore:
                dlogp = np.zeros(B)
                ent_weight = 1.0
            else:
                dlogp = np.where(surr1 <= surr2, -adv * ratio, 0.0) / B
                ent_weight = cfg.ent_coef
            g_mu = dlogp[:, None] * z * inv_std
            g_log_std = np.sum(dlogp[:, None] * (z * z - 1.0), axis=0) - ent_weight
            pg = backward(pcache, g_mu)
            grads = _clip_grads(pg.arrays() + [g_log_std], cfg.max_grad_norm)
            policy_opt.step(policy.arrays(), grads)
            policy.params.version += 1
            if explore:
                np.minimum(policy.log_std, cfg.max_log_std, out=policy.log_std)

            v, vcache = forward(value.params, value.spec, x)
            err = v[:, 0] - ret_all[idx]
            stats["value_loss"].append(0.5 * float(np.mean(err * err)))
            vg = backward(vcache, (err / B)[:, None])
            value_opt.step(value.params.arrays(), _clip_grads(vg.arrays(), cfg.max_grad_norm))
            value.params.version += 1

    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["entropy"] = policy.entropy()
    return out


# ---------------------------------------------------------------------------
# evaluation and full runs
# ---------------------------------------------------------------------------


def evaluate(env: Env, policy_fn, episodes: int, rng: np.random.Generator):
    """Mean and standard error of the true episodic return over a batch of
    episodes; ``policy_fn(states) -> actions``."""
    s = env.reset(rng, episodes)
    total = np.zeros(episodes)
    for _ in range(env.spec.horizon):
        a = env.clip_action(policy_fn(s))
        total += env.true_reward(s, a)
        s = env.step(s, a)
    se = float(total.std(ddof=1) / math.sqrt(episodes)) if episodes > 1 else 0.0
    return float(total.mean()), se


def evaluate_policy(env: Env, policy: GaussianPolicy, episodes: int, rng):
    return evaluate(env, policy.mean, episodes, rng)


def random_policy_return(env: Env, episodes: int, rng: np.random.Generator):
    """True return of uniform random actions within the action bounds."""
    lo, hi, d = env.spec.action_low, env.spec.action_high, env.spec.action_dim
    return evaluate(env, lambda s: rng.uniform(lo, hi, size=(len(s), d)), episodes, rng)


@dataclass
class CurvePoint:
    step: int
    mean_true_return: float
    stderr: float
    phase: int


@dataclass
class RunRecord:
    seed: int
    curve: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    reward_loss: list = field(default_factory=list)
    rating_counts: list = field(default_factory=list)

    CSV_HEADER = ("step", "mean_true_return", "stderr", "phase")

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.CSV_HEADER)
            for p in self.curve:
                w.writerow([p.step, repr(p.mean_true_return), repr(p.stderr), p.phase])

    @staticmethod
    def read_curve(path):
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        return [CurvePoint(int(r["step"]), float(r["mean_true_return"]), float(r["stderr"]), int(r["phase"]))
                for r in rows]

    @property
    def final_returns(self):
        return [p.mean_true_return for p in self.curve]


def train_on_true_reward(env: Env, cfg: PpoConfig, total_steps: int, seed: int) -> tuple[PpoTrainer, list]:
    """Plain PPO on the environment reward (no rating phase)."""
    ss = np.random.SeedSequence(seed)
    trainer_ss, eval_ss = ss.spawn(2)
    trainer = PpoTrainer(env, cfg, trainer_ss)
    eval_rng = np.random.default_rng(eval_ss)
    curve = []
    next_eval = [cfg.eval_interval]

    def maybe_eval(tr):
        if tr.steps >= next_eval[0] or tr.steps >= total_steps:
            m, se = evaluate_policy(env, tr.policy, cfg.eval_episodes, eval_rng)
            curve.append(CurvePoint(tr.steps, m, se, 2))
            while next_eval[0] <= tr.steps:
                next_eval[0] += cfg.eval_interval

    trainer.train(total_steps, env.true_reward, on_rollout=maybe_eval)
    return trainer, curve


def run_rbrl(env: Env, rater_cfg: RaterConfig, reward_cfg: RewardTrainerConfig, ppo_cfg: PpoConfig,
             total_steps: int, seed: int) -> RunRecord:
    """Full two-phase run; the curve holds true-reward evaluations."""
    if total_steps < ppo_cfg.exploration_steps:
        raise ValueError("total_steps must cover the exploration phase")
    if total_steps % ppo_cfg.n_envs:
        raise ValueError("total_steps must be a multiple of n_envs")
    L = ppo_cfg.segment_length
    if env.spec.horizon % L:
        raise ValueError("episode horizon must be a multiple of the segment length")
    capacity = max(1, ppo_cfg.exploration_steps // L)
    if total_steps > ppo_cfg.exploration_steps and rater_cfg.budget > capacity:
        raise ValueError(f"budget {rater_cfg.budget} exceeds the {capacity} segments the exploration phase yields")
    expected_dim = env.spec.state_dim + env.spec.action_dim
    if reward_cfg.mlp.input_dim != expected_dim:
        reward_cfg = replace(reward_cfg, mlp=replace(reward_cfg.mlp, input_dim=expected_dim))

    ss = np.random.SeedSequence(seed)
    trainer_ss, eval_ss, rater_ss, reward_ss = ss.spawn(4)
    trainer = PpoTrainer(env, ppo_cfg, trainer_ss)
    eval_rng = np.random.default_rng(eval_ss)
    record = RunRecord(seed=seed)
    phase = [1]
    next_eval = [ppo_cfg.eval_interval]

    def log_point(tr):
        m, se = evaluate_policy(env, tr.policy, ppo_cfg.eval_episodes, eval_rng)
        record.curve.append(CurvePoint(tr.steps, m, se, phase[0]))

    def maybe_eval(tr):
        if tr.steps >= next_eval[0]:
            log_point(tr)
            while next_eval[0] <= tr.steps:
                next_eval[0] += ppo_cfg.eval_interval

    log_point(trainer)

    # phase 1: entropy reward, buffer segments
    harvester = SegmentHarvester(env, ppo_cfg.n_envs, L, capacity)
    entropy_fn = lambda s, a: np.full(len(s), entropy_reward(trainer.policy))  # noqa: E731
    trainer.train(ppo_cfg.exploration_steps, entropy_fn, harvester, on_rollout=maybe_eval, explore=True)
    if total_steps == ppo_cfg.exploration_steps:
        if record.curve[-1].step != trainer.steps:
            log_point(trainer)
        return record

    # phase 2: rate, fit the reward model, learn from predictions only
    phase[0] = 2
    dataset = rate_buffer(harvester.buffer, rater_cfg, np.random.default_rng(rater_ss))
    record.rating_counts = dataset.class_counts().tolist()
    reward_seed = int(reward_ss.generate_state(1)[0])
    try:
        model, history = train_reward_model(dataset, reward_cfg, reward_seed)
    except RewardDivergenceError as e:
        record.status = "failed"
        record.message = str(e)
        record.reward_loss = list(e.history)
        logger.warning("seed %d: reward model diverged: %s", seed, e)
        return record
    record.reward_loss = history
    trainer.train(total_steps - ppo_cfg.exploration_steps, model.reward, on_rollout=maybe_eval)
    if record.curve[-1].step != trainer.steps:
        log_point(trainer)
    return record
