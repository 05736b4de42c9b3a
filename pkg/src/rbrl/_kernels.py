"""Hot numeric loops, JIT-compiled with numba when available.

Every kernel has a pure-numpy twin. Set ``RBRL_DISABLE_NUMBA=1`` before import
to force the numpy path (the benchmark and the equivalence tests call both
variants directly through ``NUMPY_KERNELS`` / ``NUMBA_KERNELS``).
"""

import math
import os

import numpy as np

ORIGINAL = 0
MIDPOINT = 1

_DISABLED = os.environ.get("RBRL_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by RBRL_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------


def gae_numpy(rewards, values, next_values, terminated, episode_end, gamma, lam):
    """GAE over a (T, E) rollout. Returns (advantages, returns)."""
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1])
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_values[t] * (1.0 - terminated[t]) - values[t]
        last = delta + gamma * lam * (1.0 - episode_end[t]) * last
        adv[t] = last
    return adv, adv + values


def discounted_returns_numpy(rewards, episode_end, gamma):
    T = rewards.shape[0]
    out = np.zeros_like(rewards)
    acc = np.zeros(rewards.shape[1])
    for t in range(T - 1, -1, -1):
        acc = rewards[t] + gamma * (1.0 - episode_end[t]) * acc
        out[t] = acc
    return out


def class_log_probs_numpy(r_tilde, bounds, k, variant):
    """Log class probabilities and d(logit)/d(r_tilde), both shaped (N, n)."""
    lo = bounds[:-1][None, :]
    hi = bounds[1:][None, :]
    r = r_tilde[:, None]
    if variant == ORIGINAL:
        logits = -k * (r - lo) * (r - hi)
        dlogits = -k * (2.0 * r - lo - hi)
    else:
        mid = 0.5 * (lo + hi)
        logits = -k * (r - mid) ** 2
        dlogits = -2.0 * k * (r - mid)
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    return logits - lse, dlogits


NUMPY_KERNELS = {
    "gae": gae_numpy,
    "discounted_returns": discounted_returns_numpy,
    "class_log_probs": class_log_probs_numpy,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def gae_numba(rewards, values, next_values, terminated, episode_end, gamma, lam):
        T, E = rewards.shape
        adv = np.zeros((T, E))
        for e in range(E):
            last = 0.0
            for t in range(T - 1, -1, -1):
                delta = rewards[t, e] + gamma * next_values[t, e] * (1.0 - terminated[t, e]) - values[t, e]
                last = delta + gamma * lam * (1.0 - episode_end[t, e]) * last
                adv[t, e] = last
        return adv, adv + values

    @njit(cache=True)
    def discounted_returns_numba(rewards, episode_end, gamma):
        T, E = rewards.shape
        out = np.zeros((T, E))
        for e in range(E):
            acc = 0.0
            for t in range(T - 1, -1, -1):
                acc = rewards[t, e] + gamma * (1.0 - episode_end[t, e]) * acc
                out[t, e] = acc
        return out

    @njit(cache=True)
    def class_log_probs_numba(r_tilde, bounds, k, variant):
        N = r_tilde.shape[0]
        n = bounds.shape[0] - 1
        logp = np.empty((N, n))
        dlogits = np.empty((N, n))
        for s in range(N):
            r = r_tilde[s]
            m = -np.inf
            for i in range(n):
                lo = bounds[i]
                hi = bounds[i + 1]
                if variant == 0:
                    z = -k * (r - lo) * (r - hi)
                    dlogits[s, i] = -k * (2.0 * r - lo - hi)
                else:
                    d = r - 0.5 * (lo + hi)
                    z = -k * d * d
                    dlogits[s, i] = -2.0 * k * d
                logp[s, i] = z
                if z > m:
                    m = z
            acc = 0.0
            for i in range(n):
                acc += math.exp(logp[s, i] - m)
            lse = m + math.log(acc)
            for i in range(n):
                logp[s, i] -= lse
        return logp, dlogits

    NUMBA_KERNELS = {
        "gae": gae_numba,
        "discounted_returns": discounted_returns_numba,
        "class_log_probs": class_log_probs_numba,
    }
    _ACTIVE = NUMBA_KERNELS
else:
    NUMBA_KERNELS = None
    _ACTIVE = NUMPY_KERNELS


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def gae(rewards, values, next_values, terminated, episode_end, gamma, lam):
    return _ACTIVE["gae"](
        _as_f64(rewards), _as_f64(values), _as_f64(next_values),
        _as_f64(terminated), _as_f64(episode_end), float(gamma), float(lam),
    )


def discounted_returns(rewards, episode_end, gamma):
    return _ACTIVE["discounted_returns"](_as_f64(rewards), _as_f64(episode_end), float(gamma))


def class_log_probs(r_tilde, bounds, k, variant):
    return _ACTIVE["class_log_probs"](_as_f64(r_tilde), _as_f64(bounds), float(k), int(variant))


def backend():
    return "numba" if _ACTIVE is NUMBA_KERNELS else "numpy"
