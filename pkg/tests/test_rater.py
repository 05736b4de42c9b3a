import math

import numpy as np
import pytest

from rbrl.envs import SegmentBuffer
from rbrl.rater import RaterConfig, rate_buffer, rate_returns, rate_segment


@pytest.mark.parametrize("ret, n, max_reward, label", [
    (30.0, 2, 50.0, 1), (20.0, 3, 50.0, 1), (0.0, 2, 50.0, 0), (0.0, 6, 1.0, 0),
    (25.0, 2, 50.0, 1), (24.999, 2, 50.0, 0), (60.0, 4, 50.0, 3), (-3.0, 4, 50.0, 0),
])
def test_examples(ret, n, max_reward, label):
    cfg = RaterConfig(n, max_reward)
    assert rate_segment(ret, cfg) == label
    assert rate_returns([ret], cfg)[0] == label


def test_boundaries():
    np.testing.assert_allclose(RaterConfig(3, 50.0).boundaries, [50 / 3, 100 / 3])


@pytest.mark.parametrize("kwargs", [dict(n_classes=1), dict(max_reward=0.0), dict(budget=0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        RaterConfig(**kwargs)


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        rate_segment(math.inf, RaterConfig())


def test_monotone_and_antitone():
    returns = np.linspace(-5, 55, 2001)
    for n in range(2, 7):
        labels = rate_returns(returns, RaterConfig(n, 40.0))
        assert np.all(np.diff(labels) >= 0)
        stricter = rate_returns(returns, RaterConfig(n, 45.0))
        assert np.all(stricter <= labels)


def _buffer(returns, length=2):
    buf = SegmentBuffer(len(returns), length, 1, 1)
    for i, r in enumerate(returns):
        buf.add(np.full((length, 1), i), np.zeros((length, 1)), r)
    return buf


def test_budget_equals_size(rng):
    buf = _buffer(np.arange(10.0))
    ds = rate_buffer(buf, RaterConfig(2, 10.0, budget=10), rng)
    assert sorted(ds.states[:, 0, 0].tolist()) == list(range(10))
    np.testing.assert_array_equal(ds.labels, [0] * 5 + [1] * 5)


def test_insufficient_buffer(rng):
    with pytest.raises(ValueError):
        rate_buffer(_buffer([1.0, 2.0]), RaterConfig(budget=3), rng)


def test_all_zero_buffer(rng):
    ds = rate_buffer(_buffer(np.zeros(20)), RaterConfig(4, 10.0, budget=15), rng)
    assert np.all(ds.labels == 0)
    assert ds.class_counts().tolist() == [15, 0, 0, 0]


def test_uniform_returns_even_classes():
    rng = np.random.default_rng(8)
    n, budget = 4, 4000
    buf = _buffer(rng.uniform(0, 20.0, 5000), length=1)
    counts = rate_buffer(buf, RaterConfig(n, 20.0, budget), rng).class_counts()
    sigma = math.sqrt(budget * 0.25 * 0.75)
    assert np.all(np.abs(counts - budget / n) <= 3 * sigma)


def test_median_split():
    rng = np.random.default_rng(9)
    for _ in range(20):
        r = rng.exponential(3.0, size=int(rng.integers(2, 200)))
        counts = np.bincount(rate_returns(r, RaterConfig(2, 2 * float(np.median(r)))), minlength=2)
        assert abs(counts[0] - counts[1]) <= 1


def test_sampling_is_seeded():
    buf = _buffer(np.linspace(0, 10, 50))
    a = rate_buffer(buf, RaterConfig(3, 10.0, 20), np.random.default_rng(1))
    b = rate_buffer(buf, RaterConfig(3, 10.0, 20), np.random.default_rng(1))
    np.testing.assert_array_equal(a.states, b.states)
