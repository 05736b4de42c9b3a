import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import fd_grad, grad_close
from rbrl.nn import (
    Activation, MlpParams, MlpSpec, Squash, activation_apply, activation_grad, backward, forward,
    init_params, load_checkpoint, sample_dropout_masks, save_checkpoint, zero_params,
)

ACTIVATIONS = list(Activation)


class TestActivations:
    @pytest.mark.parametrize("kind, expected", [
        (Activation.ARCTAN, 0.0), (Activation.SIGMOID, 0.5), (Activation.TANH, 0.0), (Activation.LECUN_TANH, 0.0),
    ])
    def test_origin(self, kind, expected):
        assert float(activation_apply(kind, 0.0)) == expected

    def test_lecun_closed_form(self):
        # 1.7159 * tanh(2/3 * 1.5) = 1.7159 * tanh(1)
        assert float(activation_apply(Activation.LECUN_TANH, 1.5)) == pytest.approx(1.306819412204497, abs=1e-12)

    def test_arctan_grad_at_one(self):
        assert float(activation_grad(Activation.ARCTAN, 1.0)) == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("kind", ACTIVATIONS)
    def test_grad_matches_finite_difference(self, kind):
        x = np.linspace(-10, 10, 2001)
        h = 1e-6
        fd = (activation_apply(kind, x + h) - activation_apply(kind, x - h)) / (2 * h)
        np.testing.assert_allclose(activation_grad(kind, x), fd, atol=1e-8)

    def test_sigmoid_no_overflow(self):
        with np.errstate(over="raise"):
            y = activation_apply(Activation.SIGMOID, np.array([-1000.0, 1000.0]))
        np.testing.assert_allclose(y, [0.0, 1.0])


class TestSpec:
    @pytest.mark.parametrize("kwargs", [
        dict(hidden_layers=0), dict(hidden_width=0), dict(dropout_rate=1.0), dict(dropout_rate=-0.1),
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            MlpSpec(3, **kwargs)

    def test_param_shapes_follow_spec(self, rng):
        spec = MlpSpec(5, hidden_layers=3, hidden_width=7, output_dim=2)
        p = init_params(spec, rng)
        assert [w.shape for w in p.weights] == [(5, 7), (7, 7), (7, 7), (7, 2)]
        assert [b.shape for b in p.biases] == [(7,), (7,), (7,), (2,)]
        p.check(spec)

    def test_init_is_he_uniform_and_seeded(self):
        spec = MlpSpec(16, hidden_layers=2, hidden_width=32)
        a = init_params(spec, np.random.default_rng(0))
        b = init_params(spec, np.random.default_rng(0))
        for wa, wb, fan_in in zip(a.weights, b.weights, [16, 32, 32]):
            np.testing.assert_array_equal(wa, wb)
            assert np.abs(wa).max() <= math.sqrt(6 / fan_in)


class TestForward:
    def test_zero_network(self, rng):
        spec = MlpSpec(4, output_squash=Squash.NONE, hidden_width=8)
        y, _ = forward(zero_params(spec), spec, rng.normal(size=4))
        assert y == 0.0

    def test_arctan_unit_net(self):
        spec = MlpSpec(1, hidden_layers=1, hidden_width=1, activation=Activation.ARCTAN, output_squash=Squash.NONE)
        p = MlpParams([np.array([[1.0]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)])
        y, cache = forward(p, spec, [1.0])
        assert y == pytest.approx(math.atan(1.0), abs=1e-15)
        assert cache.pre[0][0, 0] == 1.0

    def test_inverted_dropout_all_keep(self):
        # two hidden units, identity-ish: hidden = tanh(x * w), output = sum
        spec = MlpSpec(1, hidden_layers=1, hidden_width=2, dropout_rate=0.5, output_squash=Squash.NONE)
        p = MlpParams([np.array([[0.3, -0.7]]), np.ones((2, 1))], [np.zeros(2), np.zeros(1)])
        y_eval, _ = forward(p, spec, [1.0])
        y_train, _ = forward(p, spec, [1.0], dropout_mask=[np.ones((1, 2))])
        hand = 2.0 * (math.tanh(0.3) + math.tanh(-0.7))
        assert y_train == pytest.approx(hand, abs=1e-15)
        assert y_train == pytest.approx(2.0 * y_eval, abs=1e-15)

    def test_tanh_squash_bounds_output(self, rng):
        spec = MlpSpec(3, hidden_width=16, output_squash=Squash.TANH)
        p = init_params(spec, rng)
        for w in p.weights:
            w *= 50
        y, _ = forward(p, spec, rng.normal(size=(100, 3)))
        assert np.all(np.abs(y) <= 1.0)

    def test_rejects_bad_input(self, rng):
        spec = MlpSpec(3, hidden_width=4)
        p = init_params(spec, rng)
        with pytest.raises(ValueError):
            forward(p, spec, np.ones(4))
        with pytest.raises(ValueError):
            forward(p, spec, np.array([1.0, np.nan, 0.0]))

    def test_dropout_expectation(self, rng):
        # exact in expectation only when the dropped layer feeds the linear head
        spec = MlpSpec(3, hidden_layers=1, hidden_width=6, dropout_rate=0.3, output_squash=Squash.NONE)
        p = init_params(spec, rng)
        x = rng.normal(size=3)
        target, _ = forward(p, spec, x)
        n = 20_000
        masks = sample_dropout_masks(spec, n, rng)
        ys, _ = forward(p, spec, np.tile(x, (n, 1)), masks)
        ys = ys[:, 0]
        se = ys.std(ddof=1) / math.sqrt(n)
        assert abs(ys.mean() - target) <= 3 * se


def _loss_and_grads(spec, params, x, masks, upstream):
    def f():
        y, _ = forward(params, spec, x, masks)
        return float(np.sum(np.asarray(y) * upstream))

    _, cache = forward(params, spec, x, masks)
    return f, backward(cache, upstream)


class TestBackward:
    def test_zero_upstream(self, rng):
        spec = MlpSpec(3, hidden_width=5)
        p = init_params(spec, rng)
        _, cache = forward(p, spec, rng.normal(size=3))
        g = backward(cache, 0.0)
        assert all(np.all(a == 0) for a in g.arrays())

    def test_linear_case(self):
        # one hidden layer with zero incoming weights, so the output is
        # w_out * act(0) + b_out; check the output layer against hand values
        spec = MlpSpec(1, hidden_layers=1, hidden_width=1, activation=Activation.ARCTAN, output_squash=Squash.NONE)
        p = MlpParams([np.array([[1.0]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)])
        _, cache = forward(p, spec, [2.0])
        g = backward(cache, 1.0)
        # d out / d w_in = w_out * atan'(2) * x = 1 * 1/5 * 2
        assert g.weights[0][0, 0] == pytest.approx(0.4, abs=1e-15)
        assert g.biases[0][0] == pytest.approx(0.2, abs=1e-15)
        assert g.weights[1][0, 0] == pytest.approx(math.atan(2.0), abs=1e-15)
        assert g.biases[1][0] == 1.0

    @pytest.mark.parametrize("kind", ACTIVATIONS)
    @pytest.mark.parametrize("squash", list(Squash))
    def test_finite_difference(self, kind, squash):
        rng = np.random.default_rng(7)
        spec = MlpSpec(3, hidden_layers=2, hidden_width=4, activation=kind, output_squash=squash, dropout_rate=0.25)
        p = init_params(spec, rng)
        x = rng.normal(size=(5, 3))
        masks = sample_dropout_masks(spec, 5, rng)
        up = rng.normal(size=(5, 1))
        f, g = _loss_and_grads(spec, p, x, masks, up)
        ok, worst = grad_close(g.arrays(), fd_grad(f, p.arrays()), rtol=1e-5)
        assert ok, worst

    def test_stale_cache_rejected(self, rng):
        spec = MlpSpec(2, hidden_width=3)
        p = init_params(spec, rng)
        _, cache = forward(p, spec, np.ones(2))
        p.version += 1
        with pytest.raises(ValueError, match="stale"):
            backward(cache, 1.0)

    def test_mismatched_upstream_rejected(self, rng):
        spec = MlpSpec(2, hidden_width=3)
        p = init_params(spec, rng)
        _, cache = forward(p, spec, np.ones((4, 2)))
        with pytest.raises(ValueError):
            backward(cache, np.ones((3, 1)))


@settings(max_examples=30, deadline=None)
@given(
    layers=st.integers(1, 3), width=st.integers(1, 8), kind=st.sampled_from(ACTIVATIONS),
    seed=st.integers(0, 2**31 - 1),
)
def test_gradient_check_property(layers, width, kind, seed):
    rng = np.random.default_rng(seed)
    spec = MlpSpec(2, hidden_layers=layers, hidden_width=width, activation=kind, output_squash=Squash.TANH)
    p = init_params(spec, rng)
    x = rng.normal(size=(3, 2))
    up = rng.normal(size=(3, 1))
    f, g = _loss_and_grads(spec, p, x, None, up)
    ok, worst = grad_close(g.arrays(), fd_grad(f, p.arrays()), rtol=1e-5)
    assert ok, worst


def test_checkpoint_round_trip(tmp_path, rng):
    spec = MlpSpec(4, hidden_layers=2, hidden_width=5, activation=Activation.LECUN_TANH, dropout_rate=0.1)
    p = init_params(spec, rng)
    save_checkpoint(tmp_path / "m.json", p, spec)
    q, spec2 = load_checkpoint(tmp_path / "m.json")
    assert spec2 == spec
    for a, b in zip(p.arrays(), q.arrays()):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_rejects_other_format(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "something-else"}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.json")
