"""Tests for the dense-array numeric core: layer math, flat-parameter
plumbing, Adam, and agreement between analytic backward passes and the
central finite-difference oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jsalearn import ndnet
from jsalearn.errors import NumericError, ShapeError, StateError
from jsalearn.ndnet import (
    AdamState,
    GroupSoftmax,
    LayeredNet,
    LeakyReLU,
    Linear,
    Sigmoid,
    Tanh,
    adam_step,
    finite_diff_grad,
)


def rel_err(a, b):
    """Max absolute deviation scaled by the overall magnitude of b."""
    scale = max(np.max(np.abs(b)), 1e-8)
    return np.max(np.abs(a - b)) / scale


def random_net(rng, in_dim=None):
    """A small random net touching every layer kind."""
    in_dim = in_dim or int(rng.integers(2, 6))
    h1 = int(rng.integers(2, 6))
    h2 = int(rng.integers(2, 5)) * 2
    layers = [
        Linear(in_dim, h1),
        LeakyReLU(),
        Linear(h1, 4),
        Tanh(),
        Linear(4, h2),
    ]
    if rng.random() < 0.5:
        layers.append(Sigmoid())
    else:
        layers.append(GroupSoftmax(h2 // 2, 2))
    return LayeredNet(layers, rng=rng)


class TestElementwise:
    def test_sigmoid_at_zero(self):
        np.testing.assert_allclose(ndnet.sigmoid(np.array([0.0])), [0.5])

    def test_sigmoid_extreme_inputs_stay_finite(self):
        out = ndnet.sigmoid(np.array([-1e4, -50.0, 50.0, 1e4]))
        assert np.isfinite(out).all()
        assert (out >= 0).all() and (out <= 1).all()

    def test_clamp_bounds(self):
        out = ndnet.clamped_sigmoid(np.array([-100.0, 100.0]))
        np.testing.assert_allclose(out, [1e-7, 1.0 - 1e-7])

    def test_leaky_relu_values(self):
        lay = LeakyReLU(0.01)
        np.testing.assert_allclose(lay.forward(np.array([-2.0, 0.0, 3.0])),
                                   [-0.02, 0.0, 3.0])

    @given(st.integers(1, 6), st.integers(2, 8), st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_group_softmax_rows_sum_to_one(self, groups, size, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(scale=5.0, size=(3, groups * size))
        p = ndnet.group_softmax(a, groups, size)
        sums = p.reshape(3, groups, size).sum(axis=-1)
        assert np.abs(sums - 1.0).max() < 1e-12
        assert (p >= 0).all()


class TestLinear:
    def test_identity_weights_pass_input_through(self):
        net = LayeredNet([Linear(2, 2)])
        net.params[:4] = np.eye(2).reshape(-1)
        x = np.array([0.3, -0.2])
        acts = net.forward(x)
        np.testing.assert_allclose(acts[-1], x)

    def test_init_ranges(self):
        rng = np.random.default_rng(7)
        net = LayeredNet([Linear(30, 20)], rng=rng)
        lay = net.layers[0]
        bound = np.sqrt(6.0 / 50.0)
        assert np.abs(lay.W).max() <= bound
        np.testing.assert_array_equal(lay.b, 0.0)

    def test_batched_forward_matches_loop(self):
        rng = np.random.default_rng(3)
        net = random_net(rng, in_dim=4)
        X = rng.normal(size=(6, 4))
        batched = net.forward(X)[-1]
        single = np.stack([net.forward(X[i])[-1] for i in range(6)])
        np.testing.assert_allclose(batched, single, atol=1e-14)

    def test_shape_mismatch_raises(self):
        net = LayeredNet([Linear(3, 2)])
        with pytest.raises(ShapeError):
            net.forward(np.zeros(4))

    def test_dim_chain_validated(self):
        with pytest.raises(ShapeError):
            LayeredNet([Linear(3, 4), Linear(5, 2)])
        with pytest.raises(ShapeError):
            LayeredNet([Linear(3, 5), GroupSoftmax(2, 2)])


class TestFlatParams:
    def test_params_are_views(self):
        rng = np.random.default_rng(0)
        net = LayeredNet([Linear(2, 3), Sigmoid()], rng=rng)
        net.params[0] = 42.0
        assert net.layers[0].W[0, 0] == 42.0

    def test_external_buffer_binding(self):
        buf = np.zeros(2 * 3 + 3 + 3 * 1 + 1)
        net = LayeredNet([Linear(2, 3), Tanh(), Linear(3, 1)],
                         rng=np.random.default_rng(1), buffer=buf)
        assert net.params is buf
        buf[:] = 0.0
        assert np.all(net.layers[0].W == 0.0)

    def test_wrong_buffer_size_rejected(self):
        with pytest.raises(ShapeError):
            LayeredNet([Linear(2, 2)], buffer=np.zeros(3))


class TestBackward:
    def test_gradients_match_finite_differences(self):
        """Analytic parameter gradients agree with the central-difference
        oracle on random nets covering every layer kind."""
        for seed in range(8):
            rng = np.random.default_rng(100 + seed)
            net = random_net(rng)
            x = rng.normal(size=net.in_dim)
            w = rng.normal(size=net.out_dim)

            def scalar(params, net=net, x=x, w=w):
                return float(net.forward(x)[-1] @ w)

            acts = net.forward(x)
            analytic, _ = net.backward(acts, w.copy())
            numeric = finite_diff_grad(scalar, net.params)
            assert rel_err(analytic, numeric) < 1e-6

    def test_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        net = random_net(rng, in_dim=3)
        x = rng.normal(size=3)
        w = rng.normal(size=net.out_dim)
        acts = net.forward(x)
        _, gx = net.backward(acts, w.copy())

        def scalar_x(xv):
            return float(net.forward(xv)[-1] @ w)

        numeric = finite_diff_grad(scalar_x, x.copy())
        assert rel_err(gx, numeric) < 1e-6

    def test_batched_param_grad_is_sum_over_rows(self):
        rng = np.random.default_rng(5)
        net = random_net(rng, in_dim=4)
        X = rng.normal(size=(5, 4))
        G = rng.normal(size=(5, net.out_dim))
        batched, _ = net.backward(net.forward(X), G)
        summed = np.zeros(net.n_params)
        for i in range(5):
            pg, _ = net.backward(net.forward(X[i]), G[i])
            summed += pg
        np.testing.assert_allclose(batched, summed, atol=1e-12)

    def test_activation_list_length_checked(self):
        net = LayeredNet([Linear(2, 2), Sigmoid()], rng=np.random.default_rng(0))
        acts = net.forward(np.zeros(2))
        with pytest.raises(StateError):
            net.backward(acts[:-1], np.zeros(2))


class TestAdam:
    def test_first_step_is_signed_lr(self):
        """With fresh moments the first update is ~ lr * sign(grad)."""
        params = np.array([1.0, -2.0, 0.5])
        g = np.array([0.3, -0.02, 4.0])
        st_ = AdamState.for_size(3, lr=0.1)
        before = params.copy()
        adam_step(params, g, st_)
        np.testing.assert_allclose(before - params, 0.1 * np.sign(g), rtol=1e-6)

    def test_zero_grad_zero_move(self):
        params = np.array([1.0, 2.0])
        st_ = AdamState.for_size(2, lr=0.1)
        adam_step(params, np.zeros(2), st_)
        np.testing.assert_array_equal(params, [1.0, 2.0])

    def test_step_magnitude_bounded_by_lr(self):
        params = np.zeros(4)
        g = np.array([10.0, -3.0, 0.7, -0.01])
        st_ = AdamState.for_size(4, lr=0.05)
        for _ in range(2):
            prev = params.copy()
            adam_step(params, g, st_)
            assert np.abs(params - prev).max() <= 0.05 * (1 + 1e-6)

    def test_nonfinite_grad_rejected(self):
        params = np.zeros(2)
        st_ = AdamState.for_size(2, lr=0.1)
        with pytest.raises(NumericError):
            adam_step(params, np.array([np.nan, 0.0]), st_)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            adam_step(np.zeros(2), np.zeros(3), AdamState.for_size(2, lr=0.1))

    def test_deterministic(self):
        runs = []
        for _ in range(2):
            params = np.array([0.3, -0.7])
            st_ = AdamState.for_size(2, lr=0.01)
            for t in range(10):
                adam_step(params, np.array([np.sin(t + 1.0), np.cos(t + 1.0)]), st_)
            runs.append(params.copy())
        np.testing.assert_array_equal(runs[0], runs[1])


class TestFiniteDiff:
    def test_quadratic(self):
        g = finite_diff_grad(lambda p: float(p[0] ** 2), np.array([3.0]))
        np.testing.assert_allclose(g, [6.0], atol=1e-8)

    def test_restores_params(self):
        p = np.array([1.0, 2.0])
        finite_diff_grad(lambda q: float(q.sum()), p)
        np.testing.assert_array_equal(p, [1.0, 2.0])

    def test_multivariate(self):
        p = np.array([1.0, -2.0, 0.5])
        g = finite_diff_grad(lambda q: float((q ** 3).sum()), p)
        np.testing.assert_allclose(g, 3 * p ** 2, rtol=1e-7)
