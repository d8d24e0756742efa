import numpy as np
import pytest

from serann.coremath import (
    Adam,
    AdamState,
    BiLstm,
    EmptySequenceError,
    LstmParams,
    NonFiniteGradientError,
    Rng,
    Tensor,
    adam_step,
    bilstm,
    finite_diff_grad_check,
    mul,
    tensor_sum,
)


def zero_params(d, units, dtype=np.float64):
    return LstmParams(
        wx=Tensor(np.zeros((d, 4 * units), dtype=dtype)),
        wh=Tensor(np.zeros((units, 4 * units), dtype=dtype)),
        b=Tensor(np.zeros(4 * units, dtype=dtype)),
    )


def random_params(d, units, rng, requires_grad=True):
    def t(shape):
        return Tensor(rng.normal(0, 0.4, shape, np.float64), requires_grad=requires_grad)

    return LstmParams(wx=t((d, 4 * units)), wh=t((units, 4 * units)), b=t((4 * units,)))


class TestBiLstm:
    def test_zero_weights_zero_output(self, rng):
        x = Tensor(rng.normal(0, 1, (5, 3), np.float64))
        out = bilstm(x, zero_params(3, 4), zero_params(3, 4))
        assert out.shape == (5, 8)
        np.testing.assert_array_equal(out.data, np.zeros((5, 8)))

    def test_single_step_directions_agree(self, rng):
        # With one timestep the backward pass sees the same input as the
        # forward pass, so identical parameters give identical halves.
        params = random_params(3, 4, rng, requires_grad=False)
        x = Tensor(rng.normal(0, 1, (1, 3), np.float64))
        out = bilstm(x, params, params)
        np.testing.assert_allclose(out.data[0, :4], out.data[0, 4:], atol=1e-12)

    def test_empty_sequence_rejected(self):
        with pytest.raises(EmptySequenceError):
            bilstm(Tensor(np.zeros((0, 3))), zero_params(3, 2), zero_params(3, 2))

    def test_batched_matches_unbatched(self, rng):
        fwd = random_params(2, 3, rng, requires_grad=False)
        bwd = random_params(2, 3, rng, requires_grad=False)
        seqs = rng.normal(0, 1, (2, 4, 2), np.float64)
        batched = bilstm(Tensor(seqs), fwd, bwd)
        for i in range(2):
            single = bilstm(Tensor(seqs[i]), fwd, bwd)
            np.testing.assert_allclose(batched.data[i], single.data, atol=1e-12)

    def test_gradcheck_t3_d2_u2(self, rng):
        fwd = random_params(2, 2, rng)
        bwd = random_params(2, 2, rng)
        x = Tensor(rng.normal(0, 1, (3, 2), np.float64), requires_grad=True)
        wrt = [x, fwd.wx, fwd.wh, fwd.b, bwd.wx, bwd.wh, bwd.b]

        def fn():
            out = bilstm(x, fwd, bwd)
            return tensor_sum(mul(out, out))

        assert finite_diff_grad_check(fn, wrt) < 1e-4

    def test_layer_initialization_deterministic(self):
        a = BiLstm(4, 3, Rng(5))
        b = BiLstm(4, 3, Rng(5))
        np.testing.assert_array_equal(a.forward.wx.data, b.forward.wx.data)
        assert not np.array_equal(a.forward.wx.data, a.backward.wx.data)


class TestAdam:
    def test_zero_gradient_leaves_params_and_increments_t(self):
        state = AdamState(learning_rate=0.1)
        params = {"w": np.array([1.0, -2.0], dtype=np.float32)}
        grads = {"w": np.zeros(2, dtype=np.float32)}
        updated = adam_step(params, grads, state)
        np.testing.assert_array_equal(updated["w"], params["w"])
        assert state.t == 1

    def test_first_step_magnitude_is_learning_rate(self):
        # Bias correction makes m-hat = g and v-hat = g^2 at t=1, so the
        # update is lr * g / (|g| + eps) ~= lr.
        state = AdamState(learning_rate=0.1)
        updated = adam_step({"w": np.array([1.0])}, {"w": np.array([1.0])}, state)
        np.testing.assert_allclose(updated["w"], [0.9], atol=1e-7)

    def test_quadratic_descent(self):
        # 100 steps on f(w) = w^2 from w=1 with lr=0.1 ends near the optimum.
        state = AdamState(learning_rate=0.1)
        w = np.array([1.0])
        for _ in range(100):
            w = adam_step({"w": w}, {"w": 2.0 * w}, state)["w"]
        assert abs(float(w[0])) < 0.1
        assert state.t == 100

    def test_non_finite_gradient_aborts_with_name(self):
        state = AdamState(learning_rate=0.1)
        with pytest.raises(NonFiniteGradientError, match="'w'"):
            adam_step({"w": np.array([1.0])}, {"w": np.array([np.nan])}, state)

    def test_bound_optimizer_rebinds_data(self):
        t = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        opt = Adam({"w": t}, learning_rate=0.1)
        t.grad = np.array([1.0], dtype=np.float32)
        opt.step()
        np.testing.assert_allclose(t.data, [0.9], atol=1e-6)
        opt.zero_grad()
        assert t.grad is None

    def test_moment_shapes_mirror_params(self):
        state = AdamState(learning_rate=0.01)
        params = {"a": np.zeros((2, 3)), "b": np.zeros(5)}
        grads = {"a": np.ones((2, 3)), "b": np.ones(5)}
        adam_step(params, grads, state)
        assert state.m["a"].shape == (2, 3)
        assert state.v["b"].shape == (5,)
