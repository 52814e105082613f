import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gradcheck
from idad import tensor as T


class TestForwardValues:
    def test_matmul_identity(self):
        a = np.arange(12.0).reshape(3, 4)
        out = T.matmul(T.constant(np.eye(3)), T.constant(a))
        np.testing.assert_array_equal(out.data, a)

    def test_logsumexp_two_zeros(self):
        out = T.logsumexp(T.constant([0.0, 0.0]), axis=0)
        assert out.item() == pytest.approx(np.log(2.0), abs=1e-12)

    def test_relu_negative(self):
        assert T.relu(T.constant(-1.0)).item() == 0.0

    def test_forward_independent_of_tape_history(self):
        x = T.constant([1.0, 2.0, 3.0])
        cold = T.exp(x).data
        p = T.parameter(np.ones(4))
        with T.Tape():
            for _ in range(50):
                _ = T.sigmoid(p * 2.0)
            warm = T.exp(x).data
        np.testing.assert_array_equal(cold, warm)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        a = T.constant(rng.normal(size=(4, 4)))
        b = T.constant(rng.normal(size=(4, 4)))
        r1 = T.matmul(a, b).data
        r2 = T.matmul(a, b).data
        np.testing.assert_array_equal(r1, r2)


class TestBackward:
    def test_square_at_three(self):
        x = T.parameter(3.0)
        with T.Tape() as tape:
            grads = tape.backward(x * x)
        assert grads[x] == pytest.approx(6.0, abs=1e-12)

    def test_constant_has_no_gradient(self):
        x = T.parameter(2.0)
        c = T.constant(5.0)
        with T.Tape() as tape:
            out = x * 1.0 + c * 0.0
            grads = tape.backward(out)
        assert c not in grads

    def test_sigmoid_grad_at_zero(self):
        x = T.parameter(0.0)
        with T.Tape() as tape:
            grads = tape.backward(T.sigmoid(x))
        assert grads[x] == pytest.approx(0.25, abs=1e-12)

    def test_non_scalar_root_rejected(self):
        x = T.parameter(np.ones(3))
        with T.Tape() as tape:
            out = x * 2.0
            with pytest.raises(ValueError, match="scalar"):
                tape.backward(out)

    def test_no_grad_without_tape(self):
        x = T.parameter(np.ones(3))
        out = x * 2.0
        assert out.node is None and not out.requires_grad

    def test_grad_accumulates_over_reuse(self):
        x = T.parameter(2.0)
        with T.Tape() as tape:
            out = x * x + x * 3.0
            grads = tape.backward(out)
        assert grads[x] == pytest.approx(7.0, abs=1e-12)


class TestFiniteDiff:
    def test_square(self):
        fd = T.finite_diff_grad(lambda t: (t * t).item(), T.constant(3.0), h=1e-4)
        assert fd == pytest.approx(6.0, abs=1e-6)

    def test_constant_function(self):
        fd = T.finite_diff_grad(lambda t: 1.5, T.constant(np.ones(4)))
        np.testing.assert_array_equal(fd, np.zeros(4))

    def test_against_backward_on_mlp_layer(self):
        rng = np.random.default_rng(11)
        W = rng.normal(size=(5, 3))
        x = T.parameter(rng.normal(size=(3, 1)))

        def f(t):
            return T.sum_(T.sigmoid(T.matmul(T.constant(W), t))).item()

        with T.Tape() as tape:
            out = T.sum_(T.sigmoid(T.matmul(T.constant(W), x)))
            grads = tape.backward(out)
        fd = T.finite_diff_grad(f, x)
        rel = np.max(np.abs(grads[x] - fd)) / np.max(np.abs(fd))
        assert rel < 1e-5

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            T.finite_diff_grad(lambda t: t.item(), T.constant(1.0), h=0.0)


@pytest.mark.parametrize("kind", T.OP_KINDS)
def test_backward_matches_finite_differences(kind):
    worst = max(gradcheck.check_instance(kind, seed) for seed in range(25))
    assert worst < 1e-5, f"{kind}: max relative error {worst:.2e}"


class TestNumericalSafety:
    @given(st.floats(min_value=-700, max_value=700), st.floats(min_value=-700, max_value=700))
    @settings(max_examples=60, deadline=None)
    def test_logsumexp_shift_invariant(self, a, b):
        x = np.array([a, b])
        direct = T.logsumexp(T.constant(x), axis=0).item()
        m = x.max()
        shifted = np.log(np.exp(x - m).sum()) + m
        assert direct == pytest.approx(shifted, abs=1e-12)

    def test_log_of_negative_raises(self):
        with pytest.raises(FloatingPointError):
            T.log(T.constant([-1.0]))

    def test_sqrt_of_negative_raises(self):
        with pytest.raises(FloatingPointError):
            T.sqrt(T.constant([-0.5]))

    def test_division_by_zero_raises(self):
        with pytest.raises(FloatingPointError):
            T.divide(T.constant(1.0), T.constant(0.0))

    def test_exp_overflow_raises(self):
        with pytest.raises(FloatingPointError):
            T.exp(T.constant(800.0))

    def test_shape_mismatch_raises(self):
        with pytest.raises(T.ShapeError):
            T.add(T.constant(np.ones((2, 3))), T.constant(np.ones((3, 2))))

    def test_non_suffix_broadcast_rejected(self):
        # (B, 1) against (B, m) needs an explicit broadcast_to
        with pytest.raises(T.ShapeError):
            T.multiply(T.constant(np.ones((4, 1))), T.constant(np.ones((4, 3))))

    def test_explicit_broadcast_covers_it(self):
        out = T.multiply(
            T.broadcast_to(T.constant(np.ones((4, 1))), (4, 3)),
            T.constant(np.full((4, 3), 2.0)),
        )
        np.testing.assert_array_equal(out.data, np.full((4, 3), 2.0))


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = {"w": T.parameter(np.array([1.0, -2.0]))}
        before = p["w"].data.copy()
        T.adam_step(p, {"w": np.zeros(2)}, T.AdamState(lr=0.1))
        np.testing.assert_array_equal(p["w"].data, before)

    def test_first_step_magnitude_is_lr(self):
        for g in (0.3, -4.0):
            p = {"w": T.parameter(np.array([0.0]))}
            T.adam_step(p, {"w": np.array([g])}, T.AdamState(lr=0.0005))
            assert p["w"].data[0] == pytest.approx(-0.0005 * np.sign(g), rel=1e-6)

    def test_nan_gradient_raises_without_update(self):
        p = {"w": T.parameter(np.array([1.0]))}
        state = T.AdamState(lr=0.1)
        with pytest.raises(FloatingPointError):
            T.adam_step(p, {"w": np.array([np.nan])}, state)
        assert p["w"].data[0] == 1.0
        assert state.step == 0

    def test_step_counter_increases(self):
        p = {"w": T.parameter(np.array([1.0]))}
        state = T.AdamState(lr=0.01)
        for i in range(3):
            T.adam_step(p, {"w": np.array([1.0])}, state)
            assert state.step == i + 1

    def test_shape_mismatch(self):
        p = {"w": T.parameter(np.ones(3))}
        with pytest.raises(T.ShapeError):
            T.adam_step(p, {"w": np.ones(2)}, T.AdamState())


class TestClipGlobalNorm:
    def test_below_threshold_untouched(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        clipped, norm = T.clip_global_norm(grads, 10.0)
        assert norm == pytest.approx(5.0)
        assert clipped is grads

    def test_above_threshold_rescaled(self):
        grads = {"a": np.array([30.0]), "b": np.array([40.0])}
        clipped, norm = T.clip_global_norm(grads, 10.0)
        assert norm == pytest.approx(50.0)
        total = np.sqrt(sum(float(np.sum(g * g)) for g in clipped.values()))
        assert total == pytest.approx(10.0)
