import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from novelcap.errors import DomainError, NumericError, ShapeError
from novelcap.numerics import AdamState, adam_step, cross_entropy, finite_diff_check, matmul, softmax


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(a, np.eye(2)), a)

    def test_unit_selector_row(self):
        assert np.array_equal(matmul(np.array([[1.0, 0.0]]), np.array([[2.0], [5.0]])),
                              np.array([[2.0]]))

    def test_hand_multiplication(self):
        # oracle: explicit loop product
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        expected = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    expected[i, j] += a[i, k] * b[k, j]
        assert np.array_equal(expected, np.array([[19.0, 22.0], [43.0, 50.0]]))
        assert np.allclose(matmul(a, b), expected)

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))


class TestSoftmax:
    def test_uniform(self):
        assert np.allclose(softmax(np.zeros(4)), 0.25)

    def test_shift_invariance_no_overflow(self):
        assert np.allclose(softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])

    def test_two_class_hand_value(self):
        # e^2 / (e^2 + 1) computed by hand
        expected = math.exp(2.0) / (math.exp(2.0) + 1.0)
        out = softmax(np.array([2.0, 0.0]))
        assert abs(out[0] - expected) < 1e-12
        assert abs(out[0] - 0.8808) < 1e-4
        assert abs(out[1] - 0.1192) < 1e-4

    def test_empty_is_domain_error(self):
        with pytest.raises(DomainError):
            softmax(np.array([]))

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12),
           st.floats(-100, 100))
    def test_sums_to_one_and_shift_invariant(self, values, shift):
        x = np.array(values)
        p = softmax(x)
        assert abs(p.sum() - 1.0) <= 1e-9
        assert np.all(p > 0)
        assert np.allclose(p, softmax(x + shift), atol=1e-12)


class TestCrossEntropy:
    def test_uniform_four_classes(self):
        loss, _ = cross_entropy(np.zeros(4), 2)
        assert abs(loss - math.log(4)) < 1e-12

    def test_saturated_correct(self):
        loss, _ = cross_entropy(np.array([30.0, -30.0]), 0)
        assert loss < 1e-9

    def test_two_class_hand_value(self):
        loss, _ = cross_entropy(np.array([2.0, 0.0]), 1)
        assert abs(loss - (-math.log(0.11920292202211755))) < 1e-12
        assert abs(loss - 2.1269) < 1e-3

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            cross_entropy(np.zeros(3), 3)

    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=8), st.data())
    def test_gradient_sums_to_zero(self, values, data):
        target = data.draw(st.integers(0, len(values) - 1))
        _, grad = cross_entropy(np.array(values), target)
        assert abs(grad.sum()) < 1e-9


class TestAdam:
    def test_zero_gradient_is_identity(self):
        p = np.array([[1.5, -2.0], [0.25, 3.0]])
        before = p.copy()
        adam_step(p, np.zeros_like(p), AdamState.for_param(p))
        assert np.array_equal(p, before)

    def test_first_step_bias_corrected(self):
        # m_hat = v_hat = 1 after one step with unit gradient, so the
        # update is -lr / (1 + eps) per entry
        p = np.zeros((3, 2))
        adam_step(p, np.ones_like(p), AdamState.for_param(p, lr=1e-3))
        assert np.all(np.abs(p + 1e-3) < 1e-6)

    def test_two_steps_shrink_positive_scalar(self):
        p = np.array([0.7])
        state = AdamState.for_param(p, lr=1e-2)
        trace = [p[0]]
        for _ in range(2):
            adam_step(p, np.ones(1), state)
            trace.append(p[0])
        assert trace[2] < trace[1] < trace[0]
        assert state.step == 2

    def test_weight_decay_pulls_toward_zero(self):
        p = np.array([1.0])
        adam_step(p, np.zeros(1), AdamState.for_param(p, lr=1e-3, weight_decay=0.1))
        assert p[0] < 1.0

    def test_shape_mismatch(self):
        p = np.zeros(3)
        with pytest.raises(ShapeError):
            adam_step(p, np.zeros(4), AdamState.for_param(p))


class TestFiniteDiffCheck:
    def test_quadratic_is_exact(self):
        theta = np.array([3.0])

        def loss(params):
            return 0.5 * float((params["theta"] ** 2).sum())

        err = finite_diff_check(loss, {"theta": theta}, {"theta": theta.copy()})
        assert err < 1e-9

    def test_corrupted_gradient_flagged(self):
        theta = np.array([3.0])

        def loss(params):
            return 0.5 * float((params["theta"] ** 2).sum())

        err = finite_diff_check(loss, {"theta": theta}, {"theta": 2.0 * theta})
        assert abs(err - 1.0 / 3.0) < 1e-6

    def test_nonpositive_h_rejected(self):
        with pytest.raises(DomainError):
            finite_diff_check(lambda p: 0.0, {}, {}, h=0.0)

    def test_non_finite_loss_is_numeric_error(self):
        theta = np.array([1.0])
        with pytest.raises(NumericError):
            finite_diff_check(lambda p: float("nan"), {"theta": theta}, {"theta": theta})
