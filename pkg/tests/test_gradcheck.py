"""Tests for the finite-difference helpers."""

import numpy as np
import pytest

from pixseg.gradcheck import (
    check_gradients,
    check_gradients_off_kinks,
    elementwise_relative_error,
    numerical_gradient,
    relative_error,
)
from pixseg.layers import relu
from pixseg.tensor import Tensor


def test_numerical_gradient_of_square():
    x = Tensor([1.0, -2.0, 0.5], requires_grad=True)
    estimate = numerical_gradient(lambda: (x * x).sum(), x)
    np.testing.assert_allclose(estimate, [2.0, -4.0, 1.0], atol=1e-8)
    np.testing.assert_array_equal(x.data, [1.0, -2.0, 0.5])


def test_relative_error_uses_the_larger_magnitude():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.0])) == 0.0
    assert relative_error(np.array([1.0]), np.array([3.0])) == pytest.approx(2.0 / 3.0)
    assert relative_error(np.array([1.0]), np.array([1.0001])) == pytest.approx(1e-4 / 1.0001)
    # Below the floor the absolute difference is scaled by 1e-6.
    np.testing.assert_allclose(elementwise_relative_error([0.0, 2e-7], [1e-7, 0.0]), [0.1, 0.2])


def test_check_gradients_reports_each_parameter():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((3, 1)), requires_grad=True)
    errors = check_gradients(lambda: (a @ b).sum(), [("a", a), ("b", b)])
    assert set(errors) == {"a", "b"}
    assert max(errors.values()) < 1e-6


def test_entries_next_to_a_relu_switch_are_skipped():
    """Test that an input 5e-6 from zero is skipped and the rest are compared."""
    x = Tensor([1.0, -2.0, 5e-6], requires_grad=True)
    result = check_gradients_off_kinks(lambda: relu(x).sum(), [("x", x)])["x"]
    assert result.n_entries == 3
    assert result.kept == pytest.approx(2.0 / 3.0)
    assert result.error < 1e-8
    # The plain check sees the kink as a 25% error.
    assert check_gradients(lambda: relu(x).sum(), [("x", x)])["x"] == pytest.approx(0.25, rel=1e-6)


def test_wrong_backward_is_still_caught_off_kinks():
    x = Tensor([0.5, -1.5, 2.0], requires_grad=True)

    def loss():
        # Backward claims d(x^2)/dx = x.
        squared = Tensor.from_op(x.data**2, (x,), lambda g: (g * x.data,), "bad_square")
        return squared.sum()

    result = check_gradients_off_kinks(loss, [("x", x)])["x"]
    assert result.kept == 1.0
    assert result.error == pytest.approx(0.5, rel=1e-6)
