"""Tests for the SGD optimizer."""

import numpy as np
import pytest

from pixseg.errors import ConfigError, NumericError
from pixseg.optim import MAX_SEED, Sgd, SgdConfig, sgd_step
from pixseg.tensor import Tensor


def _param(value, grad):
    param = Tensor([value], requires_grad=True)
    param.grad = np.array([grad])
    return param


def test_plain_step():
    param = _param(1.0, 2.0)
    sgd_step([param], SgdConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.0))
    assert param.data[0] == pytest.approx(0.8, abs=1e-15)


def test_zero_gradient_is_a_fixed_point():
    param = _param(1.5, 0.0)
    sgd_step([param], SgdConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.0))
    assert param.data[0] == 1.5


def test_momentum_recurrence():
    """Test two momentum steps on a fixed gradient: -0.1 then -0.29."""
    param = _param(0.0, 1.0)
    config = SgdConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0)
    velocities = sgd_step([param], config)
    assert param.data[0] == pytest.approx(-0.1, abs=1e-12)
    velocities = sgd_step([param], config, velocities)
    assert param.data[0] == pytest.approx(-0.29, abs=1e-12)
    assert velocities[0][0] == pytest.approx(1.9, abs=1e-12)


def test_optimizer_carries_momentum_between_steps():
    param = _param(0.0, 1.0)
    optimizer = Sgd([param], SgdConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0))
    optimizer.step()
    optimizer.step()
    assert param.data[0] == pytest.approx(-0.29, abs=1e-12)


def test_weight_decay_adds_to_velocity():
    param = _param(2.0, 0.0)
    sgd_step([param], SgdConfig(learning_rate=0.5, momentum=0.0, weight_decay=0.1))
    assert param.data[0] == pytest.approx(2.0 - 0.5 * 0.2, abs=1e-15)


def test_gradients_are_left_for_the_caller():
    param = _param(1.0, 2.0)
    optimizer = Sgd([param], SgdConfig())
    optimizer.step()
    np.testing.assert_array_equal(param.grad, [2.0])


def test_missing_gradient_counts_as_zero():
    param = Tensor([1.0], requires_grad=True)
    sgd_step([param], SgdConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.0))
    assert param.data[0] == 1.0


def test_non_finite_update_raises():
    param = _param(1.0, 1e308)
    with np.errstate(over="ignore"):
        with pytest.raises(NumericError):
            sgd_step([param], SgdConfig(learning_rate=1e10, momentum=0.0, weight_decay=0.0))
    assert param.data[0] == 1.0


def test_failed_step_leaves_every_parameter_untouched():
    """Test that a blow-up in the last parameter does not move the earlier ones."""
    first = _param(1.0, 1.0)
    second = _param(1.0, 1e308)
    velocities = [np.array([0.5]), np.array([0.0])]
    config = SgdConfig(learning_rate=1e10, momentum=0.5, weight_decay=0.0)
    with np.errstate(over="ignore"):
        with pytest.raises(NumericError, match="#1"):
            sgd_step([first, second], config, velocities)
    assert first.data[0] == 1.0
    assert second.data[0] == 1.0
    np.testing.assert_array_equal(velocities[0], [0.5])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"learning_rate": 0.0},
        {"learning_rate": -1.0},
        {"momentum": 1.0},
        {"momentum": -0.1},
        {"weight_decay": -1e-4},
        {"seed": -1},
        {"seed": MAX_SEED + 1},
    ],
)
def test_invalid_config_rejected(kwargs):
    with pytest.raises(ConfigError):
        SgdConfig(**kwargs)
