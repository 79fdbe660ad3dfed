import numpy as np
import pytest

from robust_hedge.errors import ConfigError
from robust_hedge.models import (
    as_alpha,
    constant_model,
    model_from_json,
    ou_model,
    running_mean_model,
    time_trend_model,
)


def test_as_alpha():
    assert np.array_equal(as_alpha(1.5, 1), [1.5])
    assert np.array_equal(as_alpha([1.0, 2.0], 2), [1.0, 2.0])
    with pytest.raises(ConfigError):
        as_alpha([1.0, 2.0], 1)
    with pytest.raises(ConfigError):
        as_alpha([np.inf], 1)


def test_constant_model():
    model = constant_model(0.1)
    s = np.linspace(0.0, 1.0, 5)
    xs = np.arange(5.0)
    assert np.array_equal(model.drift_along(s, xs, np.array([2.0])), np.full(5, 2.0))
    assert model.drift_grad_along(s, xs, np.array([2.0])).shape == (5, 1)
    assert model.probe([1.0])


def test_ou_model():
    model = ou_model(0.1)
    s = np.linspace(0.0, 1.0, 3)
    xs = np.array([0.0, 1.0, 2.0])
    alpha = np.array([1.0, 0.5])
    assert np.allclose(model.drift_along(s, xs, alpha), [1.0, 0.5, 0.0])
    grad = model.drift_grad_along(s, xs, alpha)
    assert grad.shape == (3, 2)
    assert np.allclose(grad[:, 1], -xs)
    # prefix evaluation uses the last value only
    assert model.drift(1.0, xs, alpha) == pytest.approx(0.0)


def test_time_trend_model():
    model = time_trend_model(0.1)
    s = np.array([0.0, 0.5, 1.0])
    assert np.allclose(model.drift_along(s, np.zeros(3), np.array([2.0])), [2.0, 3.0, 4.0])


def test_running_mean_matches_prefix_evaluation():
    model = running_mean_model(0.1)
    s = np.linspace(0.0, 1.0, 6)
    xs = np.array([0.0, 1.0, 3.0, -2.0, 0.5, 4.0])
    alpha = np.array([0.3, 0.7])
    fast = model.drift_along(s, xs, alpha)
    slow = [model.drift(s[j], xs[: j + 1], alpha) for j in range(len(s))]
    assert np.allclose(fast, slow)
    grad = model.drift_grad_along(s, xs, alpha)
    assert np.allclose(grad[:, 1], [-np.mean(xs[: j + 1]) for j in range(len(s))])


def test_with_epsilon():
    model = ou_model(0.1)
    other = model.with_epsilon(0.01)
    assert other.epsilon == 0.01
    assert model.epsilon == 0.1
    with pytest.raises(ConfigError):
        model.with_epsilon(0.0)


def test_model_from_json():
    model = model_from_json({"name": "ou-speed", "epsilon": 0.05, "params": {"level": 2.0}})
    assert model.m == 1
    assert model.params["level"] == 2.0
    assert model.to_dict()["name"] == "ou-speed"
    assert model_from_json({"name": "ou", "epsilon": 0.05, "t_end": 2.0}).t_end == 2.0


def test_model_from_json_errors():
    with pytest.raises(ConfigError):
        model_from_json({"name": "ou"})
    with pytest.raises(ConfigError):
        model_from_json({"name": "nope", "epsilon": 0.1})
    with pytest.raises(ConfigError):
        model_from_json({"name": "ou", "epsilon": 0.1, "params": {"bogus": 1}})
    with pytest.raises(ConfigError):
        model_from_json({"name": "ou", "epsilon": -1.0})
    with pytest.raises(ConfigError):
        model_from_json([1, 2])
