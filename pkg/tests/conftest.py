import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ebst import nn

settings.register_profile("desk", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("desk")


def flatten_params(params):
    return np.concatenate([a.ravel() for a in params.weights + params.biases])


def perturbed(params, index, delta):
    """Copy of params with one flat coordinate nudged by delta."""
    out = params.copy()
    arrays = out.weights + out.biases
    offset = 0
    for arr in arrays:
        if index < offset + arr.size:
            arr.flat[index - offset] += delta
            return out
        offset += arr.size
    raise IndexError(index)


def finite_difference(loss_fn, params, h=1e-5):
    """Central-difference gradient of a scalar loss over every parameter."""
    n = flatten_params(params).size
    grad = np.zeros(n)
    for i in range(n):
        grad[i] = (loss_fn(perturbed(params, i, h)) - loss_fn(perturbed(params, i, -h))) / (2 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-7):
    """Worst relative disagreement; tiny pairs compare absolutely."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    rel = np.where(scale > floor, err / np.maximum(scale, floor), err)
    return float(rel.max())


@pytest.fixture
def fd_tools():
    return flatten_params, finite_difference, max_rel_error


@pytest.fixture
def tiny_params():
    """Deterministic 2 -> 4 -> 3 net for gradient checks."""
    return nn.init_params([2, 4, 3], np.random.default_rng(123))
