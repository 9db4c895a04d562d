import numpy as np
import pytest

from fedfg.params import ParamVector


def central_diff(f, params: ParamVector, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``params``."""
    base = params.values
    grad = np.empty_like(base)
    for k in range(base.size):
        plus, minus = base.copy(), base.copy()
        plus[k] += h
        minus[k] -= h
        grad[k] = (f(params.with_values(plus)) - f(params.with_values(minus))) / (2 * h)
    return grad


def assert_grad_close(analytic, numeric, rtol=1e-5, atol=1e-8):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    bound = rtol * np.maximum(np.abs(analytic), np.abs(numeric)) + atol
    bad = np.abs(analytic - numeric) > bound
    assert not bad.any(), (
        f"{bad.sum()} coordinates off; worst abs err {np.abs(analytic - numeric).max():.3e}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
