import numpy as np
from robust_counterfactuals.util import (
    capped_exp,
    central_jacobian,
    truncate,
    unwrap,
)


def test_unwrap():
    """0-d arrays become scalars, everything else is left alone"""
    assert unwrap(np.array(2.0)) == 2.0
    assert not isinstance(unwrap(np.array(2.0)), np.ndarray)

    array = np.array([1.0, 2.0])
    assert unwrap(array) is array


def test_capped_exp():
    values = capped_exp(np.array([0.0, 1.0, 701.0]))
    assert values[0] == 1.0
    assert np.isclose(values[1], np.e)
    assert values[2] == np.inf


def test_central_jacobian():
    def function(x):
        return np.array([x[0] * x[1], np.sin(x[0])])

    x = np.array([0.3, -2.0])
    jacobian = central_jacobian(function, x)
    expected = np.array([[x[1], x[0]], [np.cos(x[0]), 0.0]])
    assert jacobian.shape == (2, 2)
    assert np.allclose(jacobian, expected, atol=1e-8)


def test_truncate():
    assert truncate("short") == "short"

    long = "a" * 60 + "b" * 60
    short = truncate(long, width=20)
    assert short == "a" * 10 + "..." + "b" * 10
