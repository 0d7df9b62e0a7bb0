import numpy as np
import pytest
from robust_counterfactuals.gaussian import (
    AffineBox,
    box_first_moment,
    box_probability,
    intersect,
)
from robust_counterfactuals.util import central_jacobian
from scipy.stats import norm

INF = np.inf


def test_box_probability():
    assert box_probability([-INF], [0.0]) == pytest.approx(0.5)
    assert box_probability([-INF, 0.0], [0.0, INF]) == pytest.approx(0.25)
    assert box_probability([-1.0, -2.0], [1.0, 2.0]) == pytest.approx(
        (norm.cdf(1) - norm.cdf(-1)) * (norm.cdf(2) - norm.cdf(-2))
    )
    # empty boxes have no mass
    assert box_probability([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_box_first_moment():
    assert np.allclose(box_first_moment([0.0], [INF]), [norm.pdf(0)])
    assert np.allclose(box_first_moment([-INF], [INF]), [0.0])

    moment = box_first_moment([0.0, -INF], [INF, 1.0])
    assert moment == pytest.approx(
        [norm.pdf(0) * norm.cdf(1), -norm.pdf(1) * 0.5]
    )
    assert np.allclose(box_first_moment([1.0, 0.0], [0.0, 1.0]), 0.0)


def test_box_first_moment_against_samples():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((400_000, 2))
    lows, highs = np.array([-0.5, -INF]), np.array([1.5, 0.3])
    inside = np.all((u >= lows) & (u <= highs), axis=1)
    assert np.allclose(
        box_first_moment(lows, highs), (u * inside[:, None]).mean(axis=0),
        atol=5e-3,
    )


def test_affine_box():
    # {u : u1 <= theta1, u2 >= theta1 - theta2}
    box = AffineBox(
        low_const=np.array([-INF, 0.0]),
        low_coef=np.array([[0.0, 0.0], [1.0, -1.0]]),
        high_const=np.array([0.0, INF]),
        high_coef=np.array([[1.0, 0.0], [0.0, 0.0]]),
    )
    theta = np.array([0.3, 0.5])

    lows, highs = box.edges(theta)
    assert np.allclose(lows, [-INF, -0.2])
    assert np.allclose(highs, [0.3, INF])
    assert box.probability(theta) == pytest.approx(
        norm.cdf(0.3) * norm.sf(-0.2)
    )

    numeric = central_jacobian(lambda t: box.probability(t), theta, 1e-6)[0]
    assert np.allclose(box.gradient(theta), numeric, atol=1e-7)


def test_intersect():
    lows, highs = intersect(([0.0], [2.0]), ([1.0], [3.0]))
    assert np.array_equal(lows, [1.0])
    assert np.array_equal(highs, [2.0])
