import math

import numpy as np
import pytest
from robust_counterfactuals.divergences import (
    _ALL_DIVERGENCES,
    Divergence,
    check_moment_compatibility,
    divergence_of,
    instantiate_divergence,
    phi,
    phi_conjugate,
    register_divergence,
    scaled_conjugate,
    scaled_conjugate_derivative,
)

TOKENS = ["kl", "chi2", "cressie-read:1.5", "cressie-read:3", "hybrid"]


def test_incomplete_subclassing():
    """A divergence must implement all abstract methods"""

    class IncorrectDivergence(Divergence):
        pass

    with pytest.raises(TypeError):
        IncorrectDivergence()


def test_failure_to_register():
    """Unknown tokens list the registered divergences"""

    with pytest.raises(ValueError, match="Available divergences"):
        instantiate_divergence("un-registered")

    with pytest.raises(ValueError, match="does not take a parameter"):
        instantiate_divergence("kl:2")

    with pytest.raises(ValueError, match="p > 1"):
        instantiate_divergence("cressie-read:0.5")


def test_registration():
    @register_divergence("total-variation-ish")
    class Custom(Divergence):
        def phi(self, x):
            return np.abs(np.asarray(x) - 1)

        def conjugate(self, y):
            return np.asarray(y)

        def conjugate_derivative(self, y):
            return np.ones_like(np.asarray(y, dtype=float))

    try:
        divergence = instantiate_divergence("total-variation-ish")
        assert isinstance(divergence, Custom)
        assert divergence.token == "total-variation-ish"
    finally:
        _ALL_DIVERGENCES.pop("total-variation-ish")


@pytest.mark.parametrize("token", TOKENS)
def test_normalisation(token):
    """phi(1) = 0, phi >= 0 and phi = +inf below zero"""

    divergence = instantiate_divergence(token)
    x = np.linspace(0, 5, 51)
    assert np.isclose(divergence.phi(1.0), 0.0)
    assert np.all(divergence.phi(x) >= -1e-12)
    assert divergence.phi(-0.5) == np.inf


@pytest.mark.parametrize("token", TOKENS)
def test_conjugate_is_sup(token):
    """phi*(y) >= t y - phi(t) for every t, with equality at phi*'(y)"""

    divergence = instantiate_divergence(token)
    t = np.linspace(0, 6, 601)
    for y in (-3.0, -0.5, 0.0, 0.4, 1.2):
        conjugate = divergence.conjugate(y)
        assert np.all(conjugate >= t * y - divergence.phi(t) - 1e-9)
        m = divergence.conjugate_derivative(y)
        assert m >= 0
        assert np.isclose(conjugate, m * y - divergence.phi(m), atol=1e-9)


@pytest.mark.parametrize("token", TOKENS)
def test_conjugate_derivative(token):
    divergence = instantiate_divergence(token)
    y = np.array([-2.0, -0.3, 0.2, 0.9, 1.5])
    h = 1e-6
    numeric = (divergence.conjugate(y + h) - divergence.conjugate(y - h)) / (
        2 * h
    )
    assert np.allclose(divergence.conjugate_derivative(y), numeric, atol=1e-5)


def test_known_values():
    kl = instantiate_divergence("kl")
    assert np.isclose(kl.conjugate(0.0), 0.0)
    assert np.isclose(kl.phi(math.e), 1.0)

    chi2 = instantiate_divergence("chi2")
    assert np.isclose(chi2.phi(3.0), 2.0)
    # below the kink the conjugate is -phi(0)
    assert np.isclose(chi2.conjugate(-5.0), -0.5)
    assert chi2.conjugate_derivative(-5.0) == 0.0

    hybrid = instantiate_divergence("hybrid")
    assert np.isclose(hybrid.phi(math.e), kl.phi(math.e))
    assert np.isclose(hybrid.conjugate_derivative(2.0), 2 * math.e)


def test_tokens():
    assert instantiate_divergence("cressie-read:1.5").token == (
        "cressie-read:1.5"
    )
    assert instantiate_divergence("chi2").token == "chi2"
    assert instantiate_divergence("chi2") != instantiate_divergence("kl")
    assert instantiate_divergence("kl").profiles_normalisation


def test_hybrid_conjugate():
    """The quadratic branch of the hybrid conjugate is e(y^2 + 1)/2 - 1,
    and both branches agree at y = 1"""

    assert phi_conjugate("hybrid", 1.0) == pytest.approx(math.e - 1)
    assert phi_conjugate("hybrid", 2.0) == pytest.approx(2.5 * math.e - 1)
    assert phi_conjugate("kl", 0.5) == pytest.approx(math.expm1(0.5))

    # the supremum defining phi* is attained at x = e y
    x = 2 * math.e
    assert phi_conjugate("hybrid", 2.0) == pytest.approx(
        2.0 * x - phi("hybrid", x)
    )


def test_scaled_conjugate():
    y = np.array([-1.0, 0.0, 2.0])
    assert np.allclose(
        scaled_conjugate("kl", 2.0, y), 2.0 * (np.exp(y / 2.0) - 1)
    )
    assert np.array_equal(
        scaled_conjugate("kl", 0.0, y), np.array([0.0, 0.0, np.inf])
    )
    with pytest.raises(ValueError, match="nonnegative"):
        scaled_conjugate("kl", -1.0, y)


@pytest.mark.parametrize("token", TOKENS)
def test_scaled_conjugate_derivative(token):
    eta, h = 1.5, 1e-6
    y = np.array([-0.3, 0.3, 1.2])
    upper = scaled_conjugate(token, eta, y + h)
    lower = scaled_conjugate(token, eta, y - h)
    numeric = (upper - lower) / (2 * h)
    assert np.allclose(
        scaled_conjugate_derivative(token, eta, y), numeric, atol=1e-5
    )

    with pytest.raises(ValueError, match="positive"):
        scaled_conjugate_derivative(token, 0.0, y)


def test_divergence_of():
    m = np.array([0.4, 1.8])
    w = np.array([0.5, 0.5])
    expected = 0.5 * (0.4 * np.log(0.4) - 0.4 + 1) + 0.5 * (
        1.8 * np.log(1.8) - 1.8 + 1
    )
    assert np.isclose(divergence_of("kl", m, w), expected)

    with pytest.raises(ValueError, match="sum to 1"):
        divergence_of("kl", m, [0.5, 0.6])
    with pytest.raises(ValueError, match="equal length"):
        divergence_of("kl", m, [1.0])


def test_moment_compatibility():
    rng = np.random.default_rng(0)
    gaussian = 0.5 * rng.standard_normal(10_000)
    assert check_moment_compatibility("kl", gaussian).passed
    assert check_moment_compatibility("hybrid", gaussian).passed

    # one sample carries almost all of the mass
    heavy = np.ones(1_000)
    heavy[0] = 1e4
    assert not check_moment_compatibility("kl", heavy).passed
    assert not check_moment_compatibility("chi2", heavy).passed

    report = check_moment_compatibility("kl", [1.0])
    assert not report.passed
    assert "two samples" in report.messages[0]
