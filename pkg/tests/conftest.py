import numpy as np
import pytest
from robust_counterfactuals.expectation import GridEngine
from robust_counterfactuals.model import (
    Explicit,
    MomentModel,
    ReducedForm,
)


def identity_k(u, theta, gamma):
    return u[:, 0]


@pytest.fixture
def two_point():
    """Uniform reference distribution on {0, 1}"""
    return GridEngine(np.array([[0.0], [1.0]]), np.array([0.5, 0.5]))


@pytest.fixture
def five_point():
    """Uniform reference distribution on {-2, -1, 0, 1, 2}"""
    points = np.arange(-2.0, 3.0)[:, None]
    return GridEngine(points, np.full(5, 0.2))


@pytest.fixture
def free_model():
    """No moment rows beyond unit mass; k(u) = u"""
    return MomentModel(
        dims=(0, 0, 0, 0),
        g_eval=lambda u, theta, gamma: np.empty((u.shape[0], 0)),
        k=Explicit(identity_k),
        theta_lower=[0.0],
        theta_upper=[0.0],
        u_dim=1,
    )


@pytest.fixture
def mean_model():
    """E[U] = P2 with k(u) = u"""
    return MomentModel(
        dims=(0, 1, 0, 0),
        g_eval=lambda u, theta, gamma: u[:, :1],
        k=Explicit(identity_k),
        theta_lower=[0.0],
        theta_upper=[0.0],
        u_dim=1,
    )


@pytest.fixture
def bernoulli_model():
    """
    E[U - theta] = 0 with k(u) = u: on {0, 1} the counterfactual is theta
    itself and delta*(theta) = log 2 - H(theta).
    """
    return MomentModel(
        dims=(0, 1, 0, 0),
        g_eval=lambda u, theta, gamma: u[:, :1] - theta[0],
        k=Explicit(identity_k),
        theta_lower=[0.02],
        theta_upper=[0.98],
        u_dim=1,
        theta_names=("p",),
        theta_hat=[0.5],
    )


@pytest.fixture
def square_model():
    """E[U] = P2 with k(u) = u^2"""
    return MomentModel(
        dims=(0, 1, 0, 0),
        g_eval=lambda u, theta, gamma: u[:, :1],
        k=Explicit(lambda u, theta, gamma: u[:, 0] ** 2),
        theta_lower=[0.0],
        theta_upper=[0.0],
        u_dim=1,
    )


@pytest.fixture
def no_targets():
    return ReducedForm(np.empty(0), np.empty(0))

