import math

import numpy as np
import pytest
from robust_counterfactuals.divergences import instantiate_divergence
from robust_counterfactuals.duality import (
    DualSolveResult,
    SolverSettings,
    Status,
    delta_star,
    dual_objective,
    knife_edge_value,
    linf_feasible,
    linf_lower,
    linf_upper,
    lower_dual,
    recover_density,
    upper_dual,
)
from robust_counterfactuals.errors import CapabilityError, UnsupportedError
from robust_counterfactuals.expectation import (
    ClosedFormEngine,
    MonteCarloEngine,
    make_draws,
)
from robust_counterfactuals.model import Multipliers, ReducedForm
from scipy.optimize import brentq, minimize

FIVE_POINTS = np.arange(-2.0, 3.0)
FIVE_WEIGHTS = np.full(5, 0.2)
MEAN_TARGET = ReducedForm(np.empty(0), np.array([0.2]))


def bernoulli_kl(q):
    return math.log(2) + q * math.log(q) + (1 - q) * math.log(1 - q)


def primal_oracle(token, delta, sign):
    """Extreme E[U^2] over distributions on the five points with
    E[U] = 0.2 and divergence at most delta, by direct minimisation"""

    divergence = instantiate_divergence(token)
    orient = 1.0 if sign == "lower" else -1.0
    k = FIVE_POINTS**2
    result = minimize(
        lambda q: orient * q @ k,
        FIVE_WEIGHTS,
        method="SLSQP",
        bounds=[(1e-10, 1.0)] * 5,
        constraints=[
            {"type": "eq", "fun": lambda q: q.sum() - 1},
            {"type": "eq", "fun": lambda q: q @ FIVE_POINTS - 0.2},
            {
                "type": "ineq",
                "fun": lambda q: delta
                - divergence.divergence_of(q / FIVE_WEIGHTS, FIVE_WEIGHTS),
            },
        ],
        options={"ftol": 1e-14, "maxiter": 1000},
    )
    return float(result.x @ k)


def test_settings_validation():
    with pytest.raises(ValueError, match="grad_tol must be positive"):
        SolverSettings(grad_tol=0)


def test_two_point_delta_star(mean_model, two_point):
    """Minimal KL divergence to a distribution on {0, 1} with mean 0.9"""

    P = ReducedForm(np.empty(0), np.array([0.9]))
    result = delta_star(mean_model, [0.0], two_point, "kl", P)

    expected = 0.9 * math.log(1.8) + 0.1 * math.log(0.2)
    assert result.value == pytest.approx(expected, abs=1e-6)
    assert result.finite
    assert result.sign == "feasibility"

    density = recover_density("kl", result, mean_model, [0.0])
    m = density(np.array([[0.0], [1.0]]))
    assert np.allclose(m, [0.2, 1.8], atol=1e-4)


def test_two_point_lower_dual(free_model, two_point, no_targets):
    """With only the budget binding, the lower bound solves KL(q) = delta"""

    delta = 0.1
    oracle = brentq(lambda q: bernoulli_kl(q) - delta, 1e-9, 0.5)

    lower = lower_dual(free_model, [0.0], two_point, "kl", no_targets, delta)
    upper = upper_dual(free_model, [0.0], two_point, "kl", no_targets, delta)
    assert lower.value == pytest.approx(oracle, abs=1e-6)
    assert upper.value == pytest.approx(1 - oracle, abs=1e-6)
    assert lower.multipliers.eta > 0

    density = recover_density("kl", lower, free_model, [0.0])
    m = density(np.array([[0.0], [1.0]]))
    assert 0.5 * m[1] == pytest.approx(oracle, abs=1e-5)
    assert 0.5 * m.sum() == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("token", ["kl", "chi2", "hybrid", "cressie-read:3"])
@pytest.mark.parametrize("delta", [0.05, 0.3])
def test_strong_duality(square_model, five_point, token, delta):
    """Dual values match the primal program when delta* < delta"""

    feasibility = delta_star(
        square_model, [0.0], five_point, token, MEAN_TARGET
    )
    assert feasibility.value < delta - 1e-6

    lower = lower_dual(
        square_model, [0.0], five_point, token, MEAN_TARGET, delta
    )
    upper = upper_dual(
        square_model, [0.0], five_point, token, MEAN_TARGET, delta
    )
    assert lower.value == pytest.approx(
        primal_oracle(token, delta, "lower"), abs=1e-4
    )
    assert upper.value == pytest.approx(
        primal_oracle(token, delta, "upper"), abs=1e-4
    )
    assert lower.value <= upper.value


@pytest.mark.parametrize("token", ["kl", "chi2", "hybrid"])
def test_weak_duality(square_model, five_point, token):
    """Any dual point bounds the primal value"""

    rng = np.random.default_rng(1)
    for delta in (0.05, 0.3):
        lower = primal_oracle(token, delta, "lower")
        upper = primal_oracle(token, delta, "upper")
        objectives = {
            sign: dual_objective(
                square_model, [0.0], five_point, token, MEAN_TARGET, delta, sign
            )
            for sign in ("lower", "upper")
        }
        for _ in range(50):
            x = rng.uniform(-1, 1, objectives["lower"].size)
            assert objectives["lower"](x)[0] <= lower + 1e-9
            assert objectives["upper"](x)[0] >= upper - 1e-9


@pytest.mark.parametrize("token", ["kl", "chi2", "hybrid"])
@pytest.mark.parametrize("sign", ["lower", "upper"])
def test_gradients(square_model, five_point, token, sign):
    """Analytic dual gradients match central finite differences"""

    objective = dual_objective(
        square_model, [0.0], five_point, token, MEAN_TARGET, 0.2, sign
    )
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(20):
        x = rng.uniform(-0.5, 0.5, objective.size)
        _, grad = objective(x)
        numeric = np.array(
            [
                (objective(x + h * e)[0] - objective(x - h * e)[0]) / (2 * h)
                for e in np.eye(x.size)
            ]
        )
        assert np.allclose(grad, numeric, rtol=1e-5, atol=1e-5)


def test_packing(square_model, five_point):
    kl = dual_objective(
        square_model, [0.0], five_point, "kl", MEAN_TARGET, 0.1, "lower"
    )
    chi2 = dual_objective(
        square_model, [0.0], five_point, "chi2", MEAN_TARGET, 0.1, "lower"
    )
    feasibility = dual_objective(
        square_model,
        [0.0],
        five_point,
        "chi2",
        MEAN_TARGET,
        0.0,
        "feasibility",
    )
    # [log eta][lam], [log eta][zeta][lam] and [zeta][lam]
    assert (kl.offset, kl.size) == (1, 2)
    assert (chi2.offset, chi2.size) == (2, 3)
    assert (feasibility.offset, feasibility.size) == (1, 2)


def test_argument_errors(square_model, five_point):
    with pytest.raises(ValueError, match="delta must be positive"):
        lower_dual(square_model, [0.0], five_point, "kl", MEAN_TARGET, 0.0)

    with pytest.raises(ValueError, match="outside the parameter box"):
        lower_dual(square_model, [1.0], five_point, "kl", MEAN_TARGET, 0.1)

    with pytest.raises(ValueError, match="targeted rows"):
        lower_dual(square_model, [0.0], five_point, "kl", [0.1, 0.2], 0.1)


def test_closed_form_capability(square_model):
    """Models without cell structure cannot be integrated in closed form"""

    with pytest.raises(CapabilityError):
        lower_dual(
            square_model, [0.0], ClosedFormEngine(), "kl", MEAN_TARGET, 0.1
        )


def test_linf_programs(square_model, five_point):
    """Sharp bounds on E[U^2] given E[U] = 0.2 over five support points"""

    lower = linf_lower(square_model, [0.0], five_point, MEAN_TARGET)
    upper = linf_upper(square_model, [0.0], five_point, MEAN_TARGET)
    assert lower.value == pytest.approx(0.2, abs=1e-8)
    assert upper.value == pytest.approx(4.0, abs=1e-8)
    assert lower.status == Status.CONVERGED
    assert lower.multipliers.eta == 0.0

    # the neighbourhood bounds approach the sharp ones from inside
    for delta in (0.1, 1.0, 5.0):
        dual = lower_dual(
            square_model, [0.0], five_point, "kl", MEAN_TARGET, delta
        )
        assert dual.value >= lower.value - 1e-6

    feasible, _ = linf_feasible(square_model, [0.0], five_point, MEAN_TARGET)
    assert feasible

    outside = ReducedForm(np.empty(0), np.array([3.0]))
    feasible, result = linf_feasible(square_model, [0.0], five_point, outside)
    assert not feasible
    assert result.value == math.inf


def test_linf_needs_grid(square_model):
    engine = MonteCarloEngine(make_draws("gaussian", 100, 1, seed=0))
    with pytest.raises(CapabilityError, match="grid engine"):
        linf_lower(square_model, [0.0], engine, MEAN_TARGET)


def test_recover_density_errors(square_model):
    unbounded = DualSolveResult(
        math.inf,
        Multipliers.zeros(square_model.dims),
        math.inf,
        0,
        Status.UNBOUNDED,
        "feasibility",
    )
    with pytest.raises(UnsupportedError, match="unbounded"):
        recover_density("kl", unbounded, square_model, [0.0])

    boundary = unbounded._replace(value=1.0, status=Status.BOUNDARY)
    with pytest.raises(UnsupportedError, match="lower boundary"):
        recover_density("kl", boundary, square_model, [0.0], sign="lower")

    with pytest.raises(ValueError, match="sign must be one of"):
        recover_density("kl", boundary, square_model, [0.0], sign="sideways")


def test_knife_edge_value(mean_model, two_point):
    """Under the minimal-divergence distribution E[m k] is the target"""

    P = ReducedForm(np.empty(0), np.array([0.7]))
    feasibility = delta_star(mean_model, [0.0], two_point, "kl", P)
    value = knife_edge_value("kl", feasibility, mean_model, [0.0], two_point)
    assert value == pytest.approx(0.7, abs=1e-6)
