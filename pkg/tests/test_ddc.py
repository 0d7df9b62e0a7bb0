import dataclasses

import numpy as np
import pytest
from robust_counterfactuals.cli import target_sensitivity
from robust_counterfactuals.ddc import (
    COUNTERFACTUAL_CCPS,
    ESTIMATED_CCPS,
    STATES,
    DdcConfig,
    DdcTheta,
    build_ddc_model,
    counterfactual_ccps,
    ddc_jacobian,
    ddc_local_matrices,
    estimate_ddc_theta,
    logit_ccps,
    payoff_gradient,
    payoffs,
    solve_logit_value,
    theta_names,
    transition_matrices,
)
from robust_counterfactuals.errors import CapabilityError
from robust_counterfactuals.expectation import (
    EULER_GAMMA,
    MonteCarloEngine,
    make_draws,
)
from robust_counterfactuals.model import instantiate_model
from robust_counterfactuals.sensitivity import local_moments
from robust_counterfactuals.util import central_jacobian
from scipy.special import expit

CONFIG = DdcConfig()


@pytest.fixture(scope="module")
def theta_hat():
    return estimate_ddc_theta()


def expected_moments(theta, config=CONFIG):
    """E[g] under logit shocks: choice probabilities, then the value
    fixed-point residuals before and after the subsidy"""

    theta = DdcTheta.from_stacked(theta)
    M0, M1 = transition_matrices(config.q)
    residuals, probabilities = [], []
    for which, v in (("pre", theta.v), ("post", theta.v_tilde)):
        pi0, pi1 = payoffs(theta.theta_pi, config, which)
        a0 = pi0 + config.beta * M0 @ v
        a1 = pi1 + config.beta * M1 @ v
        probabilities.append(expit(a1 - a0))
        residuals.append(EULER_GAMMA + np.logaddexp(a0, a1) - v)
    return np.concatenate([probabilities[0]] + residuals), probabilities[1]


def test_config_validation():
    with pytest.raises(ValueError, match="beta must lie"):
        DdcConfig(beta=1.0)
    with pytest.raises(ValueError, match="Rows of q must sum to 1"):
        DdcConfig(q=np.full((3, 3), 0.5))
    with pytest.raises(ValueError, match="strictly inside"):
        DdcConfig(ccps=np.ones(6))
    with pytest.raises(ValueError, match="Expected 16 parameters"):
        DdcTheta.from_stacked(np.zeros(4))
    assert theta_names()[:4] == ("c_d", "c_e", "c_f", "c_m")


def test_transition_matrices():
    M0, M1 = transition_matrices(CONFIG.q)
    assert np.allclose(M0.sum(axis=1), 1.0)
    assert np.allclose(M1.sum(axis=1), 1.0)
    # inactive firms move to states with a_prev = 0
    assert np.all(M0[:, 3:] == 0) and np.all(M1[:, :3] == 0)


def test_payoff_gradient():
    theta_pi = np.array([1.5, 9.0, 5.5, 11.0])
    numeric = central_jacobian(
        lambda t: payoffs(t, CONFIG)[1], theta_pi, 1e-6
    )
    assert np.allclose(payoff_gradient(theta_pi, CONFIG), numeric, atol=1e-6)

    with pytest.raises(ValueError, match="c_d must be positive"):
        payoffs([0.0, 9.0, 5.5, 11.0], CONFIG)
    with pytest.raises(ValueError, match="which must be"):
        payoffs(theta_pi, CONFIG, "during")


def test_value_fixed_point():
    theta_pi = np.array([1.5, 9.0, 5.5, 11.0])
    v = solve_logit_value(theta_pi, CONFIG)
    pi0, pi1 = payoffs(theta_pi, CONFIG)
    M0, M1 = transition_matrices(CONFIG.q)
    updated = EULER_GAMMA + np.logaddexp(
        pi0 + CONFIG.beta * M0 @ v, pi1 + CONFIG.beta * M1 @ v
    )
    assert np.allclose(updated, v, atol=1e-10)


def test_estimate(theta_hat):
    """Inverting the estimated probabilities recovers the payoffs"""

    assert theta_hat.theta_pi == pytest.approx([1.5, 9.0, 5.5, 11.0], abs=0.1)
    fitted = logit_ccps(theta_hat.theta_pi, CONFIG, "pre", theta_hat.v)
    assert np.allclose(fitted, ESTIMATED_CCPS, atol=1e-3)


def test_counterfactual_ccps(theta_hat):
    post = counterfactual_ccps(theta_hat)
    assert np.allclose(post, COUNTERFACTUAL_CCPS, atol=1e-3)
    # re-solving the value function gives the same answer
    assert np.allclose(
        counterfactual_ccps(theta_hat.theta_pi), post, atol=1e-8
    )


def test_model(theta_hat):
    model = build_ddc_model(CONFIG, "H", theta_hat)
    center = theta_hat.stacked()
    assert model.dims == (0, 6, 0, 12)
    assert model.u_distribution == "gumbel"
    assert model.contains(center)
    assert len(model.theta_names) == center.size == 16

    engine = MonteCarloEngine(make_draws("gumbel", 200_000, 2, seed=0))
    snapshot = engine.snapshot(model, center)
    means = snapshot.weights @ snapshot.G
    assert np.allclose(means[:6], ESTIMATED_CCPS, atol=5e-3)
    assert np.allclose(means[6:], 0.0, atol=2e-2)
    assert snapshot.mean_k() == pytest.approx(COUNTERFACTUAL_CCPS[0], abs=5e-3)

    with pytest.raises(ValueError, match="Unknown state"):
        build_ddc_model(CONFIG, "X", theta_hat)


def test_analytic_jacobian(theta_hat):
    """H and J match central differences of the logit expectations"""

    center = theta_hat.stacked()
    for focus in ("H", "M"):
        H, J = ddc_jacobian(center, CONFIG, focus)
        numeric_H = central_jacobian(
            lambda t: expected_moments(t)[0], center, 1e-6
        )
        i = STATES.index(f"{focus}0")
        numeric_J = central_jacobian(
            lambda t: expected_moments(t)[1][i], center, 1e-6
        )[0]
        assert H.shape == (18, 16)
        assert np.allclose(H, numeric_H, atol=1e-5)
        assert np.allclose(J, numeric_J, atol=1e-5)



def test_local_matrices(theta_hat):
    """The analytic hook agrees with the generic averages over the same
    draws, and is the path local_moments takes for the model"""

    center = theta_hat.stacked()
    engine = MonteCarloEngine(make_draws("gumbel", 20_000, 2, seed=1))
    moments = ddc_local_matrices(center, CONFIG, "M", engine)
    H, J = ddc_jacobian(center, CONFIG, "M")
    assert np.array_equal(moments.H, H) and np.array_equal(moments.J, J)
    assert moments.V.shape == (18, 18)
    assert np.allclose(moments.V, moments.V.T)

    model = build_ddc_model(CONFIG, "M", theta_hat)
    generic = local_moments(
        dataclasses.replace(model, local_moments=None),
        center,
        engine,
        CONFIG.ccps,
    )
    assert np.allclose(moments.V, generic.V)
    assert np.allclose(moments.Ekh, generic.Ekh)
    assert np.allclose(moments.h_mean, generic.h_mean)
    assert moments.kappa == pytest.approx(generic.kappa)
    assert moments.k_variance == pytest.approx(generic.k_variance)

    hooked = local_moments(model, center, engine, CONFIG.ccps)
    assert np.array_equal(hooked.V, moments.V)

    with pytest.raises(CapabilityError, match="Monte Carlo or grid"):
        ddc_local_matrices(center, CONFIG, "M")

def test_targets():
    targets = instantiate_model("ddc-kss", {"focus_states": ["H", "M"]})
    assert [t.label for t in targets] == ["entry_H0", "entry_M0"]
    assert targets[0].kappa_hat == pytest.approx(0.9495, abs=1e-3)
    assert targets[0].baseline == pytest.approx(0.9361, abs=1e-3)
    assert targets[1].kappa_hat == pytest.approx(0.9027, abs=1e-3)


@pytest.mark.slow
def test_local_sensitivity():
    """Entry at the high state is less sensitive than at the medium one"""

    engine = MonteCarloEngine(make_draws("gumbel", 100_000, 2, seed=0))
    high, medium = instantiate_model("ddc-kss", {})
    s_high = target_sensitivity(high, engine).s_hat
    s_medium = target_sensitivity(medium, engine).s_hat
    assert s_high == pytest.approx(0.020, rel=0.15)
    assert s_medium == pytest.approx(0.035, rel=0.15)
