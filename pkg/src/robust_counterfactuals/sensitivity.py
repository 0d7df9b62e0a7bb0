"""
Local sensitivity of the counterfactual to misspecification of the
reference distribution.

For models with equality restrictions only, the bounds over small
neighbourhoods behave like ``kappa_hat +/- sqrt(delta * s)``, where ``s``
is twice the variance of the influence function

    iota(u) = (k(u) - kappa) - Q h(u),    h = (g2 - P2; g4),

of the counterfactual. This module estimates ``s`` and evaluates ``iota``.
"""

from __future__ import annotations

import logging
import math
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import CapabilityError, ConditioningError, SingularityError
from .expectation import ExpectationEngine, PointSnapshot
from .model import LocalMoments, MomentModel
from .util import central_jacobian

logger = logging.getLogger(__name__)

_RIDGE = 1e-10


class SensitivityReport(NamedTuple):
    """
    Local sensitivity and the matrices it is built from.

    Parameters
    ----------
    s_hat : float
        Estimated local sensitivity, nonnegative.
    H : numpy.ndarray
        ``dE[h]/dtheta'``, shape ``(d2 + d4, d_theta)``.
    J : numpy.ndarray
        ``dkappa/dtheta'``, length ``d_theta``.
    V : numpy.ndarray
        ``E[h h']``.
    Q : numpy.ndarray
        Loadings of the influence function on ``h``.
    kappa_hat : float
        The counterfactual at the estimate.
    implicit : bool
        Whether the counterfactual depends on theta only.
    ridge : bool
        Whether ``V`` needed the ridge fallback to be inverted.
    """

    s_hat: float
    H: np.ndarray
    J: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    kappa_hat: float
    implicit: bool = False
    ridge: bool = False


def _factor_v(V: np.ndarray):
    try:
        return cho_factor(V), False
    except LinAlgError:
        pass
    scale = max(1.0, float(np.mean(np.diag(V))))
    ridged = V + _RIDGE * scale * np.eye(V.shape[0])
    try:
        factor = cho_factor(ridged)
    except LinAlgError as error:
        raise ConditioningError(
            "E[h h'] is not positive definite, even after a ridge of "
            f"{_RIDGE:g}."
        ) from error
    logger.warning(
        "E[h h'] is not numerically positive definite; inverted with a "
        "ridge of %g",
        _RIDGE,
    )
    return factor, True


def _check_rank(H: np.ndarray) -> None:
    rank = np.linalg.matrix_rank(H)
    if rank < H.shape[1]:
        raise SingularityError(
            f"dE[h]/dtheta' has rank {rank} < {H.shape[1]}; theta is not "
            "locally identified by the equality restrictions."
        )


def _equalities_model(model: MomentModel) -> MomentModel:
    if model.d1 or model.d3:
        raise ValueError(
            "Local sensitivity needs equality restrictions only; use "
            "model.equalities_only()."
        )
    return model


def _summary(model: MomentModel, engine: ExpectationEngine):
    """E[g] and E[k] at theta under the reference distribution."""

    def summary(theta):
        snapshot = engine.snapshot(model, theta)
        zero = np.zeros(model.d)
        if isinstance(snapshot, PointSnapshot):
            mean_g = snapshot.weights @ snapshot.G
            mean_k = snapshot.mean_k() if model.is_explicit else 0.0
            return np.append(mean_g, mean_k)
        tilt = snapshot.tilt(zero)
        mean_k = tilt.mean_k if model.is_explicit else 0.0
        return np.append(tilt.mean_g, mean_k)

    return summary


def local_moments(
    model: MomentModel,
    theta: np.ndarray,
    engine: ExpectationEngine,
    P2: np.ndarray,
    step: float = 1e-5,
) -> LocalMoments:
    """
    ``H``, ``J``, ``V``, ``E[k h]`` and the moments of ``k`` at ``theta``.

    Analytic overrides on the model take precedence: ``model.local_moments``
    supplies everything, ``model.jacobian`` supplies ``H`` and ``J``. The
    remaining pieces come from central finite differences (relative
    ``step``) and from the support points of ``engine``.
    """

    model = _equalities_model(model)
    theta = np.asarray(theta, dtype=float)
    P2 = np.asarray(P2, dtype=float).ravel()
    if model.local_moments is not None:
        return model.local_moments(theta, P2, engine)

    if model.jacobian is not None:
        H, J = model.jacobian(theta, P2)
    else:
        derivatives = central_jacobian(_summary(model, engine), theta, step)
        H, J = derivatives[:-1], derivatives[-1]
    if not model.is_explicit and model.jacobian is None:
        if model.k.gradient is not None:
            J = np.asarray(model.k.gradient(theta, model.gamma), dtype=float)
        else:
            J = central_jacobian(model.k_implicit, theta, step)[0]

    snapshot = engine.snapshot(model, theta)
    if not isinstance(snapshot, PointSnapshot):
        raise CapabilityError(
            "E[h h'] needs a Monte Carlo or grid engine unless the model "
            "supplies local_moments."
        )
    w = snapshot.weights
    h = snapshot.G - model.pad(P2)
    h_mean = w @ h
    V = (h * w[:, None]).T @ h
    if model.is_explicit:
        K = snapshot.K
        kappa = float(w @ K)
        Ekh = (h * w[:, None]).T @ K
        k_variance = float(w @ (K - kappa) ** 2)
    else:
        kappa = model.k_implicit(theta)
        Ekh = kappa * h_mean
        k_variance = 0.0
    return LocalMoments(
        np.atleast_2d(H),
        np.asarray(J, dtype=float).ravel(),
        0.5 * (V + V.T),
        Ekh,
        kappa,
        k_variance,
        h_mean,
    )


def _loadings(moments: LocalMoments, implicit: bool):
    H, J, V = moments.H, moments.J, moments.V
    _check_rank(H)
    factor, ridge = _factor_v(V)
    Vinv_H = cho_solve(factor, H)
    A = H.T @ Vinv_H
    # J A^-1 H'V^-1, as a row vector
    theta_part = np.linalg.solve(A, J) @ Vinv_H.T
    if implicit:
        return theta_part, ridge
    if H.shape[0] == H.shape[1]:
        return np.linalg.solve(H.T, J), ridge
    c = moments.Ekh - moments.kappa * moments.h_mean
    # c'B with B = V^-1 - V^-1 H A^-1 H' V^-1
    c_Vinv = cho_solve(factor, c)
    c_B = c_Vinv - (c_Vinv @ H) @ np.linalg.solve(A, Vinv_H.T)
    return c_B + theta_part, ridge


def _report(moments: LocalMoments, implicit: bool) -> SensitivityReport:
    Q, ridge = _loadings(moments, implicit)
    quadratic = float(Q @ moments.V @ Q)
    if implicit:
        s_hat = 2 * quadratic
    else:
        c = moments.Ekh - moments.kappa * moments.h_mean
        s_hat = 2 * moments.k_variance + 2 * quadratic - 4 * float(c @ Q)
    if s_hat < 0:
        logger.debug("clipping negative local sensitivity %.3g to 0", s_hat)
    return SensitivityReport(
        max(s_hat, 0.0),
        moments.H,
        moments.J,
        moments.V,
        Q,
        moments.kappa,
        implicit,
        ridge,
    )


def sensitivity_explicit(
    model: MomentModel,
    theta_hat: np.ndarray,
    engine: ExpectationEngine,
    P2: np.ndarray,
) -> SensitivityReport:
    """
    Local sensitivity of ``kappa = E[k(U, theta)]``:

        s = 2 E[(k - kappa)^2] + 2 Q V Q' - 4 E[h (k - kappa)]' Q

    with ``Q = E[(k - kappa) h']B + J A^-1 H'V^-1``, ``A = H'V^-1 H`` and
    ``B = V^-1 - V^-1 H A^-1 H'V^-1``; in just-identified models
    ``Q = J H^-1``.

    Parameters
    ----------
    model : MomentModel
        A model with ``d1 = d3 = 0`` and an explicit counterfactual.
    theta_hat : array-like
        The estimate under the reference distribution.
    engine : ExpectationEngine
        Expectations under the reference distribution.
    P2 : array-like
        Targeted equality moments.
    """

    if not model.is_explicit:
        raise ValueError(
            "The counterfactual depends on theta only; use "
            "sensitivity_implicit."
        )
    moments = local_moments(model, theta_hat, engine, P2)
    return _report(moments, implicit=False)


def sensitivity_implicit(
    model: MomentModel,
    theta_hat: np.ndarray,
    engine: ExpectationEngine,
    P2: np.ndarray,
    k_gradient: np.ndarray | None = None,
) -> SensitivityReport:
    """
    Local sensitivity of ``kappa = k(theta)``, ``s = 2 Q V Q'`` with
    ``Q = J (H'V^-1 H)^-1 H'V^-1``.

    ``k_gradient`` overrides ``J``; otherwise it comes from the model's
    gradient or central finite differences.
    """

    if model.is_explicit:
        raise ValueError(
            "The counterfactual depends on u; use sensitivity_explicit."
        )
    moments = local_moments(model, theta_hat, engine, P2)
    if k_gradient is not None:
        moments = moments._replace(
            J=np.asarray(k_gradient, dtype=float).ravel()
        )
    return _report(moments, implicit=True)


def influence_values(
    report: SensitivityReport,
    h: np.ndarray,
    k: np.ndarray | None = None,
) -> np.ndarray:
    """
    The influence function ``iota = (k - kappa) - Q h`` at sample rows.

    Parameters
    ----------
    report : SensitivityReport
        The sensitivity report supplying ``Q`` and ``kappa``.
    h : array-like
        Equality moment values ``(g2 - P2; g4)``, shape ``(n, d2 + d4)``.
    k : array-like, optional
        Counterfactual values, length ``n``; required unless the report is
        implicit.
    """

    h = np.atleast_2d(np.asarray(h, dtype=float))
    values = -h @ report.Q
    if report.implicit:
        return values
    if k is None:
        raise ValueError("k values are needed for an explicit counterfactual.")
    return np.asarray(k, dtype=float).ravel() - report.kappa_hat + values


def extrapolated_bounds(
    kappa_hat: float, s_hat: float, delta_grid: Sequence[float]
) -> list[tuple[float, float]]:
    """``kappa_hat -/+ sqrt(delta * s_hat)`` for each delta."""
    if s_hat < 0:
        raise ValueError(f"s_hat must be nonnegative, got {s_hat}.")
    bounds = []
    for delta in delta_grid:
        if delta < 0:
            raise ValueError(f"delta must be nonnegative, got {delta}.")
        half = math.sqrt(delta * s_hat)
        bounds.append((kappa_hat - half, kappa_hat + half))
    return bounds
