"""
An infinite-horizon entry/exit model of a monopolist with logit
(type-I extreme value) reference shocks.

The state is ``x = (s, a_prev)`` with market state ``s`` in ``{H, M, L}``
and last period's action ``a_prev`` in ``{0, 1}``, indexed
``a_prev * 3 + s``. Each period the firm chooses ``a`` in ``{0, 1}`` and
earns ``pi(a, x) + U_a``:

- inactive (``a = 0``): nothing, or the scrap value when exiting,
- entering (``a = 1``, ``a_prev = 0``): minus the entry cost ``c_e``,
- staying (``a = 1``, ``a_prev = 1``): ``(x(s) - c_m)^2 / (4 c_d) - c_f``.

The structural parameter stacks the payoff parameters
``(c_d, c_e, c_f, c_m)`` with the ex-ante value functions before and after
an entry subsidy, so the value fixed points become equality moments in
``theta``. The counterfactual is the entry probability at a focus state
once the entry cost is reduced by the subsidy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit

from .errors import CapabilityError, ConvergenceError, EstimationError
from .expectation import EULER_GAMMA, ExpectationEngine, PointEngine
from .model import (
    Explicit,
    LocalMoments,
    MomentModel,
    ReducedForm,
    Target,
    register_model,
)

logger = logging.getLogger(__name__)

MARKET_STATES = ("H", "M", "L")
STATES = ("H0", "M0", "L0", "H1", "M1", "L1")
PAYOFF_NAMES = ("c_d", "c_e", "c_f", "c_m")

TRANSITIONS = np.array(
    [
        [0.40, 0.35, 0.25],
        [0.30, 0.40, 0.30],
        [0.20, 0.20, 0.60],
    ]
)
ESTIMATED_CCPS = np.array([0.9361, 0.8748, 0.7299, 0.9999, 0.8091, 0.0048])
COUNTERFACTUAL_CCPS = np.array(
    [0.9495, 0.9027, 0.8033, 0.9999, 0.6959, 0.0029]
)

_N_STATES = len(STATES)
_N_PAYOFF = len(PAYOFF_NAMES)


@dataclass(frozen=True)
class DdcConfig:
    """
    Parameters
    ----------
    beta : float
        Discount factor in ``[0, 1)``.
    scrap : float
        Scrap value received on exit.
    demand_intercepts : tuple of float
        ``x(s)`` in the high, medium and low market states.
    q : numpy.ndarray
        Market-state transition matrix, rows summing to one.
    subsidy : float
        Reduction of the entry cost in the counterfactual.
    ccps : numpy.ndarray
        Estimated probabilities of choosing ``a = 1`` in each state.
    box_fraction : float
        Half-width of the parameter box relative to the estimate.
    box_min_half_width : float
        Smallest half-width of the parameter box.
    """

    beta: float = 0.95
    scrap: float = 10.0
    demand_intercepts: tuple[float, float, float] = (20.0, 17.0, 12.0)
    q: np.ndarray = field(default_factory=lambda: TRANSITIONS.copy())
    subsidy: float = 0.9
    ccps: np.ndarray = field(default_factory=lambda: ESTIMATED_CCPS.copy())
    box_fraction: float = 0.25
    box_min_half_width: float = 0.5

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        ccps = np.asarray(self.ccps, dtype=float).ravel()
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "ccps", ccps)
        object.__setattr__(
            self,
            "demand_intercepts",
            tuple(float(x) for x in self.demand_intercepts),
        )
        if not 0 <= self.beta < 1:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}.")
        if q.shape != (3, 3) or np.any(q < 0):
            raise ValueError("q must be a nonnegative 3 x 3 matrix.")
        if np.any(np.abs(q.sum(axis=1) - 1) > 1e-9):
            raise ValueError("Rows of q must sum to 1.")
        if ccps.size != _N_STATES or np.any((ccps <= 0) | (ccps >= 1)):
            raise ValueError(
                f"ccps must be {_N_STATES} probabilities strictly inside "
                "(0, 1)."
            )
        if len(self.demand_intercepts) != 3:
            raise ValueError("demand_intercepts needs one value per state.")


class DdcTheta(NamedTuple):
    """
    Parameters
    ----------
    theta_pi : numpy.ndarray
        Payoff parameters ``(c_d, c_e, c_f, c_m)``: demand slope, entry cost,
        fixed cost and marginal cost.
    v : numpy.ndarray
        Ex-ante values before the intervention.
    v_tilde : numpy.ndarray
        Ex-ante values after the intervention.
    """

    theta_pi: np.ndarray
    v: np.ndarray
    v_tilde: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.theta_pi, self.v, self.v_tilde])

    @classmethod
    def from_stacked(cls, theta: np.ndarray) -> DdcTheta:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != _N_PAYOFF + 2 * _N_STATES:
            raise ValueError(
                f"Expected {_N_PAYOFF + 2 * _N_STATES} parameters, "
                f"got {theta.size}."
            )
        return cls(
            theta[:_N_PAYOFF],
            theta[_N_PAYOFF : _N_PAYOFF + _N_STATES],
            theta[_N_PAYOFF + _N_STATES :],
        )


def theta_names() -> tuple[str, ...]:
    return (
        PAYOFF_NAMES
        + tuple(f"v_{s}" for s in STATES)
        + tuple(f"v_tilde_{s}" for s in STATES)
    )


def transition_matrices(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    ``M_a[i, j]``: probability of moving from state ``i`` to state ``j``
    after choosing ``a``, so the next ``a_prev`` equals ``a``.
    """

    q = np.asarray(q, dtype=float)
    market = np.tile(np.arange(3), 2)
    previous = np.repeat([0, 1], 3)
    base = q[np.ix_(market, market)]
    return tuple(base * (previous[None, :] == a) for a in (0, 1))


def _check_payoff(theta_pi) -> np.ndarray:
    theta_pi = np.asarray(theta_pi, dtype=float).ravel()
    if theta_pi.size != _N_PAYOFF:
        raise ValueError(
            f"theta_pi needs {_N_PAYOFF} entries {PAYOFF_NAMES}, "
            f"got {theta_pi.size}."
        )
    if not theta_pi[0] > 0:
        raise ValueError(f"c_d must be positive, got {theta_pi[0]}.")
    return theta_pi


def _entry_cost(theta_pi, config: DdcConfig, which: str) -> float:
    if which not in ("pre", "post"):
        raise ValueError(f"which must be 'pre' or 'post', got {which!r}.")
    c_e = theta_pi[1]
    return c_e - config.subsidy if which == "post" else c_e


def payoffs(
    theta_pi: np.ndarray, config: DdcConfig, which: str = "pre"
) -> tuple[np.ndarray, np.ndarray]:
    """Flow payoffs ``(pi_0, pi_1)`` in each state."""
    c_d, _, c_f, c_m = _check_payoff(theta_pi)
    x = np.asarray(config.demand_intercepts)
    variable = (x - c_m) ** 2 / (4 * c_d) - c_f
    pi0 = np.concatenate([np.zeros(3), np.full(3, config.scrap)])
    pi1 = np.concatenate(
        [np.full(3, -_entry_cost(theta_pi, config, which)), variable]
    )
    return pi0, pi1


def payoff_gradient(theta_pi: np.ndarray, config: DdcConfig) -> np.ndarray:
    """``d pi_1 / d theta_pi'``, shape ``(6, 4)``; ``pi_0`` is constant."""
    c_d, _, _, c_m = _check_payoff(theta_pi)
    x = np.asarray(config.demand_intercepts)
    grad = np.zeros((_N_STATES, _N_PAYOFF))
    grad[:3, 1] = -1.0
    grad[3:, 0] = -((x - c_m) ** 2) / (4 * c_d**2)
    grad[3:, 2] = -1.0
    grad[3:, 3] = -(x - c_m) / (2 * c_d)
    return grad


def _choice_values(v, pi0, pi1, config):
    M0, M1 = transition_matrices(config.q)
    return pi0 + config.beta * M0 @ v, pi1 + config.beta * M1 @ v


def solve_logit_value(
    theta_pi: np.ndarray,
    config: DdcConfig,
    which: str = "pre",
    tol: float = 1e-12,
    max_iter: int = 100_000,
) -> np.ndarray:
    """
    The ex-ante value function under logit shocks, the fixed point of

        v = gamma_E + log(exp(pi_0 + beta M_0 v) + exp(pi_1 + beta M_1 v)),

    by successive approximation to sup-norm ``tol``. ``which="post"``
    uses the subsidised entry cost.
    """

    pi0, pi1 = payoffs(theta_pi, config, which)
    v = np.zeros(_N_STATES)
    for _ in range(max_iter):
        a0, a1 = _choice_values(v, pi0, pi1, config)
        updated = EULER_GAMMA + np.logaddexp(a0, a1)
        if np.max(np.abs(updated - v)) < tol:
            return updated
        v = updated
    raise ConvergenceError(
        f"Value iteration did not reach {tol:g} in {max_iter} iterations."
    )


def logit_ccps(
    theta_pi: np.ndarray,
    config: DdcConfig,
    which: str = "pre",
    v: np.ndarray | None = None,
) -> np.ndarray:
    """Probabilities of choosing ``a = 1`` in each state."""
    if v is None:
        v = solve_logit_value(theta_pi, config, which)
    pi0, pi1 = payoffs(theta_pi, config, which)
    a0, a1 = _choice_values(v, pi0, pi1, config)
    return expit(a1 - a0)


def counterfactual_ccps(
    theta: DdcTheta | np.ndarray, config: DdcConfig | None = None
) -> np.ndarray:
    """Entry and stay probabilities once the entry cost is subsidised."""
    config = config or DdcConfig()
    if isinstance(theta, DdcTheta):
        return logit_ccps(theta.theta_pi, config, "post", theta.v_tilde)
    return logit_ccps(theta, config, "post")


_DDC_STARTS = (
    (1.0, 5.0, 5.0, 10.0),
    (2.0, 10.0, 3.0, 12.0),
    (3.0, 8.0, 8.0, 8.0),
)


def estimate_ddc_theta(
    P2: np.ndarray | None = None,
    config: DdcConfig | None = None,
    starts: Sequence[Sequence[float]] = _DDC_STARTS,
) -> DdcTheta:
    """
    Invert estimated choice probabilities for the payoff parameters by
    least squares on the logit-implied probabilities, then solve for the
    value functions before and after the intervention.
    """

    config = config or DdcConfig()
    P2 = config.ccps if P2 is None else np.asarray(P2, dtype=float).ravel()
    lower = np.array([1e-3, -np.inf, -np.inf, -np.inf])

    def residuals(theta_pi):
        return logit_ccps(theta_pi, config) - P2

    best = None
    for start in starts:
        try:
            result = least_squares(
                residuals,
                np.asarray(start, dtype=float),
                bounds=(lower, np.inf),
                xtol=1e-15,
                ftol=1e-15,
                gtol=1e-15,
            )
        except (ConvergenceError, ValueError) as error:
            logger.debug("inversion from %s failed: %s", start, error)
            continue
        if result.status > 0 and (best is None or result.cost < best.cost):
            best = result
    if best is None:
        raise EstimationError("CCP inversion failed from every start.")

    theta_pi = best.x
    logger.info(
        "estimated payoff parameters %s (cost %.3g)",
        np.round(theta_pi, 4),
        best.cost,
    )
    return DdcTheta(
        theta_pi,
        solve_logit_value(theta_pi, config, "pre"),
        solve_logit_value(theta_pi, config, "post"),
    )


def _focus_index(focus: str | int) -> int:
    if isinstance(focus, str):
        label = focus if focus in STATES else f"{focus}0"
        if label not in STATES:
            raise ValueError(
                f"Unknown state {focus!r}. Available states are {STATES} "
                f"or the market states {MARKET_STATES} (entry)."
            )
        return STATES.index(label)
    if not 0 <= focus < _N_STATES:
        raise ValueError(f"focus must index one of {_N_STATES} states.")
    return int(focus)


class _DdcMoments:
    """``g = (choice indicators; value fixed points pre; post)``."""

    def __init__(self, config: DdcConfig):
        self.config = config

    def choice_values(self, theta: DdcTheta, which: str):
        pi0, pi1 = payoffs(theta.theta_pi, self.config, which)
        v = theta.v if which == "pre" else theta.v_tilde
        return _choice_values(v, pi0, pi1, self.config)

    def __call__(self, u, theta, gamma):
        theta = DdcTheta.from_stacked(theta)
        u0, u1 = u[:, [0]], u[:, [1]]
        a0, a1 = self.choice_values(theta, "pre")
        b0, b1 = self.choice_values(theta, "post")
        chosen = (a1 + u1 >= a0 + u0).astype(float)
        pre = np.maximum(a0 + u0, a1 + u1) - theta.v
        post = np.maximum(b0 + u0, b1 + u1) - theta.v_tilde
        return np.hstack([chosen, pre, post])


class _SubsidisedEntry:
    def __init__(self, moments: _DdcMoments, focus: int):
        self.moments = moments
        self.focus = focus

    def __call__(self, u, theta, gamma):
        theta = DdcTheta.from_stacked(theta)
        b0, b1 = self.moments.choice_values(theta, "post")
        i = self.focus
        return (b1[i] + u[:, 1] >= b0[i] + u[:, 0]).astype(float)


def ddc_jacobian(
    theta: np.ndarray, config: DdcConfig, focus: str | int
) -> tuple[np.ndarray, np.ndarray]:
    """
    Closed-form ``H = dE[h]/dtheta'`` (18 x 16) and ``J = dE[k]/dtheta'``
    under logit shocks, where choice rows have mean ``p`` and fixed-point
    rows have mean ``gamma_E + log(exp(A_0) + exp(A_1)) - v``.
    """

    config = config or DdcConfig()
    i = _focus_index(focus)
    theta = DdcTheta.from_stacked(theta)
    M0, M1 = transition_matrices(config.q)
    beta = config.beta
    dpi = payoff_gradient(theta.theta_pi, config)
    n, k = _N_STATES, _N_PAYOFF

    def probabilities(which, v):
        pi0, pi1 = payoffs(theta.theta_pi, config, which)
        a0, a1 = _choice_values(v, pi0, pi1, config)
        return expit(a1 - a0)

    p = probabilities("pre", theta.v)
    p_tilde = probabilities("post", theta.v_tilde)
    D = np.diag(p * (1 - p))
    D_tilde = np.diag(p_tilde * (1 - p_tilde))
    dM = beta * (M1 - M0)

    H = np.zeros((3 * n, k + 2 * n))
    H[:n, :k] = D @ dpi
    H[:n, k : k + n] = D @ dM
    H[n : 2 * n, :k] = p[:, None] * dpi
    H[n : 2 * n, k : k + n] = (
        beta * ((1 - p)[:, None] * M0 + p[:, None] * M1) - np.eye(n)
    )
    H[2 * n :, :k] = p_tilde[:, None] * dpi
    H[2 * n :, k + n :] = (
        beta * ((1 - p_tilde)[:, None] * M0 + p_tilde[:, None] * M1)
        - np.eye(n)
    )

    J = np.zeros(k + 2 * n)
    J[:k] = D_tilde[i, i] * dpi[i]
    J[k + n :] = D_tilde[i, i] * dM[i]
    return H, J


def build_ddc_model(
    config: DdcConfig | None = None,
    focus: str | int = "H",
    theta_hat: DdcTheta | None = None,
) -> MomentModel:
    """
    The entry/exit model with ``dims = (0, 6, 0, 12)``: six choice rows
    against the estimated probabilities and twelve value fixed-point rows,
    over a box around ``theta_hat`` (estimated when not given).
    """

    config = config or DdcConfig()
    index = _focus_index(focus)
    if theta_hat is None:
        theta_hat = estimate_ddc_theta(config.ccps, config)
    center = theta_hat.stacked()
    half = np.maximum(
        config.box_fraction * np.abs(center), config.box_min_half_width
    )
    lower, upper = center - half, center + half
    lower[0] = max(lower[0], 1e-3)

    moments = _DdcMoments(config)
    return MomentModel(
        dims=(0, _N_STATES, 0, 2 * _N_STATES),
        g_eval=moments,
        k=Explicit(_SubsidisedEntry(moments, index)),
        theta_lower=lower,
        theta_upper=upper,
        u_dim=2,
        gamma=config,
        theta_names=theta_names(),
        u_distribution="gumbel",
        theta_hat=center,
        jacobian=lambda theta, P2: ddc_jacobian(theta, config, index),
        local_moments=lambda theta, P2, engine: ddc_local_matrices(
            theta, config, index, engine, P2
        ),
    )


def ddc_local_matrices(
    theta: np.ndarray,
    config: DdcConfig | None = None,
    focus: str | int = "H",
    engine: ExpectationEngine | None = None,
    P2: np.ndarray | None = None,
) -> LocalMoments:
    """
    ``H`` and ``J`` from :func:`ddc_jacobian`, with ``V = E[h h']`` and
    ``E[k h]`` averaged over the support points of ``engine`` (typically a
    fixed set of Gumbel draws).

    Raises
    ------
    CapabilityError
        If ``engine`` has no support points to average over.
    """

    if not isinstance(engine, PointEngine):
        raise CapabilityError(
            "V and E[k h] of the entry/exit model need a Monte Carlo or "
            "grid engine."
        )
    config = config or DdcConfig()
    index = _focus_index(focus)
    theta = np.asarray(theta, dtype=float)
    P2 = config.ccps if P2 is None else np.asarray(P2, dtype=float).ravel()
    H, J = ddc_jacobian(theta, config, index)

    moments = _DdcMoments(config)
    u, w = engine.points, engine.weights
    h = moments(u, theta, config)
    h[:, :_N_STATES] -= P2
    k = _SubsidisedEntry(moments, index)(u, theta, config)
    kappa = float(w @ k)
    weighted = h * w[:, None]
    V = weighted.T @ h
    return LocalMoments(
        H,
        J,
        0.5 * (V + V.T),
        weighted.T @ k,
        kappa,
        float(w @ (k - kappa) ** 2),
        w @ h,
    )


def _section_config(section: dict[str, Any]) -> DdcConfig:
    kwargs = {}
    for key in ("beta", "scrap", "demand_intercepts", "q", "subsidy", "ccps"):
        if key in section and section[key] is not None:
            kwargs[key] = section[key]
    return DdcConfig(**kwargs)


@register_model("ddc-kss")
def ddc_targets(section: dict[str, Any]) -> list[Target]:
    """Subsidised entry probabilities at each focus market state."""

    config = _section_config(section)
    theta_hat = estimate_ddc_theta(config.ccps, config)
    pre = logit_ccps(theta_hat.theta_pi, config, "pre", theta_hat.v)
    post = counterfactual_ccps(theta_hat, config)
    P = ReducedForm(np.empty(0), config.ccps)
    targets = []
    for focus in section.get("focus_states", ("H", "M")):
        i = _focus_index(focus)
        model = build_ddc_model(config, i, theta_hat)
        targets.append(
            Target(
                f"entry_{STATES[i]}", model, P, float(post[i]), float(pre[i])
            )
        )
    return targets


__all__ = [
    "DdcConfig",
    "DdcTheta",
    "STATES",
    "ESTIMATED_CCPS",
    "COUNTERFACTUAL_CCPS",
    "transition_matrices",
    "payoffs",
    "solve_logit_value",
    "logit_ccps",
    "counterfactual_ccps",
    "estimate_ddc_theta",
    "ddc_jacobian",
    "build_ddc_model",
    "ddc_local_matrices",
]
