"""
A two-firm complete-information entry game with a standard normal reference
distribution for the firms' unobserved profit shocks.

Firm ``j`` earns ``beta_j + z + U_j`` as a monopolist and
``beta_j + z - Delta + U_j`` in a duopoly, with ``Delta > 0`` and a
regressor ``z`` in ``{0, 1, 2}``. Outcomes are pure-strategy Nash
equilibria; when both monopolies are equilibria, the selection is left
unrestricted, which turns the monopoly frequencies into moment
inequalities. The counterfactual is the probability of a monopoly once a
tax ``tau`` is levied on monopoly profits.

Moment rows, with ``theta = (beta_1, beta_2, Delta)``:

- ``g1``: ``-1{(1,0) is an equilibrium}``, ``-1{(0,1) is an equilibrium}``
  for each ``z``, against the negated observed monopoly frequencies,
- ``g2``: ``-1{no entry}``, ``-1{duopoly}`` for each ``z``, against the
  negated observed frequencies,
- ``g4``: ``U`` itself (location normalisation).
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.optimize import least_squares
from scipy.special import ndtr

from .errors import EstimationError, UnsupportedError
from .expectation import ClosedFormEngine
from .gaussian import AffineBox, box_first_moment, box_probability, intersect
from .model import (
    CellStructure,
    Explicit,
    LocalMoments,
    MomentModel,
    ReducedForm,
    Target,
    register_model,
)

logger = logging.getLogger(__name__)

Z_SUPPORT = (0, 1, 2)
OUTCOMES = ("00", "11", "10", "01")

# conditional outcome frequencies, rows z = 0, 1, 2, columns as OUTCOMES
OUTCOME_FREQUENCIES = np.array(
    [
        [0.619, 0.003, 0.226, 0.152],
        [0.175, 0.075, 0.450, 0.300],
        [0.013, 0.427, 0.335, 0.225],
    ]
)

THETA_NAMES = ("beta_1", "beta_2", "Delta")
_SLACK_TOL = 1e-6


@dataclass(frozen=True)
class GameConfig:
    """
    Parameters
    ----------
    tau : float
        The tax on monopoly profits, positive.
    z_focus : int
        The regressor value at which the counterfactual is evaluated.
    table : numpy.ndarray
        Observed outcome frequencies, one row per ``z`` with columns
        ``00, 11, 10, 01``.
    theta_lower, theta_upper : tuple of float
        The parameter box.
    """

    tau: float = 1.5
    z_focus: int = 1
    table: np.ndarray = dataclasses.field(
        default_factory=lambda: OUTCOME_FREQUENCIES
    )
    theta_lower: tuple[float, float, float] = (-3.0, -3.0, 1e-3)
    theta_upper: tuple[float, float, float] = (3.0, 3.0, 3.0)

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        object.__setattr__(self, "table", table)
        if table.shape != (len(Z_SUPPORT), len(OUTCOMES)):
            raise ValueError(
                f"table must be {len(Z_SUPPORT)} x {len(OUTCOMES)}, "
                f"got {table.shape}."
            )
        if np.any(table < 0) or np.any(np.abs(table.sum(axis=1) - 1) > 1e-9):
            raise ValueError(
                "Each row of the outcome table must be a probability vector."
            )
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}.")
        if self.z_focus not in Z_SUPPORT:
            raise ValueError(
                f"z_focus must be one of {Z_SUPPORT}, got {self.z_focus}."
            )
        if self.theta_lower[2] <= 0:
            raise ValueError("The lower bound on Delta must be positive.")


def reduced_form(table: np.ndarray = OUTCOME_FREQUENCIES) -> ReducedForm:
    """Negated monopoly (``P1``) and no-entry/duopoly (``P2``) frequencies."""
    table = np.asarray(table, dtype=float)
    P1 = -table[:, [2, 3]].ravel()
    P2 = -table[:, [0, 1]].ravel()
    return ReducedForm(P1, P2)


def _check_theta(theta) -> tuple[float, float, float]:
    beta_1, beta_2, Delta = np.asarray(theta, dtype=float)
    if not Delta > 0:
        raise ValueError(f"Delta must be positive, got {Delta}.")
    return beta_1, beta_2, Delta


def _game_moments(u: np.ndarray, theta: np.ndarray, config: GameConfig):
    beta_1, beta_2, Delta = _check_theta(theta)
    u1, u2 = u[:, 0], u[:, 1]
    g1, g2 = [], []
    for z in Z_SUPPORT:
        t1, t2 = -beta_1 - z, -beta_2 - z
        g1.append((u1 >= t1) & (u2 <= Delta + t2))
        g1.append((u1 <= Delta + t1) & (u2 >= t2))
        g2.append((u1 <= t1) & (u2 <= t2))
        g2.append((u1 >= Delta + t1) & (u2 >= Delta + t2))
    indicators = -np.column_stack(g1 + g2).astype(float)
    return np.column_stack([indicators, u1, u2])


def _monopoly_under_tax(u: np.ndarray, theta: np.ndarray, config: GameConfig):
    beta_1, beta_2, Delta = _check_theta(theta)
    z, tau = config.z_focus, config.tau
    t1, t2 = -beta_1 - z, -beta_2 - z
    u1, u2 = u[:, 0], u[:, 1]
    nobody = (u1 <= tau + t1) & (u2 <= tau + t2)
    duopoly = (u1 >= Delta + t1) & (u2 >= Delta + t2)
    return 1.0 - (nobody | duopoly).astype(float)


def _cell_edges(config: GameConfig):
    def edges(theta):
        beta_1, beta_2, Delta = _check_theta(theta)
        shifts = np.array([0.0, config.tau, Delta])
        return [
            np.concatenate([shifts - beta - z for z in Z_SUPPORT])
            for beta in (beta_1, beta_2)
        ]

    return edges


def build_game_model(
    config: GameConfig | None = None, theta_hat: np.ndarray | None = None
) -> MomentModel:
    """
    The entry game as a :class:`~robust_counterfactuals.model.MomentModel`
    with ``dims = (6, 6, 0, 2)`` and a cell structure, so that KL duals can
    be evaluated exactly by the
    :class:`~robust_counterfactuals.expectation.ClosedFormEngine`.
    """

    config = config or GameConfig()
    linear = np.zeros((14, 2))
    linear[12:, :] = np.eye(2)
    P = reduced_form(config.table)
    model = MomentModel(
        dims=(6, 6, 0, 2),
        g_eval=_game_moments,
        k=Explicit(_monopoly_under_tax),
        theta_lower=config.theta_lower,
        theta_upper=config.theta_upper,
        u_dim=2,
        gamma=config,
        theta_names=THETA_NAMES,
        u_distribution="gaussian",
        theta_hat=theta_hat,
        cells=CellStructure(_cell_edges(config), linear),
        jacobian=lambda theta, P2: _jacobian(theta, config),
        local_moments=lambda theta, P2, engine: game_local_matrices(
            theta, ReducedForm(P.P1, P2), config
        ),
    )
    return model


def game_closed_form_log_mgf(
    model: MomentModel,
    theta: np.ndarray,
    lam: np.ndarray,
    eta: float,
    include_k: bool = True,
) -> float:
    """
    ``eta log E[exp((k + lam'g) / eta)]`` under ``N(0, I)``, exactly, by
    summing truncated-normal moment generating functions over the cells cut
    by the game's thresholds.
    """

    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}.")
    snapshot = ClosedFormEngine().snapshot(model, theta)
    summary = snapshot.tilt(lam, eta, 1.0 if include_k else 0.0)
    return eta * summary.log_mgf


# regions of the game at one z, as affine boxes in theta


def _coef(j: int, with_delta: bool) -> np.ndarray:
    row = np.zeros(3)
    row[j] = -1.0
    if with_delta:
        row[2] = 1.0
    return row


def _box(lows, highs) -> AffineBox:
    """Boxes from per-axis ``(const, coef)`` pairs, ``None`` for open."""

    def side(specs, fill):
        const = np.array([fill if s is None else s[0] for s in specs])
        coef = np.array([np.zeros(3) if s is None else s[1] for s in specs])
        return const, coef

    low_const, low_coef = side(lows, -np.inf)
    high_const, high_coef = side(highs, np.inf)
    return AffineBox(low_const, low_coef, high_const, high_coef)


def _regions(z: int, tau: float | None = None) -> dict[str, AffineBox]:
    monopoly = [(-z, _coef(j, False)) for j in (0, 1)]
    duopoly = [(-z, _coef(j, True)) for j in (0, 1)]
    regions = {
        "none": _box([None, None], monopoly),
        "duopoly": _box(duopoly, [None, None]),
        "first": _box([monopoly[0], None], [None, duopoly[1]]),
        "second": _box([None, monopoly[1]], [duopoly[0], None]),
        "multiple": _box(monopoly, duopoly),
    }
    if tau is not None:
        taxed = [(tau - z, _coef(j, False)) for j in (0, 1)]
        regions["taxed_none"] = _box([None, None], taxed)
    return regions


def implied_outcome_probabilities(
    theta: np.ndarray, selection: float = 0.5
) -> np.ndarray:
    """
    Outcome probabilities under ``N(0, I)``, rows ``z`` and columns
    ``00, 11, 10, 01``, with firm 1's monopoly selected with probability
    ``selection`` where both monopolies are equilibria.
    """

    if not 0 <= selection <= 1:
        raise ValueError(f"selection must lie in [0, 1], got {selection}.")
    theta = np.asarray(theta, dtype=float)
    _check_theta(theta)
    rows = []
    for z in Z_SUPPORT:
        r = _regions(z)
        both = r["multiple"].probability(theta)
        rows.append(
            [
                r["none"].probability(theta),
                r["duopoly"].probability(theta),
                r["first"].probability(theta) - (1 - selection) * both,
                r["second"].probability(theta) - selection * both,
            ]
        )
    return np.array(rows)


def monopoly_probability(
    theta: np.ndarray, config: GameConfig | None = None, tax: bool = True
) -> float:
    """
    Probability of a monopoly at ``config.z_focus`` under ``N(0, I)``, with
    or without the tax.
    """

    config = config or GameConfig()
    theta = np.asarray(theta, dtype=float)
    r = _regions(config.z_focus, config.tau)
    duopoly = r["duopoly"].probability(theta)
    if not tax:
        return 1.0 - r["none"].probability(theta) - duopoly
    nobody = r["taxed_none"]
    both = box_probability(
        *intersect(nobody.edges(theta), r["duopoly"].edges(theta))
    )
    return 1.0 - nobody.probability(theta) - duopoly + both


def _equality_residuals(theta, table):
    beta_1, beta_2, Delta = theta
    residuals = []
    for z in Z_SUPPORT:
        t1, t2 = -beta_1 - z, -beta_2 - z
        residuals.append(ndtr(t1) * ndtr(t2) - table[z, 0])
        residuals.append(ndtr(-Delta - t1) * ndtr(-Delta - t2) - table[z, 1])
    return np.array(residuals)


_GAME_STARTS = ((0.0, 0.0, 1.0), (-1.0, -1.0, 0.5), (-0.5, -1.0, 1.5))


def estimate_game_theta(
    P: ReducedForm | np.ndarray, config: GameConfig | None = None
) -> np.ndarray:
    """
    Match the model-implied no-entry and duopoly probabilities under
    ``N(0, I)`` to the observed ones by least squares.

    The equality rows cannot tell the firms apart, so the labels are
    oriented to give the larger ``beta`` to the firm with the larger
    observed monopoly frequency.

    Parameters
    ----------
    P : ReducedForm or array-like
        Either the negated frequencies or a ``3 x 4`` outcome table.
    """

    config = config or GameConfig()
    if isinstance(P, ReducedForm):
        table = np.column_stack(
            [
                -np.asarray(P.P2).reshape(3, 2),
                -np.asarray(P.P1).reshape(3, 2),
            ]
        )
    else:
        table = np.asarray(P, dtype=float)
    lower = np.asarray(config.theta_lower)
    upper = np.asarray(config.theta_upper)

    best = None
    for start in _GAME_STARTS:
        result = least_squares(
            _equality_residuals,
            np.clip(start, lower, upper),
            bounds=(lower, upper),
            args=(table,),
            xtol=1e-14,
            ftol=1e-14,
            gtol=1e-14,
        )
        if result.status > 0 and (best is None or result.cost < best.cost):
            best = result
    if best is None:
        raise EstimationError("Least squares failed from every start.")

    beta_1, beta_2, Delta = best.x
    if (table[:, 2].sum() > table[:, 3].sum()) != (beta_1 > beta_2):
        beta_1, beta_2 = beta_2, beta_1
    theta = np.array([beta_1, beta_2, Delta])
    logger.info(
        "estimated game parameters %s (cost %.3g)",
        np.round(theta, 4),
        best.cost,
    )
    return theta


def _check_slack(theta, P1, z_values=Z_SUPPORT):
    observed = -np.asarray(P1, dtype=float).reshape(3, 2)
    for z in z_values:
        r = _regions(z)
        for column, name in enumerate(("first", "second")):
            slack = r[name].probability(theta) - observed[z, column]
            if slack <= _SLACK_TOL:
                raise UnsupportedError(
                    f"The monopoly inequality for firm {column + 1} at z={z} "
                    f"binds (slack {slack:.3g}); the local formulas need "
                    "every inequality slack."
                )


def _counterfactual_regions(config: GameConfig):
    r = _regions(config.z_focus, config.tau)
    return r["taxed_none"], r["duopoly"]


def _jacobian(theta: np.ndarray, config: GameConfig):
    theta = np.asarray(theta, dtype=float)
    _check_theta(theta)
    rows = []
    for z in Z_SUPPORT:
        r = _regions(z)
        rows.append(-r["none"].gradient(theta))
        rows.append(-r["duopoly"].gradient(theta))
    H = np.vstack(rows + [np.zeros(3), np.zeros(3)])

    nobody, duopoly = _counterfactual_regions(config)
    lows, highs = intersect(nobody.edges(theta), duopoly.edges(theta))
    J = -nobody.gradient(theta) - duopoly.gradient(theta)
    if np.all(highs > lows):
        # both edges of the overlap are affine, so it is an AffineBox itself
        overlap = AffineBox(
            duopoly.low_const,
            duopoly.low_coef,
            nobody.high_const,
            nobody.high_coef,
        )
        J = J + overlap.gradient(theta)
    return H, J


def game_local_matrices(
    theta: np.ndarray, P: ReducedForm, config: GameConfig | None = None
) -> LocalMoments:
    """
    Closed-form ``H``, ``J``, ``V`` and ``E[k h]`` for the equality rows
    ``h = (g2 - P2; U)`` at ``theta``.

    Raises
    ------
    UnsupportedError
        If a monopoly inequality binds at ``(theta, P)``.
    """

    config = config or GameConfig()
    theta = np.asarray(theta, dtype=float)
    _check_theta(theta)
    _check_slack(theta, P.P1)
    H, J = _jacobian(theta, config)

    observed = -np.asarray(P.P2, dtype=float)
    regions = []
    for z in Z_SUPPORT:
        r = _regions(z)
        regions += [r["none"], r["duopoly"]]
    nobody, duopoly = _counterfactual_regions(config)

    def k_mass(edges):
        """E[k 1_R] for a numeric box R."""
        return (
            box_probability(*edges)
            - box_probability(*intersect(edges, nobody.edges(theta)))
            - box_probability(*intersect(edges, duopoly.edges(theta)))
            + box_probability(
                *intersect(
                    edges, nobody.edges(theta), duopoly.edges(theta)
                )
            )
        )

    whole = (np.full(2, -np.inf), np.full(2, np.inf))
    kappa = k_mass(whole)
    edges = [region.edges(theta) for region in regions]
    probabilities = np.array([box_probability(*e) for e in edges])

    n = len(regions)
    V = np.zeros((n + 2, n + 2))
    for i in range(n):
        for j in range(i, n):
            joint = box_probability(*intersect(edges[i], edges[j]))
            V[i, j] = V[j, i] = (
                joint
                - observed[j] * probabilities[i]
                - observed[i] * probabilities[j]
                + observed[i] * observed[j]
            )
        first = regions[i].first_moment(theta)
        V[i, n:] = V[n:, i] = -first
    V[n:, n:] = np.eye(2)

    Ekh = np.zeros(n + 2)
    for i in range(n):
        Ekh[i] = -k_mass(edges[i]) + observed[i] * kappa
    overlap = intersect(nobody.edges(theta), duopoly.edges(theta))
    Ekh[n:] = (
        -nobody.first_moment(theta)
        - duopoly.first_moment(theta)
        + box_first_moment(*overlap)
    )

    h_mean = np.concatenate([observed - probabilities, np.zeros(2)])
    return LocalMoments(H, J, V, Ekh, kappa, kappa * (1 - kappa), h_mean)


def _section_config(section: dict[str, Any]) -> GameConfig:
    kwargs = {}
    for key in ("tau", "z_focus", "table", "theta_lower", "theta_upper"):
        if key in section and section[key] is not None:
            value = section[key]
            if key in ("theta_lower", "theta_upper"):
                value = tuple(float(v) for v in value)
            kwargs[key] = value
    return GameConfig(**kwargs)


@register_model("entry-game")
def entry_game_targets(section: dict[str, Any]) -> list[Target]:
    """The monopoly probability under a tax, at the estimated parameters."""

    config = _section_config(section)
    P = reduced_form(config.table)
    theta_hat = estimate_game_theta(P, config)
    model = build_game_model(config, theta_hat)
    return [
        Target(
            "monopoly",
            model,
            P,
            monopoly_probability(theta_hat, config),
            monopoly_probability(theta_hat, config, tax=False),
        )
    ]
