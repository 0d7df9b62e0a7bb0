"""
Bounds on the counterfactual over neighbourhoods of the reference
distribution: the sample criterion functions in theta, their optimisation
over the parameter box, and sweeps over the neighbourhood size.
"""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any, NamedTuple, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .callbacks import Callback, time_block
from .divergences import DivergenceLike, as_divergence
from .duality import (
    DualSolveResult,
    SolverSettings,
    Status,
    delta_star,
    knife_edge_value,
    lower_dual,
    upper_dual,
)
from .expectation import ExpectationEngine
from .model import MomentModel, Multipliers, ReducedForm

logger = logging.getLogger(__name__)

_INFEASIBLE_PENALTY = 1e6


class Case(str, Enum):
    """Which of the three criterion cases applies at a theta."""

    STRICT = "strict"
    KNIFE_EDGE = "knife-edge"
    INFEASIBLE = "infeasible"

    def __str__(self):
        return self.value


class CriterionValue(NamedTuple):
    """
    A sample criterion function evaluated at one theta.

    Parameters
    ----------
    value : float
        The criterion; ``+inf`` (lower) or ``-inf`` (upper) when theta is
        infeasible for the neighbourhood.
    case : Case
        The criterion case.
    inner : DualSolveResult
        The counterfactual dual behind ``value`` in the strict case, else
        the minimal-divergence solve.
    feasibility : DualSolveResult
        The minimal-divergence solve, ``delta*(theta)``.
    """

    value: float
    case: Case
    inner: DualSolveResult
    feasibility: DualSolveResult


def _criterion(
    sign: str,
    model: MomentModel,
    theta: np.ndarray,
    engine: ExpectationEngine,
    kind: DivergenceLike,
    P: ReducedForm | np.ndarray,
    delta: float,
    settings: SolverSettings | None = None,
    warm: Multipliers | None = None,
) -> CriterionValue:
    settings = settings or SolverSettings()
    infeasible_value = math.inf if sign == "lower" else -math.inf
    feasibility = delta_star(model, theta, engine, kind, P, settings)
    gap = feasibility.value - delta

    if gap > settings.knife_tol or not np.isfinite(feasibility.value):
        return CriterionValue(
            infeasible_value, Case.INFEASIBLE, feasibility, feasibility
        )
    case = Case.STRICT if gap < -settings.knife_tol else Case.KNIFE_EDGE

    if not model.is_explicit:
        return CriterionValue(
            model.k_implicit(theta), case, feasibility, feasibility
        )
    if case == Case.KNIFE_EDGE:
        value = knife_edge_value(kind, feasibility, model, theta, engine)
        return CriterionValue(value, case, feasibility, feasibility)

    solve = lower_dual if sign == "lower" else upper_dual
    inner = solve(model, theta, engine, kind, P, delta, settings, warm)
    return CriterionValue(inner.value, case, inner, feasibility)


def criterion_lower(
    model: MomentModel,
    theta: np.ndarray,
    engine: ExpectationEngine,
    kind: DivergenceLike,
    P: ReducedForm | np.ndarray,
    delta: float,
    settings: SolverSettings | None = None,
    warm: Multipliers | None = None,
) -> CriterionValue:
    """
    The sample lower criterion at ``theta``:

    - the lower dual when ``delta*(theta) < delta``,
    - ``E[m k]`` under the minimal-divergence distribution when
      ``delta*(theta) = delta`` (within ``settings.knife_tol``),
    - ``+inf`` otherwise.

    For an implicit counterfactual the value is ``k(theta)`` whenever theta
    is feasible.
    """

    return _criterion(
        "lower", model, theta, engine, kind, P, delta, settings, warm
    )


def criterion_upper(
    model: MomentModel,
    theta: np.ndarray,
    engine: ExpectationEngine,
    kind: DivergenceLike,
    P: ReducedForm | np.ndarray,
    delta: float,
    settings: SolverSettings | None = None,
    warm: Multipliers | None = None,
) -> CriterionValue:
    """The sample upper criterion; ``-inf`` when theta is infeasible.
    See :func:`criterion_lower`."""

    return _criterion(
        "upper", model, theta, engine, kind, P, delta, settings, warm
    )


@dataclass(frozen=True)
class SearchSettings:
    """
    Settings of the multistart search over the parameter box.

    Parameters
    ----------
    n_starts : int
        Size of the low-discrepancy start set.
    max_evals : int
        Criterion evaluations per local simplex search.
    seed : int
        Seed of the scrambled Sobol sequence.
    workers : int
        Threads evaluating starts and local searches concurrently.
    n_local : int
        Number of best feasible starts refined by local search.
    xatol, fatol : float
        Simplex termination tolerances.
    """

    n_starts: int = 16
    max_evals: int = 200
    seed: int = 0
    workers: int = 1
    n_local: int = 4
    xatol: float = 1e-6
    fatol: float = 1e-9

    def __post_init__(self):
        for name in ("n_starts", "max_evals", "workers", "n_local"):
            if getattr(self, name) < 1:
                raise ValueError(f"SearchSettings.{name} must be at least 1.")


class Extreme(NamedTuple):
    """
    The best value of one criterion found over the parameter box.

    Parameters
    ----------
    value : float
        The bound; ``+inf`` (lower) or ``-inf`` (upper) when no feasible
        theta was found.
    theta : numpy.ndarray or None
        The arg-theta, ``None`` when infeasible.
    case : Case
        The criterion case at ``theta``.
    status : Status
        Status of the inner solve at ``theta``.
    iterations : int
        Iterations of the inner solve at ``theta``.
    multipliers : Multipliers or None
        Multipliers of the inner solve at ``theta``.
    n_local_optima : int
        Number of distinct local optima reached by the local searches.
    evaluations : int
        Criterion evaluations spent.
    """

    value: float
    theta: np.ndarray | None
    case: Case
    status: Status
    iterations: int
    multipliers: Multipliers | None
    n_local_optima: int
    evaluations: int

    @property
    def feasible(self) -> bool:
        return self.case != Case.INFEASIBLE


class ExtremeCounterfactuals(NamedTuple):
    """The smallest and largest counterfactual over a neighbourhood."""

    lower: Extreme
    upper: Extreme

    @property
    def width(self) -> float:
        return self.upper.value - self.lower.value


class _Tracker:
    """Records the best theta seen by any criterion evaluation."""

    def __init__(self):
        self.lock = threading.Lock()
        self.best_score = math.inf
        self.best_theta: np.ndarray | None = None
        self.evaluations = 0

    def offer(self, score: float, theta: np.ndarray, feasible: bool):
        with self.lock:
            self.evaluations += 1
            if feasible and score < self.best_score:
                self.best_score = score
                self.best_theta = theta.copy()


class _Search:
    def __init__(
        self,
        sign: str,
        model: MomentModel,
        engine: ExpectationEngine,
        kind: DivergenceLike,
        P: ReducedForm | np.ndarray,
        delta: float,
        search: SearchSettings,
        solver: SolverSettings,
        warm: Multipliers | None,
    ):
        self.sign = sign
        self.criterion = criterion_lower if sign == "lower" else criterion_upper
        self.orient = 1.0 if sign == "lower" else -1.0
        self.model = model
        self.engine = engine
        self.kind = kind
        self.P = P
        self.delta = delta
        self.search = search
        self.solver = solver
        self.warm = warm
        self.free = model.theta_upper > model.theta_lower
        self.tracker = _Tracker()

    def theta(self, z: np.ndarray) -> np.ndarray:
        theta = self.model.theta_lower.copy()
        theta[self.free] = z
        return np.clip(theta, self.model.theta_lower, self.model.theta_upper)

    def evaluate(self, theta: np.ndarray) -> CriterionValue:
        return self.criterion(
            self.model,
            theta,
            self.engine,
            self.kind,
            self.P,
            self.delta,
            self.solver,
            self.warm,
        )

    def score(self, theta: np.ndarray) -> tuple[float, bool]:
        cv = self.evaluate(theta)
        if cv.case == Case.INFEASIBLE:
            excess = cv.feasibility.value - self.delta
            excess = excess if np.isfinite(excess) else _INFEASIBLE_PENALTY
            score = _INFEASIBLE_PENALTY + excess
            feasible = False
        else:
            score = self.orient * cv.value
            feasible = bool(np.isfinite(score))
        self.tracker.offer(score, theta, feasible)
        return score, feasible

    def objective(self, z: np.ndarray) -> float:
        return self.score(self.theta(np.asarray(z, dtype=float)))[0]

    def starts(self, extra: Sequence[np.ndarray]) -> list[np.ndarray]:
        lower = self.model.theta_lower[self.free]
        upper = self.model.theta_upper[self.free]
        sampler = qmc.Sobol(
            d=int(self.free.sum()), scramble=True, seed=self.search.seed
        )
        sample = qmc.scale(sampler.random(self.search.n_starts), lower, upper)
        starts = []
        for theta in extra:
            if theta is not None and self.model.contains(theta):
                starts.append(np.asarray(theta, dtype=float)[self.free])
        return starts + list(sample)

    def map(self, function, items):
        if self.search.workers > 1:
            with ThreadPoolExecutor(max_workers=self.search.workers) as pool:
                return list(pool.map(function, items))
        return [function(item) for item in items]

    def local(self, z0: np.ndarray):
        bounds = list(
            zip(
                self.model.theta_lower[self.free],
                self.model.theta_upper[self.free],
            )
        )
        return minimize(
            self.objective,
            z0,
            method="Nelder-Mead",
            bounds=bounds,
            options={
                "maxfev": self.search.max_evals,
                "xatol": self.search.xatol,
                "fatol": self.search.fatol,
            },
        )

    def run(self, extra: Sequence[np.ndarray]) -> Extreme:
        infeasible_value = math.inf if self.sign == "lower" else -math.inf

        if not self.free.any():
            return self._finish(self.model.theta_lower.copy(), 1)

        starts = self.starts(extra)
        scores = self.map(lambda z: self.score(self.theta(z)), starts)
        feasible = [(s, z) for (s, ok), z in zip(scores, starts) if ok]
        if not feasible:
            logger.warning(
                "all %d %s starts are infeasible at delta=%g",
                len(starts),
                self.sign,
                self.delta,
            )
            return Extreme(
                infeasible_value,
                None,
                Case.INFEASIBLE,
                Status.INFEASIBLE,
                0,
                None,
                0,
                self.tracker.evaluations,
            )

        feasible.sort(key=lambda item: item[0])
        chosen = [z for _, z in feasible[: self.search.n_local]]
        results = self.map(self.local, chosen)
        optima = _count_distinct(
            [r.x for r in results if r.fun < _INFEASIBLE_PENALTY],
            self.model.theta_upper[self.free]
            - self.model.theta_lower[self.free],
        )
        return self._finish(self.tracker.best_theta, optima)

    def _finish(self, theta: np.ndarray, optima: int) -> Extreme:
        infeasible_value = math.inf if self.sign == "lower" else -math.inf
        cv = self.evaluate(theta)
        evaluations = self.tracker.evaluations + 1
        if cv.case == Case.INFEASIBLE:
            return Extreme(
                infeasible_value,
                None,
                Case.INFEASIBLE,
                Status.INFEASIBLE,
                cv.feasibility.iterations,
                None,
                0,
                evaluations,
            )
        return Extreme(
            float(cv.value),
            theta,
            cv.case,
            cv.inner.status,
            cv.inner.iterations,
            cv.inner.multipliers,
            optima,
            evaluations,
        )


def _count_distinct(points: list[np.ndarray], widths: np.ndarray) -> int:
    scale = np.where(widths > 0, widths, 1.0)
    distinct: list[np.ndarray] = []
    for p in points:
        if all(np.max(np.abs(p - q) / scale) > 1e-4 for q in distinct):
            distinct.append(p)
    return len(distinct)


def extreme_counterfactuals(
    model: MomentModel,
    engine: ExpectationEngine,
    kind: DivergenceLike,
    P: ReducedForm | np.ndarray,
    delta: float,
    search: SearchSettings | None = None,
    solver: SolverSettings | None = None,
    previous: ExtremeCounterfactuals | None = None,
) -> ExtremeCounterfactuals:
    """
    Minimise the lower criterion and maximise the upper criterion over the
    parameter box.

    Starts are a scrambled Sobol set over the free coordinates of the box,
    preceded by ``model.theta_hat`` and the arg-thetas of ``previous``;
    infeasible starts are discarded and the best ``search.n_local`` are
    refined by a bounded Nelder-Mead search. The reported bound is the
    criterion re-evaluated at the best theta seen.

    Parameters
    ----------
    model : MomentModel
        The model; its box must be bounded.
    engine : ExpectationEngine
        Expectations under the reference distribution.
    kind : Divergence or str
        The divergence defining the neighbourhood.
    P : ReducedForm or array-like
        Targeted moments.
    delta : float
        Neighbourhood radius.
    search : SearchSettings, optional
        Outer search settings.
    solver : SolverSettings, optional
        Inner solver settings.
    previous : ExtremeCounterfactuals, optional
        Bounds at a nearby delta, used for warm starts.
    """

    if not (
        np.all(np.isfinite(model.theta_lower))
        and np.all(np.isfinite(model.theta_upper))
    ):
        raise ValueError("The parameter box must be bounded.")
    search = search or SearchSettings()
    solver = solver or SolverSettings()
    kind = as_divergence(kind)

    extremes = {}
    for sign in ("lower", "upper"):
        last = getattr(previous, sign) if previous is not None else None
        warm = last.multipliers if last is not None else None
        extra = [model.theta_hat]
        if last is not None:
            extra.insert(0, last.theta)
        runner = _Search(
            sign, model, engine, kind, P, delta, search, solver, warm
        )
        with time_block(sign):
            extremes[sign] = runner.run(extra)
        logger.info(
            "%s bound at delta=%g: %.6g (%s, %d local optima, %d evaluations)",
            sign,
            delta,
            extremes[sign].value,
            extremes[sign].case,
            extremes[sign].n_local_optima,
            extremes[sign].evaluations,
        )
    return ExtremeCounterfactuals(extremes["lower"], extremes["upper"])


class BoundsRow(NamedTuple):
    """
    The bounds at one delta.

    ``envelope`` records that the row was widened to contain the previous
    row's bounds. ``metadata`` is filled by callbacks.
    """

    target: str
    delta: float
    kappa_lower: float
    kappa_upper: float
    theta_lower: np.ndarray | None
    theta_upper: np.ndarray | None
    case_lower: Case
    case_upper: Case
    status_lower: Status
    status_upper: Status
    iters_lower: int
    iters_upper: int
    envelope: bool
    metadata: dict[str, Any]

    def side(self, which: str) -> tuple:
        """``(kappa, theta, case, status, iters)`` of the ``which`` bound."""
        if which not in ("lower", "upper"):
            raise ValueError(f"which must be 'lower' or 'upper', got {which}.")
        return (
            getattr(self, f"kappa_{which}"),
            getattr(self, f"theta_{which}"),
            getattr(self, f"case_{which}"),
            getattr(self, f"status_{which}"),
            getattr(self, f"iters_{which}"),
        )

    def record(
        self,
        theta_dim: int | None = None,
        extrapolated: tuple[float, float] | None = None,
    ) -> dict[str, Any]:
        """One flat record, in output column order."""

        if theta_dim is None:
            present = [
                t for t in (self.theta_lower, self.theta_upper) if t is not None
            ]
            theta_dim = len(present[0]) if present else 0

        record: dict[str, Any] = {
            "target": self.target,
            "delta": self.delta,
            "kappa_lower": self.kappa_lower,
            "kappa_upper": self.kappa_upper,
        }
        for name, theta in (
            ("theta_lower", self.theta_lower),
            ("theta_upper", self.theta_upper),
        ):
            for i in range(theta_dim):
                record[f"{name}_{i + 1}"] = (
                    float(theta[i]) if theta is not None else math.nan
                )
        record["status_lower"] = f"{self.case_lower}/{self.status_lower}"
        record["status_upper"] = f"{self.case_upper}/{self.status_upper}"
        record["inner_iters_lower"] = self.iters_lower
        record["inner_iters_upper"] = self.iters_upper
        record["envelope"] = self.envelope
        if extrapolated is not None:
            record["extrap_lower"], record["extrap_upper"] = extrapolated
        return record


class BoundsCurve(NamedTuple):
    """Rows of bounds over an increasing grid of delta values."""

    rows: list[BoundsRow]
    theta_names: tuple[str, ...] = ()

    @property
    def deltas(self) -> np.ndarray:
        return np.array([row.delta for row in self.rows])

    @property
    def lower(self) -> np.ndarray:
        return np.array([row.kappa_lower for row in self.rows])

    @property
    def upper(self) -> np.ndarray:
        return np.array([row.kappa_upper for row in self.rows])

    def records(
        self, extrapolated: Sequence[tuple[float, float]] | None = None
    ) -> list[dict[str, Any]]:
        theta_dim = len(self.theta_names) or None
        if extrapolated is None:
            extrapolated = [None] * len(self.rows)
        return [
            row.record(theta_dim, extra)
            for row, extra in zip(self.rows, extrapolated)
        ]

    def to_dataframe(self, **kwargs) -> pd.DataFrame:
        """The :meth:`records` as a :class:`pandas.DataFrame`."""
        return pd.DataFrame.from_records(self.records(**kwargs))


def bounds_curve(
    model: MomentModel,
    engine: ExpectationEngine,
    kind: DivergenceLike,
    P: ReducedForm | np.ndarray,
    delta_grid: Sequence[float],
    search: SearchSettings | None = None,
    solver: SolverSettings | None = None,
    callbacks: Sequence[Callback] = (),
    target: str = "",
) -> BoundsCurve:
    """
    Bounds over an increasing grid of neighbourhood sizes.

    Each row is warm-started from the previous one. Since the bounds are
    nested in delta, a row whose interval fails to contain the previous
    row's is widened to it and flagged with ``envelope=True``.

    Example
    -------
    .. code-block:: python

        from robust_counterfactuals import Logging, bounds_curve

        curve = bounds_curve(
            model, engine, "kl", P, [0.01, 0.05, 0.1],
            callbacks=[Logging()],
        )
        curve.to_dataframe()
    """

    deltas = np.asarray(delta_grid, dtype=float)
    if deltas.size == 0:
        raise ValueError("delta_grid must not be empty.")
    if np.any(deltas <= 0) or np.any(np.diff(deltas) <= 0):
        raise ValueError("delta_grid must be positive and strictly increasing.")

    rows: list[BoundsRow] = []
    previous = None
    for delta in deltas:
        for callback in callbacks:
            callback.start(float(delta))
        extremes = extreme_counterfactuals(
            model, engine, kind, P, float(delta), search, solver, previous
        )
        low, high = extremes.lower, extremes.upper
        lower_side = (
            low.value,
            low.theta,
            low.case,
            low.status,
            low.iterations,
        )
        upper_side = (
            high.value,
            high.theta,
            high.case,
            high.status,
            high.iterations,
        )
        envelope = False
        if rows:
            last = rows[-1]
            # a widened side keeps the solve that attains the previous bound
            if low.value > last.kappa_lower + 1e-12:
                lower_side = last.side("lower")
                envelope = True
            if high.value < last.kappa_upper - 1e-12:
                upper_side = last.side("upper")
                envelope = True
            if envelope:
                logger.warning(
                    "bounds at delta=%g were narrower than at delta=%g; "
                    "widened to [%.6g, %.6g]",
                    delta,
                    last.delta,
                    lower_side[0],
                    upper_side[0],
                )
        row = BoundsRow(
            target,
            float(delta),
            float(lower_side[0]),
            float(upper_side[0]),
            lower_side[1],
            upper_side[1],
            lower_side[2],
            upper_side[2],
            lower_side[3],
            upper_side[3],
            lower_side[4],
            upper_side[4],
            envelope,
            {},
        )
        rows.append(row)
        for callback in callbacks:
            callback.end(row)
        if extremes.lower.feasible or extremes.upper.feasible:
            previous = extremes
    return BoundsCurve(rows, tuple(model.theta_names))


def unique_multiplier_variance(
    lower_lambda12: np.ndarray,
    upper_lambda12: np.ndarray,
    sigma: np.ndarray,
) -> np.ndarray:
    """
    Asymptotic covariance of the plug-in (upper, lower) bounds when the
    multipliers on the targeted moments are unique:
    ``A sigma A'`` with ``A = [upper_lambda12'; -lower_lambda12']``.

    Parameters
    ----------
    lower_lambda12, upper_lambda12 : array-like
        Multipliers ``(lambda1, lambda2)`` of the lower and upper bounds.
    sigma : array-like
        Asymptotic covariance of the estimated targeted moments.

    Returns
    -------
    numpy.ndarray
        ``2 x 2`` matrix, the upper bound first.
    """

    lower = np.asarray(lower_lambda12, dtype=float).ravel()
    upper = np.asarray(upper_lambda12, dtype=float).ravel()
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if lower.size != upper.size:
        raise ValueError(
            f"Multiplier vectors differ in length: {lower.size} and "
            f"{upper.size}."
        )
    if sigma.shape != (lower.size, lower.size):
        raise ValueError(
            f"sigma has shape {sigma.shape}, expected "
            f"{(lower.size, lower.size)}."
        )
    if not np.allclose(sigma, sigma.T):
        raise ValueError("sigma must be symmetric.")
    A = np.vstack([upper, -lower])
    covariance = A @ sigma @ A.T
    return 0.5 * (covariance + covariance.T)


def multinomial_sigma(cell_probs: np.ndarray, n_obs: int) -> np.ndarray:
    """Covariance ``(diag(p) - p p') / n`` of estimated cell frequencies."""
    p = np.asarray(cell_probs, dtype=float).ravel()
    if n_obs < 1:
        raise ValueError(f"n_obs must be positive, got {n_obs}.")
    if np.any(p < 0) or p.sum() > 1 + 1e-9:
        raise ValueError("cell_probs must be nonnegative and sum to at most 1.")
    return (np.diag(p) - np.outer(p, p)) / n_obs


def plugin_interval(
    lower: float,
    upper: float,
    covariance: np.ndarray,
    level: float = 0.95,
) -> tuple[float, float]:
    """
    Confidence interval for the bounds in the unique-multiplier case,
    ``[lower - z sd_lower, upper + z sd_upper]`` with ``z`` the ``level``
    quantile of the standard normal and ``covariance`` as returned by
    :func:`unique_multiplier_variance`.
    """

    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}.")
    covariance = np.asarray(covariance, dtype=float)
    if covariance.shape != (2, 2):
        raise ValueError("covariance must be 2 x 2, upper bound first.")
    z = norm.ppf(level)
    sd_upper, sd_lower = np.sqrt(np.maximum(np.diag(covariance), 0.0))
    return lower - z * sd_lower, upper + z * sd_upper
