"""
The inner convex programs.

For a fixed theta, the smallest counterfactual over the neighbourhood
``N_delta`` is the value of the concave dual

    sup_{eta > 0, zeta, lam in Lambda}
        -E[(eta phi)*(-k - zeta - lam'g)] - eta delta - zeta - lam12'P

and the largest is the mirrored infimum. Both are solved here as the
maximisation of ``S(eta, zeta, lam)`` with the exponent

    a(u) = (k_coef k(u) - zeta - lam'g(u)) / eta,

where ``k_coef`` is ``-1`` for the lower bound, ``+1`` for the upper bound
(whose value is ``-S``) and ``0`` for the minimal divergence ``delta*``
(with ``eta = 1`` and ``delta = 0``). For KL the unit-mass multiplier
``zeta`` is profiled out and the objective is a log-moment-generating
function.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy.optimize import linprog, minimize

from .divergences import Divergence, DivergenceLike, as_divergence
from .errors import CapabilityError, UnsupportedError
from .expectation import (
    ClosedFormEngine,
    ExpectationEngine,
    GridEngine,
    PointEngine,
    PointSnapshot,
    Snapshot,
)
from .model import (
    MomentModel,
    Multipliers,
    ReducedForm,
    lambda12,
    stack_lambda,
)

logger = logging.getLogger(__name__)

_NON_FINITE_OBJECTIVE = 1e300


class Status(str, Enum):
    """Termination status of a dual solve."""

    CONVERGED = "converged"
    MAX_ITER = "max-iter"
    UNBOUNDED = "unbounded"
    INFEASIBLE = "infeasible"
    BOUNDARY = "boundary"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class SolverSettings:
    """
    Numerical settings of the dual solvers.

    Parameters
    ----------
    grad_tol : float
        Projected-gradient tolerance (max norm) for ``Converged``.
    max_iter : int
        Iteration cap per start.
    eta_floor : float
        Smallest ``eta`` explored; reaching it signals the ``delta = inf``
        boundary.
    knife_tol : float
        Width of the band around ``delta* = delta`` treated as the
        knife-edge case.
    multistart_count : int
        Number of starting points per solve.
    value_tol : float
        Relative objective-decrease tolerance of the quasi-Newton steps.
    value_cap : float
        Objective values beyond this are reported as unbounded.
    eta_cap : float
        Largest ``eta`` explored.
    """

    grad_tol: float = 1e-8
    max_iter: int = 500
    eta_floor: float = 1e-10
    knife_tol: float = 1e-9
    multistart_count: int = 3
    value_tol: float = 1e-12
    value_cap: float = 1e6
    eta_cap: float = 1e8

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"SolverSettings.{f.name} must be positive.")


class DualSolveResult(NamedTuple):
    """
    Outcome of one dual solve.

    Parameters
    ----------
    value : float
        Optimal value; ``+inf`` / ``-inf`` when unbounded.
    multipliers : Multipliers
        The maximising (or minimising) dual variables.
    grad_norm : float
        Max norm of the projected gradient at the returned point.
    iterations : int
        Quasi-Newton (or simplex) iterations of the winning start.
    status : Status
        Termination status.
    sign : str
        ``"lower"``, ``"upper"`` or ``"feasibility"``.
    """

    value: float
    multipliers: Multipliers
    grad_norm: float
    iterations: int
    status: Status
    sign: str = "lower"

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.value))

    def __repr__(self):
        return (
            f"DualSolveResult({self.sign}, value={self.value:.6g}, "
            f"status={self.status}, iterations={self.iterations})"
        )


_K_COEF = {"lower": -1.0, "upper": 1.0, "feasibility": 0.0}


class _DualProblem:
    """``S`` and its gradient in the packed variables ``[tau][zeta][lam]``,
    with ``eta = exp(tau)``."""

    def __init__(
        self,
        divergence: Divergence,
        snapshot: Snapshot,
        model: MomentModel,
        P: np.ndarray,
        delta: float,
        sign: str,
    ):
        self.divergence = divergence
        self.snapshot = snapshot
        self.dims = model.dims
        self.P = P
        self.delta = delta if sign != "feasibility" else 0.0
        self.k_coef = _K_COEF[sign]
        self.with_eta = sign != "feasibility"
        self.profiled = divergence.profiles_normalisation
        if not self.profiled and not isinstance(snapshot, PointSnapshot):
            raise CapabilityError(
                f"The {divergence.token} dual needs a Monte Carlo or grid "
                "engine; only KL duals are available in closed form."
            )
        self.offset = int(self.with_eta) + int(not self.profiled)

    def bounds(self, settings: SolverSettings) -> list:
        bounds = []
        if self.with_eta:
            bounds.append(
                (math.log(settings.eta_floor), math.log(settings.eta_cap))
            )
        if not self.profiled:
            bounds.append((None, None))
        for block, size in enumerate(self.dims):
            cone = (0.0, None) if block in (0, 2) else (None, None)
            bounds.extend([cone] * size)
        return bounds

    def pack(self, eta: float, zeta: float, lam: np.ndarray) -> np.ndarray:
        head = []
        if self.with_eta:
            head.append(math.log(eta))
        if not self.profiled:
            head.append(zeta)
        return np.concatenate([head, lam])

    def unpack(self, x: np.ndarray) -> tuple[float, float, np.ndarray]:
        eta = math.exp(x[0]) if self.with_eta else 1.0
        zeta = 0.0 if self.profiled else x[int(self.with_eta)]
        return eta, zeta, x[self.offset :]

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        eta, zeta, lam = self.unpack(np.asarray(x, dtype=float))
        if self.profiled:
            return self._profiled(eta, lam)
        return self._general(eta, zeta, lam)

    def _profiled(self, eta, lam):
        t = self.snapshot.tilt(-lam, eta, self.k_coef)
        mean_a = -lam @ t.mean_g
        if self.k_coef:
            mean_a += self.k_coef * t.mean_k
        mean_a /= eta
        value = -eta * t.log_mgf - eta * self.delta - lam @ self.P
        grad = [t.mean_g - self.P]
        if self.with_eta:
            grad.insert(0, [eta * (-t.log_mgf + mean_a - self.delta)])
        return value, np.concatenate(grad)

    def _general(self, eta, zeta, lam):
        snap = self.snapshot
        w = snap.weights
        a = snap.exponent(-lam, eta, self.k_coef) - zeta / eta
        conj = np.asarray(self.divergence.conjugate(a))
        m = np.asarray(self.divergence.conjugate_derivative(a))
        mean_conj = w @ conj
        value = -eta * mean_conj - eta * self.delta - zeta - lam @ self.P
        grad = [[w @ m - 1.0], (w * m) @ snap.G - self.P]
        if self.with_eta:
            grad.insert(0, [eta * (-mean_conj + w @ (m * a) - self.delta)])
        return value, np.concatenate(grad)

    def negated(self, x):
        value, grad = self(x)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return _NON_FINITE_OBJECTIVE, np.zeros_like(x)
        return -value, -grad

    def multipliers(self, x: np.ndarray) -> Multipliers:
        eta, zeta, lam = self.unpack(x)
        if self.profiled:
            t = self.snapshot.tilt(-lam, eta, self.k_coef)
            zeta = eta * t.log_mgf
        lam = lam.copy()
        d1, d2, d3, _ = self.dims
        lam[:d1] = np.maximum(lam[:d1], 0.0)
        lam[d1 + d2 : d1 + d2 + d3] = np.maximum(
            lam[d1 + d2 : d1 + d2 + d3], 0.0
        )
        return Multipliers.from_stacked(lam, self.dims, eta=eta, zeta=zeta)


def _projected_norm(x, grad, bounds) -> float:
    projected = np.array(grad, dtype=float)
    for i, (lo, hi) in enumerate(bounds):
        if lo is not None and x[i] <= lo + 1e-12:
            projected[i] = min(projected[i], 0.0)
        if hi is not None and x[i] >= hi - 1e-12:
            projected[i] = max(projected[i], 0.0)
    return float(np.max(np.abs(projected))) if projected.size else 0.0


def _initial_eta(snapshot: Snapshot, delta: float, settings) -> float:
    try:
        spread = snapshot.k_variance()
    except ValueError:
        spread = 0.0
    eta = math.sqrt(max(spread, 1e-6) / (2 * delta))
    return min(max(eta, 10 * settings.eta_floor), settings.eta_cap / 10)


def _starts(
    problem: _DualProblem,
    settings: SolverSettings,
    warm: Multipliers | None,
) -> list[np.ndarray]:
    snapshot = problem.snapshot
    k_coef = problem.k_coef
    eta0 = (
        _initial_eta(snapshot, problem.delta, settings)
        if problem.with_eta
        else 1.0
    )
    mean_k = snapshot.mean_k() if k_coef else 0.0

    starts = []
    if warm is not None and warm.dims == problem.dims:
        eta = warm.eta if warm.eta > settings.eta_floor else eta0
        starts.append(problem.pack(eta, warm.zeta, stack_lambda(warm)))

    if snapshot.supports_second_moments and sum(problem.dims):
        mean, cov, cross = snapshot.second_moments()
        rhs = k_coef * cross + eta0 * (mean - problem.P)
        lam = _project(
            np.linalg.lstsq(cov, rhs, rcond=None)[0], problem.dims
        )
        zeta = k_coef * mean_k - lam @ mean
        starts.append(problem.pack(eta0, zeta, lam))

    zero = np.zeros(sum(problem.dims))
    starts.append(problem.pack(eta0, k_coef * mean_k, zero))
    return starts[: settings.multistart_count]


def _project(lam: np.ndarray, dims) -> np.ndarray:
    lam = np.array(lam, dtype=float)
    d1, d2, d3, _ = dims
    lam[:d1] = np.maximum(lam[:d1], 0.0)
    lam[d1 + d2 : d1 + d2 + d3] = np.maximum(lam[d1 + d2 : d1 + d2 + d3], 0.0)
    return lam


def _solve(
    problem: _DualProblem,
    settings: SolverSettings,
    warm: Multipliers | None,
    sign: str,
) -> DualSolveResult:
    bounds = problem.bounds(settings)
    best = None
    for x0 in _starts(problem, settings, warm):
        result = minimize(
            problem.negated,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={
                "maxiter": settings.max_iter,
                "gtol": settings.grad_tol,
                "ftol": settings.value_tol,
                "maxcor": 20,
            },
        )
        value, grad = problem(result.x)
        if not np.isfinite(value):
            continue
        if best is None or value > best[0]:
            best = (value, result.x, grad, int(result.nit), result.success)

    if best is None:
        return DualSolveResult(
            _unbounded_value(sign),
            Multipliers.zeros(problem.dims),
            np.inf,
            0,
            Status.UNBOUNDED,
            sign,
        )

    value, x, grad, iterations, success = best
    grad_norm = _projected_norm(x, -grad, bounds)
    multipliers = problem.multipliers(x)

    if value > settings.value_cap:
        status = Status.UNBOUNDED
        value = math.inf
    elif problem.with_eta and x[0] <= math.log(settings.eta_floor) + 1e-9:
        status = Status.BOUNDARY
    elif grad_norm <= settings.grad_tol or (
        success and iterations < settings.max_iter
    ):
        status = Status.CONVERGED
    else:
        status = Status.MAX_ITER

    if sign == "upper":
        value = -value
    logger.debug(
        "%s dual: value=%.8g grad_norm=%.2e iterations=%d status=%s",
        sign,
        value,
        grad_norm,
        iterations,
        status,
    )
    return DualSolveResult(
        float(value), multipliers, grad_norm, iterations, status, sign
    )


def _unbounded_value(sign: str) -> float:
    return -math.inf if sign == "upper" else math.inf


def _prepare(model, theta, engine, P, sign):
    theta = np.asarray(theta, dtype=float)
    if not model.contains(theta):
        raise ValueError(f"theta {theta} lies outside the parameter box.")
    if isinstance(P, ReducedForm):
        model.check_reduced_form(P)
    if sign != "feasibility" and not model.is_explicit:
        raise ValueError(
            "Dual counterfactual programs need an explicit counterfactual; "
            "implicit ones are handled by the criterion functions."
        )
    return theta, model.pad(P), engine.snapshot(model, theta)


def delta_star(
    model: MomentModel,
    theta: np.ndarray,
    engine: ExpectationEngine,
    kind: DivergenceLike,
    P: ReducedForm | np.ndarray,
    settings: SolverSettings | None = None,
    warm: Multipliers | None = None,
) -> DualSolveResult:
    """
    The minimal divergence from the reference distribution of any
    distribution satisfying the moment conditions at ``theta``:

        sup_{zeta, lam in Lambda} -E[phi*(-zeta - lam'g)] - zeta - lam12'P

    (for KL, ``sup_lam -log E[exp(-lam'g)] - lam12'P``). An unbounded value
    means ``theta`` is infeasible for every neighbourhood.
    """

    settings = settings or SolverSettings()
    divergence = as_divergence(kind)
    theta, P_pad, snapshot = _prepare(model, theta, engine, P, "feasibility")
    problem = _DualProblem(
        divergence, snapshot, model, P_pad, 0.0, "feasibility"
    )
    return _solve(problem, settings, warm, "feasibility")


def _counterfactual_dual(
    sign, model, theta, engine, kind, P, delta, settings, warm
) -> DualSolveResult:
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}.")
    settings = settings or SolverSettings()
    divergence = as_divergence(kind)
    theta, P_pad, snapshot = _prepare(model, theta, engine, P, sign)
    problem = _DualProblem(divergence, snapshot, model, P_pad, delta, sign)
    result = _solve(problem, settings, warm, sign)
    if result.status == Status.BOUNDARY and isinstance(engine, GridEngine):
        logger.info(
            "%s dual reached eta floor at delta=%g; switching to the "
            "ess-inf/ess-sup program",
            sign,
            delta,
        )
        program = linf_lower if sign == "lower" else linf_upper
        return program(model, theta, engine, P)
    return result


def lower_dual(
    model: MomentModel,
    theta: np.ndarray,
    engine: ExpectationEngine,
    kind: DivergenceLike,
    P: ReducedForm | np.ndarray,
    delta: float,
    settings: SolverSettings | None = None,
    warm: Multipliers | None = None,
) -> DualSolveResult:
    """
    The smallest counterfactual over ``N_delta`` at ``theta`` (a lower bound
    on it by weak duality, equal to it when ``delta*(theta) < delta``).

    Parameters
    ----------
    model : MomentModel
        Model with an explicit counterfactual.
    theta : array-like
        Structural parameter inside the model box.
    engine : ExpectationEngine
        Expectations under the reference distribution.
    kind : Divergence or str
        The divergence defining the neighbourhood.
    P : ReducedForm or array-like
        Targeted moments.
    delta : float
        Neighbourhood radius, positive.
    settings : SolverSettings, optional
        Numerical settings.
    warm : Multipliers, optional
        Warm start, typically the solution at a nearby ``delta`` or theta.
    """

    return _counterfactual_dual(
        "lower", model, theta, engine, kind, P, delta, settings, warm
    )


def upper_dual(
    model: MomentModel,
    theta: np.ndarray,
    engine: ExpectationEngine,
    kind: DivergenceLike,
    P: ReducedForm | np.ndarray,
    delta: float,
    settings: SolverSettings | None = None,
    warm: Multipliers | None = None,
) -> DualSolveResult:
    """The largest counterfactual over ``N_delta``; see :func:`lower_dual`."""

    return _counterfactual_dual(
        "upper", model, theta, engine, kind, P, delta, settings, warm
    )


def dual_objective(
    model: MomentModel,
    theta: np.ndarray,
    engine: ExpectationEngine,
    kind: DivergenceLike,
    P: ReducedForm | np.ndarray,
    delta: float,
    sign: str,
):
    """
    The dual objective ``S`` as a function of packed variables
    ``x = [log eta][zeta][lam]`` (``log eta`` absent for ``"feasibility"``,
    ``zeta`` absent for KL), returning ``(value, gradient)``.

    For ``"upper"`` the returned value is ``-S``, whose infimum is the upper
    bound, and the gradient is negated accordingly.
    """

    divergence = as_divergence(kind)
    theta, P_pad, snapshot = _prepare(model, theta, engine, P, sign)
    problem = _DualProblem(divergence, snapshot, model, P_pad, delta, sign)

    def objective(x):
        value, grad = problem(np.asarray(x, dtype=float))
        if sign == "upper":
            return -value, -grad
        return value, grad

    objective.size = problem.offset + model.d
    objective.offset = problem.offset
    return objective


class DensityRatio:
    """
    The optimal density ratio ``m = dF/dF*`` implied by a dual solution,
    ``m(u) = phi*'((k_coef k(u) - zeta - lam'g(u)) / eta)``.
    """

    def __init__(
        self,
        divergence: Divergence,
        model: MomentModel,
        theta: np.ndarray,
        multipliers: Multipliers,
        k_coef: float,
    ):
        self.divergence = divergence
        self.model = model
        self.theta = np.asarray(theta, dtype=float)
        self.multipliers = multipliers
        self.k_coef = k_coef

    def exponent(self, u: np.ndarray) -> np.ndarray:
        m = self.multipliers
        a = -self.model.g(u, self.theta) @ stack_lambda(m) - m.zeta
        if self.k_coef:
            a = a + self.k_coef * self.model.k_values(u, self.theta)
        return a / m.eta

    def __call__(self, u: np.ndarray) -> np.ndarray:
        a = self.exponent(u)
        return np.asarray(self.divergence.conjugate_derivative(a))

    def __repr__(self):
        return f"DensityRatio({self.divergence.token}, {self.multipliers})"


def recover_density(
    kind: DivergenceLike,
    result: DualSolveResult,
    model: MomentModel,
    theta: np.ndarray,
    engine: ExpectationEngine | None = None,
    sign: str | None = None,
    settings: SolverSettings | None = None,
) -> DensityRatio:
    """
    The density ratio attaining a dual solution. For ``delta*`` it is the
    reweighting of minimal divergence; for the counterfactual duals it is
    the extremal distribution in the neighbourhood.

    ``engine`` is accepted for symmetry with the solvers; the density is
    fully determined by the multipliers.
    """

    settings = settings or SolverSettings()
    sign = sign or result.sign
    if sign not in _K_COEF:
        raise ValueError(
            f"sign must be one of {list(_K_COEF)}, got {sign!r}."
        )
    if result.status in (Status.UNBOUNDED, Status.INFEASIBLE):
        raise UnsupportedError(
            f"No density ratio exists for a {result.status} solve."
        )
    if sign != "feasibility" and (
        result.status == Status.BOUNDARY
        or result.multipliers.eta <= settings.eta_floor
    ):
        raise UnsupportedError(
            "eta is at its lower boundary; the extremal distribution is not "
            "identified from the ess-inf/ess-sup limit."
        )
    if result.status == Status.MAX_ITER:
        logger.warning(
            "recovering a density from a solve that stopped at the "
            "iteration cap (grad_norm=%.2e)",
            result.grad_norm,
        )
    return DensityRatio(
        as_divergence(kind), model, theta, result.multipliers, _K_COEF[sign]
    )


def knife_edge_value(
    kind: DivergenceLike,
    feasibility: DualSolveResult,
    model: MomentModel,
    theta: np.ndarray,
    engine: ExpectationEngine,
) -> float:
    """
    ``E[m k]`` under the minimal-divergence distribution, the unique member
    of the neighbourhood when ``delta*(theta) = delta``.
    """

    divergence = as_divergence(kind)
    density = recover_density(divergence, feasibility, model, theta)
    if isinstance(engine, ClosedFormEngine):
        if not divergence.profiles_normalisation:
            raise CapabilityError(
                "Closed-form knife-edge values are available for KL only."
            )
        lam = stack_lambda(feasibility.multipliers)
        return engine.snapshot(model, theta).tilt(-lam).mean_k
    return float(
        engine.expect(lambda u: density(u) * model.k_values(u, theta))
    )


def _linf(model, theta, engine, P, sign, include_k=True) -> DualSolveResult:
    if not isinstance(engine, GridEngine):
        raise CapabilityError(
            "The ess-inf/ess-sup programs need a grid engine as support."
        )
    theta = np.asarray(theta, dtype=float)
    if not model.contains(theta):
        raise ValueError(f"theta {theta} lies outside the parameter box.")
    P_pad = model.pad(P)
    snapshot = engine.snapshot(model, theta)
    support = snapshot.weights > 0
    G = snapshot.G[support]
    if include_k:
        K = snapshot.K[support]
    else:
        K = np.zeros(G.shape[0])

    d1, d2, d3, d4 = model.dims
    cone = (
        [(0, None)] * d1
        + [(None, None)] * d2
        + [(0, None)] * d3
        + [(None, None)] * d4
    )
    ones = np.ones((G.shape[0], 1))
    if sign == "lower":
        # max t - lam'P  s.t.  t - lam'g_i <= k_i
        c = np.concatenate([P_pad, [-1.0]])
        A = np.hstack([-G, ones])
        b = K
    else:
        # min t + lam'P  s.t.  k_i - lam'g_i <= t
        c = np.concatenate([P_pad, [1.0]])
        A = np.hstack([-G, -ones])
        b = -K
    result = linprog(
        c, A_ub=A, b_ub=b, bounds=cone + [(None, None)], method="highs"
    )

    if result.status == 3:
        value = _unbounded_value(sign)
        return DualSolveResult(
            value,
            Multipliers.zeros(model.dims),
            0.0,
            int(getattr(result, "nit", 0)),
            Status.UNBOUNDED,
            sign,
        )
    if result.status == 2:
        return DualSolveResult(
            _unbounded_value(sign),
            Multipliers.zeros(model.dims),
            0.0,
            int(getattr(result, "nit", 0)),
            Status.INFEASIBLE,
            sign,
        )
    lam, t = result.x[:-1], result.x[-1]
    value = -result.fun if sign == "lower" else result.fun
    status = Status.CONVERGED if result.status == 0 else Status.MAX_ITER
    multipliers = Multipliers.from_stacked(
        _project(lam, model.dims), model.dims, eta=0.0, zeta=float(t)
    )
    return DualSolveResult(
        float(value),
        multipliers,
        0.0,
        int(getattr(result, "nit", 0)),
        status,
        sign,
    )


def linf_lower(
    model: MomentModel,
    theta: np.ndarray,
    engine: GridEngine,
    P: ReducedForm | np.ndarray,
) -> DualSolveResult:
    """
    The sharp lower bound at ``theta`` over all distributions on the grid's
    support:

        max_{lam in Lambda, t} t - lam12'P  s.t.  t <= k(u_i) + lam'g(u_i).
    """

    return _linf(model, theta, engine, P, "lower")


def linf_upper(
    model: MomentModel,
    theta: np.ndarray,
    engine: GridEngine,
    P: ReducedForm | np.ndarray,
) -> DualSolveResult:
    """The sharp upper bound at ``theta``; see :func:`linf_lower`."""

    return _linf(model, theta, engine, P, "upper")


def linf_feasible(
    model: MomentModel,
    theta: np.ndarray,
    engine: GridEngine,
    P: ReducedForm | np.ndarray,
    tol: float = 1e-8,
) -> tuple[bool, DualSolveResult]:
    """
    Whether some distribution on the grid's support satisfies the moment
    conditions at ``theta`` (the ess-inf program with ``k = 0``, whose value
    is zero exactly when ``theta`` is feasible).
    """

    result = _linf(model, theta, engine, P, "lower", include_k=False)
    return bool(result.value <= tol), result


__all__ = [
    "Status",
    "SolverSettings",
    "DualSolveResult",
    "DensityRatio",
    "delta_star",
    "lower_dual",
    "upper_dual",
    "dual_objective",
    "recover_density",
    "knife_edge_value",
    "linf_lower",
    "linf_upper",
    "linf_feasible",
    "lambda12",
]
