"""
Expectations under the reference distribution.

Every expectation that enters a dual program goes through an
:class:`ExpectationEngine`. Point engines (Monte Carlo draws, weighted grids)
evaluate integrands at a fixed set of support points; the closed-form engine
integrates exponential tilts of cell-structured models under a standard
normal reference exactly.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from typing import Any, Callable, NamedTuple, Union

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .errors import CapabilityError, NumericalError
from .model import MomentModel

EULER_GAMMA = 0.5772156649015329
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class DrawSet(NamedTuple):
    """
    An immutable matrix of draws of the unobservables.

    Parameters
    ----------
    draws : numpy.ndarray
        Read-only array of shape ``(n, dim)``.
    distribution : str
        ``"gaussian"`` or ``"gumbel"``.
    seed : int
        The key of the counter-based generator that produced the draws.
    """

    draws: np.ndarray
    distribution: str
    seed: int

    @property
    def n(self) -> int:
        return self.draws.shape[0]

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    def __repr__(self):
        return f"DrawSet({self.distribution}, n={self.n}, seed={self.seed})"


def _generator(seed: int) -> np.random.Generator:
    # counter-based: the stream depends on the key alone
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array, dtype=float)
    array.setflags(write=False)
    return array


def make_gumbel_draws(n: int, dim: int, seed: int) -> DrawSet:
    """Standard type-I extreme value draws via ``-log(-log V)``."""
    if n < 1 or dim < 1:
        raise ValueError(f"n and dim must be positive, got {n} and {dim}.")
    v = _generator(seed).random((n, dim))
    tiny = np.finfo(float).tiny
    v = np.clip(v, tiny, 1 - np.finfo(float).eps)
    return DrawSet(_freeze(-np.log(-np.log(v))), "gumbel", int(seed))


def make_gaussian_draws(n: int, dim: int, seed: int) -> DrawSet:
    """Standard normal draws."""
    if n < 1 or dim < 1:
        raise ValueError(f"n and dim must be positive, got {n} and {dim}.")
    z = _generator(seed).standard_normal((n, dim))
    return DrawSet(_freeze(z), "gaussian", int(seed))


_DRAW_MAKERS: dict[str, Callable[[int, int, int], DrawSet]] = {
    "gaussian": make_gaussian_draws,
    "gumbel": make_gumbel_draws,
}


def make_draws(distribution: str, n: int, dim: int, seed: int) -> DrawSet:
    if distribution not in _DRAW_MAKERS:
        raise ValueError(
            f"Unknown distribution {distribution}. "
            f"Available distributions are: {list(_DRAW_MAKERS.keys())}."
        )
    return _DRAW_MAKERS[distribution](n, dim, seed)


class TiltSummary(NamedTuple):
    """
    Summary of the exponential tilt ``m(u) = exp(a(u)) / E[exp(a(U))]`` with
    ``a = (k_coef * k + lam'g) / eta``.

    Parameters
    ----------
    log_mgf : float
        ``log E[exp(a(U))]``.
    mean_g : numpy.ndarray
        ``E[m g]``.
    mean_k : float
        ``E[m k]``, or ``nan`` for implicit counterfactuals.
    """

    log_mgf: float
    mean_g: np.ndarray
    mean_k: float


class PointSnapshot:
    """Moment and counterfactual values of a model at a fixed theta on the
    support points of a point engine."""

    def __init__(
        self, weights: np.ndarray, G: np.ndarray, K: np.ndarray | None
    ):
        self.weights = weights
        self.G = G
        self.K = K
        self.supports_second_moments = True

    def exponent(self, lam, eta: float = 1.0, k_coef: float = 0.0):
        a = self.G @ np.asarray(lam, dtype=float)
        if k_coef:
            a = a + k_coef * self._k()
        return a / eta

    def _k(self) -> np.ndarray:
        if self.K is None:
            raise ValueError("The counterfactual does not depend on u.")
        return self.K

    def tilt(self, lam, eta: float = 1.0, k_coef: float = 0.0) -> TiltSummary:
        a = self.exponent(lam, eta, k_coef)
        positive = self.weights > 0
        w, a = self.weights[positive], a[positive]
        log_mgf = float(logsumexp(a, b=w))
        m_w = w * np.exp(a - log_mgf)
        mean_g = m_w @ self.G[positive]
        mean_k = float(m_w @ self.K[positive]) if self.K is not None else np.nan
        return TiltSummary(log_mgf, mean_g, mean_k)

    def mean_k(self) -> float:
        return float(self.weights @ self._k())

    def k_variance(self) -> float:
        k = self._k()
        return float(self.weights @ (k - self.weights @ k) ** 2)

    def second_moments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(E[g], Cov(g), Cov(g, k))`` (the last zero without k)."""
        w = self.weights
        mean = w @ self.G
        centred = self.G - mean
        cov = (centred * w[:, None]).T @ centred
        if self.K is None:
            cross = np.zeros(self.G.shape[1])
        else:
            cross = (centred * w[:, None]).T @ (self.K - w @ self.K)
        return mean, cov, cross


def _log_interval_mass(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``log(Phi(b) - Phi(a))`` for ``a <= b``, accurate in both tails."""
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = log_ndtr(hi)
    log_lo = log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = log_hi + np.log1p(-np.exp(log_lo - log_hi))
    return np.where(b > a, value, -np.inf)


def _log_pdf(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.where(np.isfinite(x), -0.5 * x**2 - _LOG_SQRT_2PI, -np.inf)


class CellSnapshot:
    """
    A cell-structured model at a fixed theta: within each cell the moment
    functions are ``cell_g + linear @ u`` and the counterfactual is constant.
    """

    supports_second_moments = False

    def __init__(self, lows, highs, cell_g, cell_k, linear):
        self.lows = lows
        self.highs = highs
        self.cell_g = cell_g
        self.cell_k = cell_k
        self.linear = linear

    def tilt(self, lam, eta: float = 1.0, k_coef: float = 0.0) -> TiltSummary:
        lam = np.asarray(lam, dtype=float)
        shift = self.linear.T @ lam / eta
        scores = self.cell_g @ lam / eta
        if k_coef:
            if self.cell_k is None:
                raise ValueError("The counterfactual does not depend on u.")
            scores = scores + k_coef * self.cell_k / eta

        a = self.lows - shift
        b = self.highs - shift
        log_mass = _log_interval_mass(a, b)
        log_terms = scores + log_mass.sum(axis=1)
        lse = float(logsumexp(log_terms))
        pi = np.exp(log_terms - lse)

        # mean of u within each cell under the shifted normal
        with np.errstate(invalid="ignore", over="ignore"):
            ratio = np.exp(_log_pdf(b) - log_mass) - np.exp(
                _log_pdf(a) - log_mass
            )
        ratio = np.where(np.isfinite(log_mass), ratio, 0.0)
        cell_means = shift - ratio
        mean_u = pi @ cell_means

        mean_g = pi @ self.cell_g + self.linear @ mean_u
        mean_k = float(pi @ self.cell_k) if self.cell_k is not None else np.nan
        return TiltSummary(0.5 * shift @ shift + lse, mean_g, mean_k)

    def mean_k(self) -> float:
        return self.tilt(np.zeros(self.cell_g.shape[1])).mean_k

    def k_variance(self) -> float:
        if self.cell_k is None:
            raise ValueError("The counterfactual does not depend on u.")
        zero = np.zeros(self.cell_g.shape[1])
        log_mass = _log_interval_mass(self.lows, self.highs).sum(axis=1)
        p = np.exp(log_mass)
        mean = self.tilt(zero).mean_k
        return float(p @ (self.cell_k - mean) ** 2)


Snapshot = Union[PointSnapshot, CellSnapshot]


class ExponentialTilt:
    """
    The integrand ``u -> exp((k_coef * k(u) + lam'g(u)) / eta)`` of a model
    at a fixed theta. The closed-form engine integrates it exactly; point
    engines treat it like any other callable.
    """

    def __init__(
        self,
        model: MomentModel,
        theta: np.ndarray,
        lam: np.ndarray,
        eta: float = 1.0,
        k_coef: float = 0.0,
    ):
        if eta <= 0:
            raise ValueError(f"eta must be positive, got {eta}.")
        self.model = model
        self.theta = np.asarray(theta, dtype=float)
        self.lam = np.asarray(lam, dtype=float)
        self.eta = float(eta)
        self.k_coef = float(k_coef)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        a = self.model.g(u, self.theta) @ self.lam
        if self.k_coef:
            a = a + self.k_coef * self.model.k_values(u, self.theta)
        return np.exp(a / self.eta)


Integrand = Union[Callable[[np.ndarray], np.ndarray], float]


class ExpectationEngine(ABC):
    """
    Abstract base class for expectation engines.

    Subclasses must override :meth:`expect` and :meth:`snapshot`. Engines are
    immutable after construction and safe to share between threads.
    """

    @abstractmethod
    def expect(self, f: Integrand) -> Any:
        """Return ``E[f(U)]``; ``f`` maps ``(n, dim)`` arrays to ``(n,)`` or
        ``(n, m)`` arrays, or is a constant."""

    @abstractmethod
    def snapshot(self, model: MomentModel, theta: np.ndarray) -> Snapshot:
        """Evaluate ``model`` at ``theta`` in the form the dual programs use."""


class PointEngine(ExpectationEngine):
    """
    Expectations as weighted sums over fixed support points.

    Parameters
    ----------
    points : numpy.ndarray
        Support points, shape ``(n, dim)``.
    weights : numpy.ndarray
        Nonnegative weights summing to one.
    """

    def __init__(self, points: np.ndarray, weights: np.ndarray):
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.size != points.shape[0]:
            raise ValueError(
                f"Got {points.shape[0]} points but {weights.size} weights."
            )
        if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1.")
        self.points = _freeze(points)
        self.weights = _freeze(weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def expect(self, f: Integrand):
        if not callable(f):
            return float(f)
        values = np.asarray(f(self.points), dtype=float)
        result = np.tensordot(self.weights, values, axes=(0, 0))
        return float(result) if np.ndim(result) == 0 else result

    def snapshot(self, model: MomentModel, theta: np.ndarray) -> PointSnapshot:
        G = model.g(self.points, theta)
        _check_finite(G)
        K = model.k_values(self.points, theta) if model.is_explicit else None
        if K is not None and not np.all(np.isfinite(K)):
            raise NumericalError("The counterfactual is not finite")
        return PointSnapshot(self.weights, G, K)


def _check_finite(G: np.ndarray) -> None:
    finite = np.isfinite(G).all(axis=0)
    if not finite.all():
        row = int(np.argmin(finite))
        raise NumericalError("Moment function returned non-finite values", row)


class MonteCarloEngine(PointEngine):
    """
    Sample averages over a :class:`DrawSet`. Re-using one engine for every
    evaluation within an analysis gives common random numbers.
    """

    def __init__(self, draws: DrawSet):
        n = draws.n
        super().__init__(draws.draws, np.full(n, 1.0 / n))
        self.draws = draws

    def __repr__(self):
        return f"MonteCarloEngine({self.draws!r})"

    def expect(self, f: Integrand):
        if not callable(f):
            return float(f)
        values = np.asarray(f(self.points), dtype=float)
        result = values.mean(axis=0)
        return float(result) if np.ndim(result) == 0 else result


class GridEngine(PointEngine):
    """Weighted sums over a deterministic grid; the grid also serves as the
    discrete support of the ess-inf/ess-sup programs."""

    def __repr__(self):
        return f"GridEngine(size={self.size}, dim={self.dim})"


class ClosedFormEngine(ExpectationEngine):
    """
    Exact integration of :class:`ExponentialTilt` integrands for models with
    a :class:`~robust_counterfactuals.model.CellStructure` under a standard
    normal reference distribution.

    Any other integrand (besides constants) raises
    :class:`~robust_counterfactuals.errors.CapabilityError`.
    """

    def __repr__(self):
        return "ClosedFormEngine()"

    def expect(self, f: Integrand):
        if not callable(f):
            return float(f)
        if not isinstance(f, ExponentialTilt):
            raise CapabilityError(
                "The closed-form engine only integrates exponential tilts "
                "of cell-structured models; use a Monte Carlo or grid engine."
            )
        summary = self.snapshot(f.model, f.theta).tilt(f.lam, f.eta, f.k_coef)
        return math.exp(summary.log_mgf)

    def snapshot(self, model: MomentModel, theta: np.ndarray) -> CellSnapshot:
        if model.cells is None:
            raise CapabilityError(
                "This model has no cell structure, so it cannot be "
                "integrated in closed form."
            )
        if model.u_distribution != "gaussian":
            raise CapabilityError(
                "The closed-form engine assumes a standard normal reference."
            )
        theta = np.asarray(theta, dtype=float)
        edges = [
            np.unique(e[np.isfinite(e)])
            for e in map(np.asarray, model.cells.edges(theta))
        ]
        lows_axis = [np.concatenate(([-np.inf], e)) for e in edges]
        highs_axis = [np.concatenate((e, [np.inf])) for e in edges]
        reps_axis = [
            _representatives(lo, hi) for lo, hi in zip(lows_axis, highs_axis)
        ]

        def product(arrays):
            mesh = np.meshgrid(*arrays, indexing="ij")
            return np.column_stack([m.ravel() for m in mesh])

        lows = product(lows_axis)
        highs = product(highs_axis)
        reps = product(reps_axis)

        linear = np.asarray(model.cells.linear, dtype=float)
        G = model.g(reps, theta)
        _check_finite(G)
        cell_g = G - reps @ linear.T
        cell_k = model.k_values(reps, theta) if model.is_explicit else None
        return CellSnapshot(lows, highs, cell_g, cell_k, linear)


def _representatives(lows: np.ndarray, highs: np.ndarray) -> np.ndarray:
    reps = np.where(
        np.isfinite(lows) & np.isfinite(highs), (lows + highs) / 2, 0.0
    )
    reps = np.where(np.isinf(lows) & np.isfinite(highs), highs - 1, reps)
    reps = np.where(np.isfinite(lows) & np.isinf(highs), lows + 1, reps)
    return reps


def make_gaussian_grid(
    per_axis: int, half_width: float, dim: int = 2
) -> GridEngine:
    """
    Tensor grid of per-axis midpoints on ``[-half_width, half_width]`` with
    weights proportional to the standard normal density, renormalised.
    """

    if per_axis < 2:
        raise ValueError(f"per_axis must be at least 2, got {per_axis}.")
    step = 2 * half_width / per_axis
    axis = -half_width + step * (np.arange(per_axis) + 0.5)
    return _product_grid(axis, np.exp(-0.5 * axis**2), dim)


def make_gumbel_grid(
    per_axis: int, low: float = -5.0, high: float = 15.0, dim: int = 1
) -> GridEngine:
    """
    Tensor grid of per-axis midpoints on ``[low, high]`` with weights
    proportional to the standard type-I extreme value density.
    """

    if per_axis < 2:
        raise ValueError(f"per_axis must be at least 2, got {per_axis}.")
    step = (high - low) / per_axis
    axis = low + step * (np.arange(per_axis) + 0.5)
    return _product_grid(axis, np.exp(-(axis + np.exp(-axis))), dim)


def _product_grid(
    axis: np.ndarray, density: np.ndarray, dim: int
) -> GridEngine:
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    weights = density
    for _ in range(dim - 1):
        weights = np.multiply.outer(weights, density)
    weights = weights.ravel()
    weights = weights / weights.sum()
    # absorb the last rounding error so the sum is one to machine precision
    weights[np.argmax(weights)] += 1.0 - weights.sum()
    return GridEngine(points, weights)


def expect(engine: ExpectationEngine, f: Integrand):
    """Return ``E[f(U)]`` under ``engine``."""
    return engine.expect(f)
