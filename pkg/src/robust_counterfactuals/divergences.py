"""
The phi-divergence family.

A divergence is described by a convex ``phi`` with ``phi(1) = phi'(1) = 0``
and ``phi(x) = +inf`` for ``x < 0``. Everything the dual programs need is
expressed through its convex conjugate
``phi*(y) = sup_{t >= 0} (t y - phi(t))`` and the derivative of that
conjugate, which is the optimal density ratio.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from typing import NamedTuple, Union

import numpy as np
from scipy.special import xlogy

from .util import EXP_CAP, capped_exp, unwrap

logger = logging.getLogger(__name__)

# Global state is isolated here:
_ALL_DIVERGENCES: dict[str, type[Divergence]] = {}

# a single sample carrying more than this share of a moment estimate
# is taken as a sign that the moment does not exist
_DOMINANCE = 0.2
_DOUBLING_TOLERANCE = 0.25


def register_divergence(name: str):
    """
    Use this decorator (along with subclassing :class:`Divergence`) to make a
    divergence selectable by its string token.

    Example
    -------
    .. code-block:: python

        from robust_counterfactuals import Divergence, register_divergence

        @register_divergence("my-divergence")
        class MyDivergence(Divergence):
            ...
    """

    def decorator(cls: type[Divergence]):
        _ALL_DIVERGENCES[name] = cls
        cls.name = name
        return cls

    return decorator


def instantiate_divergence(token: str) -> Divergence:
    """
    Build a divergence from a token such as ``"kl"`` or
    ``"cressie-read:1.5"``. Anything after a colon is passed to the
    constructor as a float.
    """

    name, _, argument = token.strip().partition(":")
    if name not in _ALL_DIVERGENCES:
        raise ValueError(
            f"Unknown divergence {name}. "
            f"Available divergences are: {list(_ALL_DIVERGENCES.keys())}. "
            "Did you forget to register it using @register_divergence?"
        )
    cls = _ALL_DIVERGENCES[name]
    if argument:
        try:
            return cls(float(argument))
        except TypeError as e:
            raise ValueError(
                f"Divergence {name} does not take a parameter, got {token!r}."
            ) from e
    return cls()


class Divergence(ABC):
    """
    Abstract base class for phi-divergences.

    Subclasses implement :meth:`phi`, :meth:`conjugate` and
    :meth:`conjugate_derivative` elementwise on numpy arrays; the scaled
    conjugate and divergence evaluation are derived from these.
    """

    name: str = "abstract"

    #: whether the unit-mass multiplier can be profiled out analytically
    profiles_normalisation: bool = False

    #: order of the moment that must be finite for the moment functions,
    #: or ``None`` when exponential moments are required
    moment_order: float | None = 2.0

    @abstractmethod
    def phi(self, x: np.ndarray) -> np.ndarray:
        """Evaluate ``phi`` elementwise, with ``+inf`` for ``x < 0``."""

    @abstractmethod
    def conjugate(self, y: np.ndarray) -> np.ndarray:
        """Evaluate the convex conjugate ``phi*`` elementwise."""

    @abstractmethod
    def conjugate_derivative(self, y: np.ndarray) -> np.ndarray:
        """Evaluate ``d phi* / dy`` elementwise; always nonnegative."""

    @property
    def token(self) -> str:
        return self.name

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return isinstance(other, Divergence) and self.token == other.token

    def __hash__(self):
        return hash(self.token)

    def scaled_conjugate(self, eta: float, y: np.ndarray) -> np.ndarray:
        """
        Evaluate ``(eta phi)*(y) = eta phi*(y / eta)``.

        At ``eta = 0`` this is the support function of ``[0, inf)``: zero for
        ``y <= 0`` and ``+inf`` otherwise.
        """

        if eta < 0:
            raise ValueError(f"eta must be nonnegative, got {eta}.")
        y = np.asarray(y, dtype=float)
        if eta == 0:
            return np.where(y <= 0, 0.0, np.inf)
        return eta * self.conjugate(y / eta)

    def scaled_conjugate_derivative(
        self, eta: float, y: np.ndarray
    ) -> np.ndarray:
        """Evaluate ``d/dy (eta phi)*(y) = phi*'(y / eta)`` for ``eta > 0``."""

        if eta <= 0:
            raise ValueError(f"eta must be positive, got {eta}.")
        return self.conjugate_derivative(np.asarray(y, dtype=float) / eta)

    def divergence_of(self, m_values, weights) -> float:
        """
        ``sum_i weights_i * phi(m_i)``: the divergence of the distribution
        with density ratio ``m`` relative to the weighted reference.
        """

        m = np.asarray(m_values, dtype=float).ravel()
        w = np.asarray(weights, dtype=float).ravel()
        if m.shape != w.shape:
            raise ValueError(
                f"m_values and weights must have equal length, got "
                f"{m.size} and {w.size}."
            )
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1.")
        positive = w > 0
        return float(np.dot(w[positive], self.phi(m[positive])))


@register_divergence("kl")
class KullbackLeibler(Divergence):
    """``phi(x) = x log x - x + 1``, with conjugate ``exp(y) - 1``."""

    profiles_normalisation = True
    moment_order = None

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore"):
            value = xlogy(x, x) - x + 1
        return unwrap(np.where(x < 0, np.inf, value))

    def conjugate(self, y):
        return unwrap(capped_exp(y) - 1)

    def conjugate_derivative(self, y):
        return unwrap(capped_exp(y))


@register_divergence("cressie-read")
class CressieRead(Divergence):
    """
    ``phi(x) = (x^p - 1 - p (x - 1)) / (p (p - 1))`` for ``p > 1``.

    The conjugate is ``((1 + (p - 1) y)^(p / (p - 1)) - 1) / p`` above the
    kink at ``y = -1 / (p - 1)`` and the constant ``-phi(0) = -1 / p`` below.
    """

    def __init__(self, p: float = 2.0):
        if not p > 1:
            raise ValueError(f"Cressie-Read requires p > 1, got {p}.")
        self.p = float(p)

    @property
    def token(self) -> str:
        return f"{self.name}:{self.p:g}"

    @property
    def moment_order(self) -> float:  # type: ignore[override]
        return self.p / (self.p - 1)

    def __repr__(self):
        return f"{type(self).__name__}(p={self.p:g})"

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        p = self.p
        safe = np.maximum(x, 0.0)
        value = (safe**p - 1 - p * (safe - 1)) / (p * (p - 1))
        return unwrap(np.where(x < 0, np.inf, value))

    def conjugate(self, y):
        y = np.asarray(y, dtype=float)
        p = self.p
        base = 1 + (p - 1) * y
        with np.errstate(over="ignore"):
            active = (np.maximum(base, 0.0) ** (p / (p - 1)) - 1) / p
        return unwrap(np.where(base > 0, active, -1 / p))

    def conjugate_derivative(self, y):
        y = np.asarray(y, dtype=float)
        p = self.p
        base = 1 + (p - 1) * y
        with np.errstate(over="ignore"):
            active = np.maximum(base, 0.0) ** (1 / (p - 1))
        return unwrap(np.where(base > 0, active, 0.0))


@register_divergence("chi2")
class ChiSquared(CressieRead):
    """``phi(x) = (x - 1)^2 / 2``; identical to Cressie-Read with ``p = 2``."""

    def __init__(self):
        super().__init__(2.0)

    @property
    def token(self) -> str:
        return self.name

    def __repr__(self):
        return "ChiSquared()"


@register_divergence("hybrid")
class Hybrid(Divergence):
    """
    KL below ``x = e`` and quadratic above it, so that only second moments
    of the moment functions are needed.

    ``phi(x) = x log x - x + 1`` for ``x <= e`` and
    ``(x - e)^2 / (2e) + (x - e) + 1`` for ``x > e``.
    """

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        e = math.e
        with np.errstate(invalid="ignore"):
            kl = xlogy(x, x) - x + 1
        quadratic = (x - e) ** 2 / (2 * e) + (x - e) + 1
        value = np.where(x <= e, kl, quadratic)
        return unwrap(np.where(x < 0, np.inf, value))

    def conjugate(self, y):
        y = np.asarray(y, dtype=float)
        e = math.e
        exponential = np.exp(np.minimum(y, 1.0)) - 1
        return unwrap(np.where(y <= 1, exponential, e / 2 * (y**2 + 1) - 1))

    def conjugate_derivative(self, y):
        y = np.asarray(y, dtype=float)
        return unwrap(np.where(y <= 1, np.exp(np.minimum(y, 1.0)), math.e * y))


DivergenceLike = Union[Divergence, str]


def as_divergence(kind: DivergenceLike) -> Divergence:
    """Accept either a :class:`Divergence` or its string token."""
    if isinstance(kind, Divergence):
        return kind
    return instantiate_divergence(kind)


def phi(kind: DivergenceLike, x):
    """Evaluate ``phi`` for the divergence ``kind``."""
    return as_divergence(kind).phi(x)


def phi_conjugate(kind: DivergenceLike, y):
    """Evaluate ``phi*`` for the divergence ``kind``."""
    return as_divergence(kind).conjugate(y)


def scaled_conjugate(kind: DivergenceLike, eta: float, y):
    """Evaluate ``(eta phi)*(y)`` for the divergence ``kind``."""
    return unwrap(as_divergence(kind).scaled_conjugate(eta, y))


def scaled_conjugate_derivative(kind: DivergenceLike, eta: float, y):
    """Evaluate ``d/dy (eta phi)*(y)`` for the divergence ``kind``."""
    return unwrap(as_divergence(kind).scaled_conjugate_derivative(eta, y))


def divergence_of(kind: DivergenceLike, m_values, weights) -> float:
    """Divergence of density ratio ``m_values`` under ``weights``."""
    return as_divergence(kind).divergence_of(m_values, weights)


class CompatibilityReport(NamedTuple):
    """
    Outcome of :func:`check_moment_compatibility`.

    Parameters
    ----------
    passed : bool
        ``False`` when any check raised a warning.
    messages : list[str]
        One entry per failed check.
    """

    passed: bool
    messages: list[str]

    def __repr__(self):
        status = "pass" if self.passed else "warn"
        return f"CompatibilityReport({status}, {self.messages})"


def check_moment_compatibility(
    kind: DivergenceLike, f_samples
) -> CompatibilityReport:
    """
    Heuristic check that a moment function has the moments the divergence
    needs for its dual programs to be well behaved.

    For KL the exponential moments ``E[exp(c |f|)]``, ``c in {1, 2, 4}``, must
    be finite: a check fails when the estimate overflows or is dominated by a
    single sample. For power-type divergences the moment of order
    ``p / (p - 1)`` (the second moment for hybrid and chi-squared) must not be
    dominated by a single sample and must be stable when the sample is
    halved. The result is advisory and never blocks a solve.

    Parameters
    ----------
    kind : Divergence or str
        The divergence.
    f_samples : array-like
        Values of the moment function at draws from the reference
        distribution.
    """

    divergence = as_divergence(kind)
    f = np.abs(np.asarray(f_samples, dtype=float)).ravel()
    messages: list[str] = []

    if f.size < 2:
        messages.append("at least two samples are needed")
    elif not np.all(np.isfinite(f)):
        messages.append("samples contain non-finite values")
    elif divergence.moment_order is None:
        for c in (1, 2, 4):
            exponent = c * f
            if exponent.max() > EXP_CAP:
                messages.append(f"E[exp({c}|f|)] overflows")
                continue
            share = 1.0 / np.exp(exponent - exponent.max()).sum()
            if share > _DOMINANCE:
                messages.append(
                    f"E[exp({c}|f|)] is dominated by a single sample "
                    f"(share {share:.2f}); the exponential moment is "
                    "unlikely to exist"
                )
    else:
        q = divergence.moment_order
        terms = f**q
        total = terms.sum()
        if total > 0:
            full = terms.mean()
            half = terms[: f.size // 2].mean()
            share = terms.max() / total
            if not np.isfinite(full):
                messages.append(f"E[|f|^{q:g}] overflows")
            elif share > _DOMINANCE:
                messages.append(
                    f"E[|f|^{q:g}] is dominated by a single sample "
                    f"(share {share:.2f})"
                )
            elif abs(half - full) > _DOUBLING_TOLERANCE * full:
                messages.append(
                    f"E[|f|^{q:g}] changes from {half:.4g} to {full:.4g} "
                    "when the sample is doubled"
                )

    for message in messages:
        logger.warning(
            "moment compatibility (%s): %s", divergence.token, message
        )
    return CompatibilityReport(passed=not messages, messages=messages)
