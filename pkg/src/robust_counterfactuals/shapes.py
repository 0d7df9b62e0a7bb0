"""
Builders for common shape restrictions on the unobservables, to be passed to
:func:`~robust_counterfactuals.model.append_shape_restrictions`.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .model import ShapeRow


def _column(axis: int):
    def evaluate(u):
        return u[:, axis]

    return evaluate


def mean_zero(dim: int) -> list[ShapeRow]:
    """Location normalisation ``E[U_i] = 0`` for every component."""
    return [
        ShapeRow("equality", _column(i), f"mean_{i + 1}") for i in range(dim)
    ]


def median_zero(dim: int) -> list[ShapeRow]:
    """Median normalisation ``P(U_i <= 0) = 1/2`` for every component."""

    def row(axis):
        return lambda u: (u[:, axis] <= 0).astype(float) - 0.5

    return [
        ShapeRow("equality", row(i), f"median_{i + 1}") for i in range(dim)
    ]


def unit_variance(dim: int) -> list[ShapeRow]:
    """Scale normalisation ``E[U_i^2] = 1`` for every component."""

    def row(axis):
        return lambda u: u[:, axis] ** 2 - 1.0

    return [
        ShapeRow("equality", row(i), f"second_moment_{i + 1}")
        for i in range(dim)
    ]


def identity_covariance(dim: int) -> list[ShapeRow]:
    """``E[U U'] = I``, one row per entry on or above the diagonal."""

    def row(i, j):
        target = 1.0 if i == j else 0.0
        return lambda u: u[:, i] * u[:, j] - target

    return [
        ShapeRow("equality", row(i, j), f"covariance_{i + 1}{j + 1}")
        for i in range(dim)
        for j in range(i, dim)
    ]


def covariance_bound(sigma: Sequence[float]) -> list[ShapeRow]:
    """Variance bounds ``E[U_i^2] <= sigma_i``."""

    def row(axis, bound):
        return lambda u: u[:, axis] ** 2 - bound

    return [
        ShapeRow("inequality", row(i, float(s)), f"variance_bound_{i + 1}")
        for i, s in enumerate(sigma)
    ]


def interquantile(axis: int, a: float, b: float) -> list[ShapeRow]:
    """Scale normalisation ``P(U_i <= a) - P(U_i <= -a) = b``."""
    if a <= 0:
        raise ValueError(f"a must be positive, got {a}.")

    def evaluate(u):
        x = u[:, axis]
        return (x <= a).astype(float) - (x <= -a).astype(float) - b

    return [ShapeRow("equality", evaluate, f"interquantile_{axis + 1}")]


def smoothness_band(
    axis: int, knots: Sequence[float], c: float
) -> list[ShapeRow]:
    """
    Bound the mass between consecutive knots,
    ``P(a_k < U_i <= a_{k+1}) <= c``.
    """

    knots = np.asarray(knots, dtype=float)
    if knots.size < 2 or np.any(np.diff(knots) <= 0):
        raise ValueError("knots must be strictly increasing, at least two.")

    def row(low, high):
        def evaluate(u):
            x = u[:, axis]
            return ((x > low) & (x <= high)).astype(float) - c

        return evaluate

    return [
        ShapeRow("inequality", row(lo, hi), f"band_{axis + 1}_{k + 1}")
        for k, (lo, hi) in enumerate(zip(knots[:-1], knots[1:]))
    ]
