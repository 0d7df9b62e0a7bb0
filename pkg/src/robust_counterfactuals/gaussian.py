"""
Probabilities and first moments of axis-aligned boxes under a standard
normal distribution, for boxes whose finite edges are affine in a parameter
vector, together with their parameter gradients.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import ndtr

_INV_SQRT_2PI = 1.0 / np.sqrt(2 * np.pi)


def _pdf(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        value = _INV_SQRT_2PI * np.exp(-0.5 * x**2)
    return np.where(np.isfinite(x), value, 0.0)


def _masses(lows: np.ndarray, highs: np.ndarray) -> np.ndarray:
    return np.maximum(ndtr(highs) - ndtr(lows), 0.0)


def box_probability(lows: Sequence[float], highs: Sequence[float]) -> float:
    """``P(lows <= U <= highs)`` for ``U ~ N(0, I)``; empty boxes give 0."""
    lows, highs = np.asarray(lows, float), np.asarray(highs, float)
    return float(np.prod(_masses(lows, highs)))


def box_first_moment(
    lows: Sequence[float], highs: Sequence[float]
) -> np.ndarray:
    """``E[U 1{lows <= U <= highs}]`` for ``U ~ N(0, I)``."""
    lows, highs = np.asarray(lows, float), np.asarray(highs, float)
    masses = _masses(lows, highs)
    open_box = highs > lows
    moments = np.where(open_box, _pdf(lows) - _pdf(highs), 0.0)
    others = np.array(
        [np.prod(np.delete(masses, j)) for j in range(masses.size)]
    )
    return moments * others


def intersect(*boxes: tuple[np.ndarray, np.ndarray]):
    """Intersection of numeric boxes ``(lows, highs)``."""
    lows = np.max([np.asarray(b[0], float) for b in boxes], axis=0)
    highs = np.min([np.asarray(b[1], float) for b in boxes], axis=0)
    return lows, highs


class AffineBox(NamedTuple):
    """
    The box ``{u : low(theta) <= u <= high(theta)}`` with edges
    ``low(theta) = low_const + low_coef @ theta`` (and likewise ``high``).

    Infinite constants give unbounded sides; their coefficients must be
    zero.

    Parameters
    ----------
    low_const, high_const : numpy.ndarray
        Shape ``(dim,)``.
    low_coef, high_coef : numpy.ndarray
        Shape ``(dim, d_theta)``.
    """

    low_const: np.ndarray
    low_coef: np.ndarray
    high_const: np.ndarray
    high_coef: np.ndarray

    def edges(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        return (
            _affine(self.low_const, self.low_coef, theta),
            _affine(self.high_const, self.high_coef, theta),
        )

    def probability(self, theta: np.ndarray) -> float:
        return box_probability(*self.edges(theta))

    def first_moment(self, theta: np.ndarray) -> np.ndarray:
        return box_first_moment(*self.edges(theta))

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        """``dP(box)/dtheta'``."""
        lows, highs = self.edges(theta)
        masses = _masses(lows, highs)
        grad = np.zeros(np.asarray(theta).size)
        for j in range(masses.size):
            if not highs[j] > lows[j]:
                continue
            others = np.prod(np.delete(masses, j))
            edge = (
                _pdf(highs[j]) * self.high_coef[j]
                - _pdf(lows[j]) * self.low_coef[j]
            )
            grad += others * edge
        return grad


def _affine(const, coef, theta) -> np.ndarray:
    const = np.asarray(const, dtype=float)
    finite = np.isfinite(const)
    shift = np.asarray(coef, dtype=float) @ theta
    return np.where(finite, const + np.where(finite, shift, 0.0), const)

