from __future__ import annotations

from typing import Callable

import numpy as np

# exponentials of arguments beyond this are reported as +inf
EXP_CAP = 700.0


def unwrap(array: np.ndarray):
    """Return a python-style scalar for 0-d arrays, else the array itself."""
    return array[()] if np.ndim(array) == 0 else array


def capped_exp(y: np.ndarray) -> np.ndarray:
    """``exp(y)`` with arguments above :data:`EXP_CAP` mapped to ``+inf``."""
    y = np.asarray(y, dtype=float)
    out = np.exp(np.minimum(y, EXP_CAP))
    return np.where(y > EXP_CAP, np.inf, out)


def central_jacobian(
    function: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    step: float = 1e-5,
) -> np.ndarray:
    """
    Central finite-difference Jacobian of a vector-valued ``function``.

    The step for coordinate ``i`` is ``step * max(1, |x_i|)``.

    Returns
    -------
    numpy.ndarray
        Matrix of shape ``(len(function(x)), len(x))``.
    """

    x = np.asarray(x, dtype=float)
    columns = []
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        diff = np.atleast_1d(function(up)) - np.atleast_1d(function(down))
        columns.append(diff / (2 * h))
    return np.column_stack(columns)


def truncate(value: object, width: int = 100) -> str:
    """String form of ``value``, shortened in the middle beyond ``width``."""
    text = str(value)
    if len(text) > width:
        half = width // 2
        text = text[:half] + "..." + text[-half:]
    return text
