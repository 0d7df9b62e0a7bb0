from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bounds import BoundsCurve

logger = logging.getLogger(__name__)

# 800 x 600 pixels
_FIGSIZE = (8, 6)
_DPI = 100


def plot_bounds(
    curve: BoundsCurve,
    path: Path | str,
    kappa_hat: float | None = None,
    baseline: float | None = None,
    extrapolated: Sequence[tuple[float, float]] | None = None,
    title: str = "",
) -> Path:
    """
    Draw a bounds curve against delta and save it as an SVG.

    Solid lines are the lower and upper bounds, the dashed line is the
    counterfactual under the reference distribution, the dotted line the
    pre-intervention value and the dot-dashed lines the extrapolation from
    local sensitivity.

    Parameters
    ----------
    curve : BoundsCurve
        The bounds to draw.
    path : path-like
        Where to write the figure.
    kappa_hat, baseline : float, optional
        Horizontal reference lines.
    extrapolated : sequence of (lower, upper), optional
        One pair per row of ``curve``.
    title : str
        Figure title.
    """

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots(figsize=_FIGSIZE)
    deltas = curve.deltas
    ax.plot(deltas, curve.lower, color="#4c72b0", linewidth=1.5)
    ax.plot(deltas, curve.upper, color="#4c72b0", linewidth=1.5)
    if kappa_hat is not None:
        ax.axhline(kappa_hat, color="#333333", linewidth=1, linestyle="--")
    if baseline is not None:
        ax.axhline(baseline, color="#333333", linewidth=1, linestyle=":")
    if extrapolated is not None:
        lows, highs = zip(*extrapolated)
        for values in (lows, highs):
            ax.plot(
                deltas, values, color="#c44e52", linewidth=1, linestyle="-."
            )

    ax.set_xlabel("delta")
    ax.set_ylabel("counterfactual")
    if title:
        ax.set_title(title)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, format="svg", dpi=_DPI)
    plt.close(fig)
    logger.info("figure saved to %s", path)
    return path
