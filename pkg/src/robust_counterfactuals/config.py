"""
Run configuration: a YAML (or JSON) document deep-merged over the built-in
defaults of the selected model.

.. code-block:: yaml

    model: entry-game
    divergence: kl
    deltas: {start: 0.01, stop: 1.0, num: 20}
    engine:
      kind: closed-form
    search:
      n_starts: 16
    entry-game:
      tau: 1.5
"""

from __future__ import annotations

import copy
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .bounds import SearchSettings
from .divergences import instantiate_divergence
from .duality import SolverSettings
from .errors import ConfigError
from .expectation import (
    ClosedFormEngine,
    ExpectationEngine,
    MonteCarloEngine,
    make_draws,
    make_gaussian_grid,
    make_gumbel_grid,
)
from .model import MomentModel, registered_models

logger = logging.getLogger(__name__)

ENGINE_KINDS = ("closed-form", "mc", "grid")

_BASE: dict[str, Any] = {
    "model": None,
    "divergence": "kl",
    "deltas": {"start": 0.01, "stop": 1.0, "num": 20},
    "engine": {
        "kind": "mc",
        "mc": {"n": 100_000},
        "grid": {"per_axis": 200, "half_width": 8.0},
    },
    "solver": {},
    "search": {},
    "output": {"csv": None, "svg": None},
    "seed": 0,
}

MODEL_DEFAULTS: dict[str, dict[str, Any]] = {
    "entry-game": {
        "divergence": "kl",
        "deltas": {"start": 0.01, "stop": 1.0, "num": 20},
        "engine": {"kind": "closed-form"},
        "entry-game": {"tau": 1.5, "z_focus": 1},
    },
    "ddc-kss": {
        "divergence": "hybrid",
        "deltas": {"start": 0.005, "stop": 0.3, "num": 15},
        "engine": {"kind": "mc", "mc": {"n": 100_000}},
        "ddc-kss": {"subsidy": 0.9, "focus_states": ["H", "M"]},
    },
}


@dataclass(frozen=True)
class RunConfig:
    """
    A validated run configuration.

    Parameters
    ----------
    model : str
        Name of a registered model.
    divergence : str
        Divergence token, e.g. ``"kl"`` or ``"cressie-read:1.5"``.
    deltas : tuple of float
        Positive, strictly increasing neighbourhood sizes.
    engine : dict
        The ``engine`` section.
    solver : SolverSettings
        Dual solver settings.
    search : SearchSettings
        Outer search settings.
    output : dict
        Output paths (``csv``, ``svg``), possibly ``None``.
    seed : int
        Base seed.
    section : dict
        The model-specific section.
    """

    model: str
    divergence: str
    deltas: tuple[float, ...]
    engine: dict[str, Any]
    solver: SolverSettings
    search: SearchSettings
    output: dict[str, Any]
    seed: int
    section: dict[str, Any]


def deep_merge(
    base: Mapping[str, Any], override: Mapping[str, Any]
) -> dict[str, Any]:
    """Recursively merge ``override`` into a copy of ``base``."""
    merged = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_document(path: Path | str) -> dict[str, Any]:
    """Parse a YAML or JSON file into a mapping."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as error:
        raise ConfigError(f"Cannot read config file {path}: {error}") from error
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as error:
        mark = getattr(error, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(error, "problem", None) or str(error)
        raise ConfigError(f"Invalid YAML: {problem}", line=line) from error
    if document is None:
        return {}
    if not isinstance(document, dict):
        raise ConfigError("The config document must be a mapping.")
    return document


def delta_grid(value: Any) -> tuple[float, ...]:
    """
    An explicit list of deltas, or a geometric grid
    ``{start, stop, num}``.
    """

    if isinstance(value, Mapping):
        try:
            start, stop = float(value["start"]), float(value["stop"])
            num = int(value["num"])
        except (KeyError, TypeError, ValueError) as error:
            raise ConfigError(
                "A geometric delta grid needs numeric start, stop and num.",
                key="deltas",
            ) from error
        if num < 1 or start <= 0 or stop < start:
            raise ConfigError(
                "A geometric delta grid needs 0 < start <= stop and num >= 1.",
                key="deltas",
            )
        deltas = np.geomspace(start, stop, num) if num > 1 else [start]
    elif isinstance(value, (list, tuple)):
        deltas = [float(d) for d in value]
    elif isinstance(value, (int, float)):
        deltas = [float(value)]
    else:
        raise ConfigError("deltas must be a list or a mapping.", key="deltas")

    deltas = tuple(float(d) for d in deltas)
    if not deltas:
        raise ConfigError("The delta grid is empty.", key="deltas")
    if any(d <= 0 for d in deltas) or any(
        b <= a for a, b in zip(deltas, deltas[1:])
    ):
        raise ConfigError(
            "deltas must be positive and strictly increasing.", key="deltas"
        )
    return deltas


def _settings(cls, values: Any, key: str):
    if not isinstance(values, Mapping):
        raise ConfigError(f"The {key} section must be a mapping.", key=key)
    names = {f.name for f in dataclasses.fields(cls)}
    for name in values:
        if name not in names:
            raise ConfigError(
                f"Unknown setting. Available settings are: {sorted(names)}.",
                key=f"{key}.{name}",
            )
    try:
        return cls(**values)
    except (TypeError, ValueError) as error:
        raise ConfigError(str(error), key=key) from error


def build_config(
    document: Mapping[str, Any] | None = None,
    model: str | None = None,
) -> RunConfig:
    """
    Validate ``document`` (merged over the defaults of its model) into a
    :class:`RunConfig`. ``model`` overrides the document's ``model`` key.
    """

    document = dict(document or {})
    name = model or document.get("model")
    if name is None:
        raise ConfigError("No model selected.", key="model")
    if name not in registered_models():
        raise ConfigError(
            f"Unknown model {name}. "
            f"Available models are: {registered_models()}.",
            key="model",
        )

    allowed = set(_BASE) | {name}
    for key in document:
        if key not in allowed:
            raise ConfigError("Unknown top-level key.", key=str(key))

    merged = deep_merge(_BASE, MODEL_DEFAULTS.get(name, {}))
    merged = deep_merge(merged, document)
    merged["model"] = name

    try:
        instantiate_divergence(str(merged["divergence"]))
    except ValueError as error:
        raise ConfigError(str(error), key="divergence") from error

    engine = merged["engine"]
    if engine.get("kind") not in ENGINE_KINDS:
        raise ConfigError(
            f"Unknown engine kind. Available kinds are: {list(ENGINE_KINDS)}.",
            key="engine.kind",
        )

    return RunConfig(
        model=name,
        divergence=str(merged["divergence"]),
        deltas=delta_grid(merged["deltas"]),
        engine=engine,
        solver=_settings(SolverSettings, merged["solver"], "solver"),
        search=_settings(SearchSettings, merged["search"], "search"),
        output=dict(merged["output"] or {}),
        seed=int(merged["seed"]),
        section=dict(merged.get(name) or {}),
    )


def load_config(
    path: Path | str | None = None, model: str | None = None
) -> RunConfig:
    """Read, merge and validate a configuration file (or the defaults)."""
    document = read_document(path) if path is not None else {}
    config = build_config(document, model)
    logger.debug("resolved configuration: %s", config)
    return config


def make_engine(config: RunConfig, model: MomentModel) -> ExpectationEngine:
    """The expectation engine described by ``config.engine`` for ``model``."""
    kind = config.engine["kind"]
    if kind == "closed-form":
        return ClosedFormEngine()
    if kind == "mc":
        mc = config.engine.get("mc", {})
        seed = int(mc.get("seed", config.seed))
        draws = make_draws(
            model.u_distribution, int(mc.get("n", 100_000)), model.u_dim, seed
        )
        return MonteCarloEngine(draws)
    grid = config.engine.get("grid", {})
    per_axis = int(grid.get("per_axis", 200))
    if model.u_distribution == "gaussian":
        return make_gaussian_grid(
            per_axis, float(grid.get("half_width", 8.0)), model.u_dim
        )
    return make_gumbel_grid(per_axis, dim=model.u_dim)
