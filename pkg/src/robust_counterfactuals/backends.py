from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import yaml

# Global state is isolated here:
_ALL_BACKENDS: dict[str, type[Backend]] = {}

Record = dict[str, Any]


class Backend(ABC):
    """
    Abstract base class for results backends.

    A backend writes a list of flat records (one per delta row, or a single
    report) to a file and reads them back. Subclasses must override
    :meth:`write` and :meth:`read`.
    """

    suffixes: tuple[str, ...] = ()

    @abstractmethod
    def write(self, path: Path, records: list[Record]) -> None:
        """Write ``records`` to ``path``, replacing any previous content."""

    @abstractmethod
    def read(self, path: Path) -> list[Record]:
        """Read the records stored at ``path``."""


def register_backend(name: str):
    """
    Use this decorator (along with subclassing :class:`Backend`) to register
    a new custom backend.

    Example
    -------
    .. code-block:: python

        from robust_counterfactuals.backends import Backend, register_backend

        @register_backend("my-backend")
        class MyBackend(Backend):
            suffixes = (".mine",)
            ...
    """

    def decorator(cls: type[Backend]):
        _ALL_BACKENDS[name] = cls
        return cls

    return decorator


def instantiate_backend(name: str) -> Backend:
    if name not in _ALL_BACKENDS:
        raise ValueError(
            f"Unknown backend type {name}. "
            f"Available backends are: {list(_ALL_BACKENDS.keys())}. "
            "Did you forget to register your backend using @register_backend?"
        )
    return _ALL_BACKENDS[name]()


def backend_for(path: Path | str) -> Backend:
    """The registered backend whose suffixes include that of ``path``."""
    suffix = Path(path).suffix.lower()
    for name, cls in _ALL_BACKENDS.items():
        if suffix in cls.suffixes:
            return instantiate_backend(name)
    known = [s for cls in _ALL_BACKENDS.values() for s in cls.suffixes]
    raise ValueError(
        f"No results backend handles {suffix!r} files. "
        f"Known suffixes are: {known}."
    )


def _python(value: Any) -> Any:
    return value.item() if isinstance(value, np.generic) else value


def _plain(value: Any) -> Any:
    """Convert numpy scalars and non-finite floats to plain python."""
    value = _python(value)
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def _restore(value: Any) -> Any:
    if isinstance(value, str) and value in ("inf", "-inf", "nan"):
        return float(value)
    return value


@register_backend("csv")
class CSVBackend(Backend):
    """One row per record, columns in first-record order."""

    suffixes = (".csv",)

    def write(self, path: Path, records: list[Record]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame.from_records(records).to_csv(
            path, index=False, float_format="%.10g"
        )

    def read(self, path: Path) -> list[Record]:
        frame = pd.read_csv(path)
        return [
            {key: _python(value) for key, value in row.items()}
            for row in frame.to_dict(orient="records")
        ]


@register_backend("json")
class JSONBackend(Backend):
    """A JSON list of records; non-finite values are written as strings."""

    suffixes = (".json",)

    def write(self, path: Path, records: list[Record]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        plain = [{k: _plain(v) for k, v in r.items()} for r in records]
        with open(path, "w") as f:
            json.dump(plain, f, indent=2)

    def read(self, path: Path) -> list[Record]:
        with open(path) as f:
            records = json.load(f)
        return [{k: _restore(v) for k, v in r.items()} for r in records]


@register_backend("yaml")
class YAMLBackend(Backend):
    """A YAML list of records."""

    suffixes = (".yaml", ".yml")

    def write(self, path: Path, records: list[Record]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        plain = [{k: _plain(v) for k, v in r.items()} for r in records]
        with open(path, "w") as f:
            yaml.safe_dump(plain, f, sort_keys=False)

    def read(self, path: Path) -> list[Record]:
        with open(path) as f:
            records = yaml.safe_load(f) or []
        return [{k: _restore(v) for k, v in r.items()} for r in records]
