import math

import pytest
from robust_counterfactuals.backends import (
    _ALL_BACKENDS,
    Backend,
    backend_for,
    instantiate_backend,
    register_backend,
)

RECORDS = [
    {"target": "a", "delta": 0.1, "kappa_lower": 0.2, "envelope": False},
    {
        "target": "a",
        "delta": 0.2,
        "kappa_lower": -math.inf,
        "envelope": True,
    },
]


def test_incomplete_subclassing():
    """A backend must implement all abstract methods"""

    @register_backend("incorrect")
    class IncorrectBackend(Backend):
        pass

    try:
        with pytest.raises(TypeError):
            IncorrectBackend()
    finally:
        _ALL_BACKENDS.pop("incorrect")


def test_failure_to_register():
    """A backend must be registered with @register_backend"""

    with pytest.raises(ValueError, match="Did you forget to register"):
        instantiate_backend("un-registered")


@pytest.mark.parametrize("backend", list(_ALL_BACKENDS.keys()))
def test_success_to_register(backend, tmp_path):
    """Registered backends write and read back the same records"""

    backend = instantiate_backend(backend)
    assert isinstance(backend, Backend)

    path = tmp_path / f"results{backend.suffixes[0]}"
    backend.write(path, RECORDS)
    loaded = backend.read(path)

    assert [r["target"] for r in loaded] == ["a", "a"]
    assert loaded[0]["delta"] == pytest.approx(0.1)
    assert loaded[1]["kappa_lower"] == -math.inf
    assert [bool(r["envelope"]) for r in loaded] == [False, True]


def test_backend_for():
    assert backend_for("out/bounds.csv").suffixes == (".csv",)
    assert backend_for("BOUNDS.JSON").suffixes == (".json",)
    assert ".yml" in backend_for("bounds.yml").suffixes

    with pytest.raises(ValueError, match="Known suffixes"):
        backend_for("bounds.parquet")
