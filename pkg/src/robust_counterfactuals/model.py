"""
Structural models written as moment in/equalities in the unobservables.

A :class:`MomentModel` stacks its moment functions in the fixed order
``(g1, g2, g3, g4)``::

    E[g1] <= P1,    E[g2] = P2,    E[g3] <= 0,    E[g4] = 0

and carries a counterfactual that depends on the unobservables either
explicitly, ``kappa = E[k(U, theta, gamma)]``, or implicitly,
``kappa = k(theta, gamma)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Sequence, Union

import numpy as np

# Global state is isolated here:
_ALL_MODELS: dict[str, Callable[[dict[str, Any]], list[Target]]] = {}

MomentFunction = Callable[[np.ndarray, np.ndarray, Any], np.ndarray]


class Explicit(NamedTuple):
    """Counterfactual ``E[k(U, theta, gamma)]``; ``function(u, theta, gamma)``
    returns one value per row of ``u``."""

    function: Callable[[np.ndarray, np.ndarray, Any], np.ndarray]


class Implicit(NamedTuple):
    """Counterfactual ``k(theta, gamma)``, optionally with its gradient."""

    function: Callable[[np.ndarray, Any], float]
    gradient: Callable[[np.ndarray, Any], np.ndarray] | None = None


CounterfactualKind = Union[Explicit, Implicit]


class ReducedForm(NamedTuple):
    """Targeted moments ``P = (P1, P2)``."""

    P1: np.ndarray
    P2: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.P1, self.P2])


class LocalMoments(NamedTuple):
    """
    Closed-form ingredients of the local sensitivity of a model whose
    equality rows are ``h = (g2 - P2; g4)``.

    Parameters
    ----------
    H : numpy.ndarray
        ``dE[h]/dtheta'``.
    J : numpy.ndarray
        ``dE[k]/dtheta'``.
    V : numpy.ndarray
        ``E[h h']``.
    Ekh : numpy.ndarray
        ``E[k h]``.
    kappa : float
        ``E[k]``.
    k_variance : float
        ``E[(k - kappa)^2]``.
    h_mean : numpy.ndarray
        ``E[h]``.
    """

    H: np.ndarray
    J: np.ndarray
    V: np.ndarray
    Ekh: np.ndarray
    kappa: float
    k_variance: float
    h_mean: np.ndarray


# (theta, P2, engine) -> LocalMoments
LocalMomentsHook = Callable[[np.ndarray, np.ndarray, Any], LocalMoments]


class CellStructure(NamedTuple):
    """
    Describes moment functions that are constant on the cells of an
    axis-aligned partition, plus rows that are linear in ``u``.

    ``g(u) = c(cell(u)) + linear @ u``, where the partition along axis ``j``
    is cut at ``edges(theta)[j]``.
    """

    edges: Callable[[np.ndarray], Sequence[np.ndarray]]
    linear: np.ndarray


@dataclass(frozen=True)
class Multipliers:
    """
    Dual variables of the neighbourhood programs.

    ``eta`` prices the divergence budget, ``zeta`` the unit-mass constraint
    and the ``lambda`` blocks the four groups of moment rows. The cone
    constraints ``eta >= 0``, ``lambda1 >= 0`` and ``lambda3 >= 0`` are
    enforced on construction.
    """

    eta: float
    zeta: float
    lambda1: np.ndarray
    lambda2: np.ndarray
    lambda3: np.ndarray
    lambda4: np.ndarray

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            value = np.asarray(getattr(self, name), dtype=float).ravel()
            object.__setattr__(self, name, value)
        if self.eta < 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}.")
        for name in ("lambda1", "lambda3"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} must be nonnegative.")

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> Multipliers:
        return cls.from_stacked(np.zeros(sum(dims)), dims)

    @classmethod
    def from_stacked(
        cls,
        lam: np.ndarray,
        dims: Sequence[int],
        eta: float = 0.0,
        zeta: float = 0.0,
    ) -> Multipliers:
        """Inverse of :func:`stack_lambda`."""
        lam = np.asarray(lam, dtype=float).ravel()
        if lam.size != sum(dims):
            raise ValueError(
                f"Expected {sum(dims)} multipliers, got {lam.size}."
            )
        blocks = np.split(lam, np.cumsum(dims)[:-1])
        return cls(eta, zeta, *blocks)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (
            self.lambda1.size,
            self.lambda2.size,
            self.lambda3.size,
            self.lambda4.size,
        )

    def __eq__(self, other):
        if not isinstance(other, Multipliers):
            return NotImplemented
        return (
            self.eta == other.eta
            and self.zeta == other.zeta
            and np.array_equal(stack_lambda(self), stack_lambda(other))
            and self.dims == other.dims
        )

    def __repr__(self):
        return (
            f"Multipliers(eta={self.eta:.4g}, zeta={self.zeta:.4g}, "
            f"lambda={np.round(stack_lambda(self), 4).tolist()})"
        )


def stack_lambda(m: Multipliers) -> np.ndarray:
    """Concatenate ``(lambda1, lambda2, lambda3, lambda4)`` in g order."""
    return np.concatenate([m.lambda1, m.lambda2, m.lambda3, m.lambda4])


def lambda12(m: Multipliers) -> np.ndarray:
    """The multipliers on the targeted rows, ``(lambda1, lambda2)``."""
    return np.concatenate([m.lambda1, m.lambda2])


@dataclass(frozen=True)
class MomentModel:
    """
    A structural model in moment form.

    Parameters
    ----------
    dims : tuple[int, int, int, int]
        Row counts ``(d1, d2, d3, d4)``.
    g_eval : callable
        ``g_eval(u, theta, gamma)`` returns an ``(n, d)`` array for ``n``
        rows of ``u``, columns ordered ``(g1, g2, g3, g4)``.
    k : Explicit or Implicit
        The counterfactual.
    theta_lower, theta_upper : array-like
        The parameter box.
    u_dim : int
        Dimension of the unobservables.
    gamma : Any
        Auxiliary parameter passed through to the evaluators untouched.
    theta_names : tuple[str, ...]
        Names used for reporting.
    u_distribution : str
        Tag of the reference distribution, ``"gaussian"`` or ``"gumbel"``.
    theta_hat : array-like, optional
        A parameter at which the reference distribution rationalises the
        targeted moments; used as a start for searches.
    cells : CellStructure, optional
        Enables the closed-form cell engine.
    jacobian : callable, optional
        ``jacobian(theta, P2)`` returning analytic ``(H, J)`` for the
        equality rows ``h = (g2 - P2; g4)``.
    local_moments : callable, optional
        ``local_moments(theta, P2, engine)`` returning :class:`LocalMoments`;
        ``engine`` is the expectation engine of the analysis.
    """

    dims: tuple[int, int, int, int]
    g_eval: MomentFunction
    k: CounterfactualKind
    theta_lower: np.ndarray
    theta_upper: np.ndarray
    u_dim: int
    gamma: Any = None
    theta_names: tuple[str, ...] = ()
    u_distribution: str = "gaussian"
    theta_hat: np.ndarray | None = None
    cells: CellStructure | None = None
    jacobian: Callable[[np.ndarray, np.ndarray], tuple] | None = None
    local_moments: LocalMomentsHook | None = None
    # row index maps into the original g_eval columns
    _rows: tuple[int, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 4 or min(dims) < 0:
            raise ValueError(f"dims must be four counts, got {self.dims}.")
        object.__setattr__(self, "dims", dims)
        lower = np.asarray(self.theta_lower, dtype=float).ravel()
        upper = np.asarray(self.theta_upper, dtype=float).ravel()
        if lower.shape != upper.shape:
            raise ValueError("theta_lower and theta_upper differ in length.")
        if np.any(lower > upper):
            raise ValueError("theta_lower must not exceed theta_upper.")
        object.__setattr__(self, "theta_lower", lower)
        object.__setattr__(self, "theta_upper", upper)
        if not self.theta_names:
            names = tuple(f"theta_{i + 1}" for i in range(lower.size))
            object.__setattr__(self, "theta_names", names)
        if self.theta_hat is not None:
            theta_hat = np.asarray(self.theta_hat, dtype=float).ravel()
            object.__setattr__(self, "theta_hat", theta_hat)

    @property
    def d(self) -> int:
        return sum(self.dims)

    @property
    def d1(self) -> int:
        return self.dims[0]

    @property
    def d2(self) -> int:
        return self.dims[1]

    @property
    def d3(self) -> int:
        return self.dims[2]

    @property
    def d4(self) -> int:
        return self.dims[3]

    @property
    def d12(self) -> int:
        return self.dims[0] + self.dims[1]

    @property
    def theta_dim(self) -> int:
        return self.theta_lower.size

    @property
    def is_explicit(self) -> bool:
        return isinstance(self.k, Explicit)

    def contains(self, theta: np.ndarray, tol: float = 1e-12) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(
            np.all(theta >= self.theta_lower - tol)
            and np.all(theta <= self.theta_upper + tol)
        )

    def g(self, u: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Moment functions at the rows of ``u``, shape ``(n, d)``."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        values = np.asarray(
            self.g_eval(u, np.asarray(theta, dtype=float), self.gamma),
            dtype=float,
        )
        if values.ndim != 2:
            values = values.reshape(u.shape[0], -1)
        if self._rows is not None:
            values = values[:, list(self._rows)]
        if values.shape[1] != self.d:
            raise ValueError(
                f"g_eval returned {values.shape[1]} columns, expected {self.d}."
            )
        return values

    def k_values(self, u: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """The explicit counterfactual integrand at the rows of ``u``."""
        if not isinstance(self.k, Explicit):
            raise ValueError("The counterfactual does not depend on u.")
        u = np.atleast_2d(np.asarray(u, dtype=float))
        values = self.k.function(u, np.asarray(theta, dtype=float), self.gamma)
        return np.asarray(values, dtype=float).reshape(u.shape[0])

    def k_implicit(self, theta: np.ndarray) -> float:
        if not isinstance(self.k, Implicit):
            raise ValueError("The counterfactual depends on u explicitly.")
        theta = np.asarray(theta, dtype=float)
        return float(self.k.function(theta, self.gamma))

    def pad(self, P: ReducedForm | np.ndarray) -> np.ndarray:
        """Extend ``P`` with zeros to length ``d`` (the g3, g4 targets)."""
        stacked = P.stacked if isinstance(P, ReducedForm) else np.asarray(P)
        stacked = np.asarray(stacked, dtype=float).ravel()
        if stacked.size != self.d12:
            raise ValueError(
                f"P has {stacked.size} entries but the model has "
                f"d1 + d2 = {self.d12} targeted rows."
            )
        return np.concatenate([stacked, np.zeros(self.d - self.d12)])

    def check_reduced_form(self, P: ReducedForm) -> None:
        if len(P.P1) != self.d1 or len(P.P2) != self.d2:
            raise ValueError(
                f"Reduced form has lengths ({len(P.P1)}, {len(P.P2)}), "
                f"expected ({self.d1}, {self.d2})."
            )

    def equalities_only(self) -> MomentModel:
        """The same model with the inequality blocks g1 and g3 dropped."""
        d1, d2, d3, d4 = self.dims
        base = self._rows if self._rows is not None else tuple(range(self.d))
        keep = list(range(d1, d1 + d2)) + list(
            range(d1 + d2 + d3, d1 + d2 + d3 + d4)
        )
        cells = self.cells
        if cells is not None:
            cells = CellStructure(cells.edges, cells.linear[keep])
        return dataclasses.replace(
            self,
            dims=(0, d2, 0, d4),
            cells=cells,
            _rows=tuple(base[i] for i in keep),
        )

    def with_counterfactual(self, k: CounterfactualKind) -> MomentModel:
        return dataclasses.replace(self, k=k)

    def with_box(self, lower, upper) -> MomentModel:
        return dataclasses.replace(self, theta_lower=lower, theta_upper=upper)


class ShapeRow(NamedTuple):
    """
    A shape restriction on the distribution of the unobservables.

    Parameters
    ----------
    kind : str
        ``"equality"`` for ``E[row(U)] = 0`` or ``"inequality"`` for
        ``E[row(U)] <= 0``.
    evaluate : callable
        Maps an ``(n, dim)`` array of ``u`` to ``n`` values.
    name : str
        Label for reporting.
    """

    kind: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    name: str = ""


class _AugmentedMoments:
    def __init__(
        self, model: MomentModel, inequalities: list, equalities: list
    ):
        self.model = model
        self.inequalities = inequalities
        self.equalities = equalities

    def __call__(self, u, theta, gamma):
        base = self.model.g(u, theta)
        d1, d2, d3, _ = self.model.dims
        cut = d1 + d2 + d3

        def extra(rows):
            if not rows:
                return np.empty((u.shape[0], 0))
            return np.column_stack([row.evaluate(u) for row in rows])

        return np.hstack(
            [
                base[:, :cut],
                extra(self.inequalities),
                base[:, cut:],
                extra(self.equalities),
            ]
        )


def append_shape_restrictions(
    model: MomentModel, rows: Sequence[ShapeRow]
) -> MomentModel:
    """
    Return a new model with extra shape restrictions on the unobservables.

    Inequality rows join g3, equality rows join g4; the values of existing
    rows are untouched. The closed-form cell structure and any analytic
    local-sensitivity overrides do not describe the new rows, so they are
    dropped from the returned model.

    Example
    -------
    .. code-block:: python

        from robust_counterfactuals import append_shape_restrictions
        from robust_counterfactuals.shapes import mean_zero

        normalised = append_shape_restrictions(model, mean_zero(2))
    """

    rows = list(rows)
    if not rows:
        return model
    for row in rows:
        if row.kind not in ("equality", "inequality"):
            raise ValueError(
                f"Shape rows are 'equality' or 'inequality', got {row.kind!r}."
            )
    inequalities = [row for row in rows if row.kind == "inequality"]
    equalities = [row for row in rows if row.kind == "equality"]
    d1, d2, d3, d4 = model.dims
    return dataclasses.replace(
        model,
        dims=(d1, d2, d3 + len(inequalities), d4 + len(equalities)),
        g_eval=_AugmentedMoments(model, inequalities, equalities),
        cells=None,
        jacobian=None,
        local_moments=None,
        _rows=None,
    )


class Target(NamedTuple):
    """
    A ready-to-solve analysis: a model, its targeted moments, and reference
    values for reporting.

    Parameters
    ----------
    label : str
        Short name of the counterfactual (used in output columns).
    model : MomentModel
        The model.
    reduced_form : ReducedForm
        The targeted moments ``P``.
    kappa_hat : float
        The counterfactual under the reference distribution.
    baseline : float, optional
        The pre-intervention value of the same quantity.
    """

    label: str
    model: MomentModel
    reduced_form: ReducedForm
    kappa_hat: float
    baseline: float | None = None


def register_model(name: str):
    """
    Use this decorator to register a builder ``builder(section) -> list of
    Target`` under ``name``, making it available to the command line.

    Example
    -------
    .. code-block:: python

        from robust_counterfactuals import register_model

        @register_model("my-model")
        def build(section):
            ...
            return [Target("my-counterfactual", model, P, kappa_hat)]
    """

    def decorator(builder):
        _ALL_MODELS[name] = builder
        return builder

    return decorator


def registered_models() -> list[str]:
    return list(_ALL_MODELS.keys())


def instantiate_model(name: str, section: dict[str, Any]) -> list[Target]:
    if name not in _ALL_MODELS:
        raise ValueError(
            f"Unknown model {name}. "
            f"Available models are: {list(_ALL_MODELS.keys())}. "
            "Did you forget to register your model using @register_model?"
        )
    return _ALL_MODELS[name](section)
