from . import ddc, entry_game
from .backends import Backend, register_backend
from .bounds import (
    BoundsCurve,
    BoundsRow,
    Case,
    SearchSettings,
    bounds_curve,
    criterion_lower,
    criterion_upper,
    extreme_counterfactuals,
    plugin_interval,
)
from .callbacks import Callback, Logging, Timing, time_block
from .config import RunConfig, load_config, make_engine
from .divergences import Divergence, instantiate_divergence, register_divergence
from .duality import (
    DualSolveResult,
    SolverSettings,
    Status,
    delta_star,
    linf_feasible,
    linf_lower,
    linf_upper,
    lower_dual,
    recover_density,
    upper_dual,
)
from .expectation import (
    ClosedFormEngine,
    GridEngine,
    MonteCarloEngine,
    PointEngine,
    expect,
    make_draws,
)
from .model import (
    Explicit,
    Implicit,
    MomentModel,
    ReducedForm,
    Target,
    append_shape_restrictions,
    instantiate_model,
    register_model,
)
from .sensitivity import (
    extrapolated_bounds,
    influence_values,
    sensitivity_explicit,
    sensitivity_implicit,
)

__version__ = "0.1.0"
__all__ = [
    "ddc",
    "entry_game",
    "Backend",
    "register_backend",
    "BoundsCurve",
    "BoundsRow",
    "Case",
    "SearchSettings",
    "bounds_curve",
    "criterion_lower",
    "criterion_upper",
    "extreme_counterfactuals",
    "plugin_interval",
    "Callback",
    "Logging",
    "Timing",
    "time_block",
    "RunConfig",
    "load_config",
    "make_engine",
    "Divergence",
    "instantiate_divergence",
    "register_divergence",
    "DualSolveResult",
    "SolverSettings",
    "Status",
    "delta_star",
    "linf_feasible",
    "linf_lower",
    "linf_upper",
    "lower_dual",
    "recover_density",
    "upper_dual",
    "ClosedFormEngine",
    "GridEngine",
    "MonteCarloEngine",
    "PointEngine",
    "expect",
    "make_draws",
    "Explicit",
    "Implicit",
    "MomentModel",
    "ReducedForm",
    "Target",
    "append_shape_restrictions",
    "instantiate_model",
    "register_model",
    "extrapolated_bounds",
    "influence_values",
    "sensitivity_explicit",
    "sensitivity_implicit",
]
