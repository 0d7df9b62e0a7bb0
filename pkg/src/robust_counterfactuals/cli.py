"""
Command line interface::

    robustcf curve --model entry-game --out bounds.csv --svg bounds.svg
    robustcf solve --model entry-game --delta 0.1
    robustcf feasible --model entry-game --theta -0.7 -0.9 0.8
    robustcf sensitivity --model ddc-kss

Every subcommand prints one ``key=value`` line per target. The exit code is
0 on success, 2 when a target is infeasible and 1 on error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import backend_for
from .bounds import bounds_curve, extreme_counterfactuals
from .callbacks import Flush, Logging, Timing
from .config import RunConfig, load_config, make_engine
from .duality import Status, delta_star
from .errors import RobustCounterfactualsError
from .expectation import ExpectationEngine
from .model import Target, instantiate_model
from .sensitivity import (
    SensitivityReport,
    extrapolated_bounds,
    sensitivity_explicit,
    sensitivity_implicit,
)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2

_FEASIBLE_TOL = 1e-6


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    if isinstance(value, np.ndarray):
        return ",".join(f"{float(v):.6g}" for v in value)
    return str(value)


def emit(**fields) -> None:
    """Print one machine-readable ``key=value`` line."""
    print(" ".join(f"{key}={_format(value)}" for key, value in fields.items()))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="registered model name")
    common.add_argument("--config", type=Path, help="YAML or JSON config file")
    common.add_argument("--target", help="only run the target with this label")
    common.add_argument("--seed", type=int, help="override the base seed")
    common.add_argument(
        "--workers",
        type=int,
        help="outer-search threads (default: $ROBUSTCF_WORKERS, then 1)",
    )
    common.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="-v for progress, -vv for solver diagnostics",
    )

    parser = argparse.ArgumentParser(
        prog="robustcf",
        description="Bounds on counterfactuals over neighbourhoods of a "
        "reference distribution of unobservables.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    curve = commands.add_parser(
        "curve", parents=[common], help="bounds over a grid of deltas"
    )
    curve.add_argument(
        "--delta", type=float, nargs="+", help="override the delta grid"
    )
    curve.add_argument("--out", type=Path, help="results file (.csv/.json)")
    curve.add_argument("--svg", type=Path, help="figure path")

    solve = commands.add_parser(
        "solve", parents=[common], help="bounds at a single delta"
    )
    solve.add_argument("--delta", type=float, required=True)

    feasible = commands.add_parser(
        "feasible", parents=[common], help="minimal divergence at theta"
    )
    feasible.add_argument(
        "--theta", type=float, nargs="+", help="defaults to the estimate"
    )
    feasible.add_argument(
        "--delta",
        type=float,
        help="report feasibility for this neighbourhood size",
    )

    commands.add_parser(
        "sensitivity", parents=[common], help="local sensitivity s_hat"
    )
    return parser


def _configure_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s"
    )


def _workers(args: argparse.Namespace, config: RunConfig) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("ROBUSTCF_WORKERS")
    if env:
        try:
            return int(env)
        except ValueError:
            logger.warning("ignoring non-integer ROBUSTCF_WORKERS=%r", env)
    return config.search.workers


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config, args.model)
    search = dataclasses.replace(config.search, workers=_workers(args, config))
    config = dataclasses.replace(config, search=search)
    if args.seed is not None:
        config = dataclasses.replace(
            config,
            seed=args.seed,
            search=dataclasses.replace(config.search, seed=args.seed),
        )
    return config


def _targets(args: argparse.Namespace, config: RunConfig) -> list[Target]:
    targets = instantiate_model(config.model, config.section)
    if args.target is None:
        return targets
    chosen = [t for t in targets if t.label == args.target]
    if not chosen:
        raise ValueError(
            f"Unknown target {args.target}. "
            f"Available targets are: {[t.label for t in targets]}."
        )
    return chosen


def target_sensitivity(
    target: Target, engine: ExpectationEngine
) -> SensitivityReport:
    """Local sensitivity of a target at its estimate."""
    model = target.model.equalities_only()
    P2 = target.reduced_form.P2
    if model.is_explicit:
        return sensitivity_explicit(model, model.theta_hat, engine, P2)
    return sensitivity_implicit(model, model.theta_hat, engine, P2)


def _svg_path(svg: Path, label: str, many: bool) -> Path:
    if not many:
        return svg
    return svg.with_name(f"{svg.stem}_{label}{svg.suffix}")


def cmd_curve(args: argparse.Namespace, config: RunConfig) -> int:
    from .plotting import plot_bounds

    deltas = tuple(args.delta) if args.delta else config.deltas
    if any(d <= 0 for d in deltas) or any(
        b <= a for a, b in zip(deltas, deltas[1:])
    ):
        raise ValueError("--delta must be positive and strictly increasing.")

    out = args.out or Path(config.output.get("csv") or "bounds.csv")
    svg = args.svg or config.output.get("svg")
    svg = Path(svg) if svg else None
    targets = _targets(args, config)

    flush = Flush(out)
    callbacks = [Logging(verbose=args.verbose > 0), Timing(), flush]
    records = []
    for target in targets:
        engine = make_engine(config, target.model)
        curve = bounds_curve(
            target.model,
            engine,
            config.divergence,
            target.reduced_form,
            deltas,
            search=config.search,
            solver=config.solver,
            callbacks=callbacks,
            target=target.label,
        )

        extrapolated = None
        try:
            report = target_sensitivity(target, engine)
            extrapolated = extrapolated_bounds(
                target.kappa_hat, report.s_hat, deltas
            )
        except (RobustCounterfactualsError, ValueError) as error:
            logger.warning(
                "no sensitivity extrapolation for %s: %s", target.label, error
            )
        records.extend(curve.records(extrapolated))

        if svg is not None:
            plot_bounds(
                curve,
                _svg_path(svg, target.label, len(targets) > 1),
                kappa_hat=target.kappa_hat,
                baseline=target.baseline,
                extrapolated=extrapolated,
                title=target.label,
            )
        last = curve.rows[-1]
        emit(
            target=target.label,
            rows=len(curve.rows),
            delta=last.delta,
            kappa_lower=last.kappa_lower,
            kappa_upper=last.kappa_upper,
            out=out,
        )

    backend_for(out).write(out, records)
    return EXIT_OK


def cmd_solve(args: argparse.Namespace, config: RunConfig) -> int:
    code = EXIT_OK
    for target in _targets(args, config):
        engine = make_engine(config, target.model)
        extremes = extreme_counterfactuals(
            target.model,
            engine,
            config.divergence,
            target.reduced_form,
            args.delta,
            config.search,
            config.solver,
        )
        lower, upper = extremes.lower, extremes.upper
        emit(
            target=target.label,
            delta=args.delta,
            kappa_lower=lower.value,
            kappa_upper=upper.value,
            case_lower=lower.case,
            case_upper=upper.case,
            status_lower=lower.status,
            status_upper=upper.status,
        )
        if not (lower.feasible or upper.feasible):
            code = EXIT_INFEASIBLE
    return code


def cmd_feasible(args: argparse.Namespace, config: RunConfig) -> int:
    code = EXIT_OK
    for target in _targets(args, config):
        model = target.model
        theta = model.theta_hat if args.theta is None else args.theta
        theta = np.asarray(theta, dtype=float)
        engine = make_engine(config, model)
        result = delta_star(
            model,
            theta,
            engine,
            config.divergence,
            target.reduced_form,
            config.solver,
        )
        limit = _FEASIBLE_TOL if args.delta is None else args.delta
        feasible = (
            result.status != Status.UNBOUNDED
            and math.isfinite(result.value)
            and result.value <= limit
        )
        emit(
            target=target.label,
            theta=theta,
            delta_star=result.value,
            status="feasible" if feasible else "infeasible",
            solver_status=result.status,
        )
        if not feasible:
            code = EXIT_INFEASIBLE
    return code


def cmd_sensitivity(args: argparse.Namespace, config: RunConfig) -> int:
    for target in _targets(args, config):
        engine = make_engine(config, target.model)
        report = target_sensitivity(target, engine)
        emit(
            target=target.label,
            kappa_hat=report.kappa_hat,
            s_hat=report.s_hat,
            ridge=report.ridge,
        )
    return EXIT_OK


_COMMANDS = {
    "curve": cmd_curve,
    "solve": cmd_solve,
    "feasible": cmd_feasible,
    "sensitivity": cmd_sensitivity,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        config = _resolve_config(args)
        return _COMMANDS[args.command](args, config)
    except (RobustCounterfactualsError, ValueError) as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
