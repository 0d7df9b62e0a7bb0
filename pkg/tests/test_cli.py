import numpy as np
import pytest
from robust_counterfactuals.backends import backend_for
from robust_counterfactuals.cli import (
    EXIT_ERROR,
    EXIT_INFEASIBLE,
    EXIT_OK,
    _resolve_config,
    build_parser,
    main,
)
from robust_counterfactuals.model import (
    Explicit,
    MomentModel,
    ReducedForm,
    Target,
    register_model,
)


@register_model("toy")
def toy_targets(section):
    """E[U - theta] = 0 with k(u) = u^2 under N(0, 1): kappa_hat = 1"""
    model = MomentModel(
        dims=(0, 1, 0, 0),
        g_eval=lambda u, theta, gamma: u[:, :1] - theta[0],
        k=Explicit(lambda u, theta, gamma: u[:, 0] ** 2),
        theta_lower=[-0.5],
        theta_upper=[0.5],
        u_dim=1,
        theta_names=("mu",),
        theta_hat=[0.0],
    )
    P = ReducedForm(np.empty(0), np.zeros(1))
    return [Target("second_moment", model, P, 1.0, 1.0)]


CONFIG = """\
model: toy
deltas: [0.05, 0.1]
engine:
  kind: grid
  grid: {per_axis: 40, half_width: 6.0}
search: {n_starts: 4, n_local: 1, max_evals: 40}
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "toy.yaml"
    path.write_text(CONFIG)
    return str(path)


def fields(line):
    return dict(item.split("=", 1) for item in line.split())


def test_curve(config, tmp_path, capsys):
    out, svg = tmp_path / "out" / "bounds.csv", tmp_path / "bounds.svg"
    code = main(
        ["curve", "--config", config, "--out", str(out), "--svg", str(svg)]
    )
    assert code == EXIT_OK

    (line,) = capsys.readouterr().out.strip().splitlines()
    printed = fields(line)
    assert printed["target"] == "second_moment"
    assert printed["rows"] == "2"
    assert float(printed["kappa_lower"]) < 1.0 < float(printed["kappa_upper"])

    records = backend_for(out).read(out)
    assert [r["delta"] for r in records] == [0.05, 0.1]
    assert {"theta_lower_1", "extrap_lower", "extrap_upper"} <= set(records[0])
    assert svg.read_text().lstrip().startswith("<?xml")


def test_curve_rejects_bad_grid(config, tmp_path, capsys):
    out = tmp_path / "bounds.csv"
    args = ["curve", "--config", config, "--delta", "0.2", "0.1"]
    code = main(args + ["--out", str(out)])
    assert code == EXIT_ERROR
    assert "error:" in capsys.readouterr().err
    assert not out.exists()

    empty = tmp_path / "empty.yaml"
    empty.write_text(CONFIG.replace("[0.05, 0.1]", "[]"))
    code = main(["curve", "--config", str(empty), "--out", str(out)])
    assert code == EXIT_ERROR
    assert "delta grid is empty" in capsys.readouterr().err
    assert not out.exists()


def test_solve(config, capsys):
    assert main(["solve", "--config", config, "--delta", "0.1"]) == EXIT_OK
    printed = fields(capsys.readouterr().out.strip())
    assert printed["delta"] == "0.1"
    assert float(printed["kappa_lower"]) < 1.0 < float(printed["kappa_upper"])
    assert printed["case_lower"] in ("strict", "knife-edge")


def test_feasible(config, capsys):
    """Shifting the mean by theta costs theta^2 / 2 in KL"""

    assert main(["feasible", "--config", config, "--theta", "0.0"]) == EXIT_OK
    printed = fields(capsys.readouterr().out.strip())
    assert printed["status"] == "feasible"
    assert float(printed["delta_star"]) < 1e-6

    code = main(
        ["feasible", "--config", config, "--theta", "0.3", "--delta", "0.01"]
    )
    assert code == EXIT_INFEASIBLE
    printed = fields(capsys.readouterr().out.strip())
    assert printed["status"] == "infeasible"
    assert float(printed["delta_star"]) == pytest.approx(0.045, abs=1e-3)


def test_sensitivity(config, capsys):
    """With a free location, s = 2 Var(U^2) = 4"""

    assert main(["sensitivity", "--config", config]) == EXIT_OK
    printed = fields(capsys.readouterr().out.strip())
    assert float(printed["kappa_hat"]) == pytest.approx(1.0, abs=1e-3)
    assert float(printed["s_hat"]) == pytest.approx(4.0, abs=0.05)
    assert printed["ridge"] == "False"


def test_errors(config, capsys):
    assert main(["solve", "--model", "missing", "--delta", "0.1"]) == EXIT_ERROR
    assert "Unknown model" in capsys.readouterr().err

    code = main(["sensitivity", "--config", config, "--target", "other"])
    assert code == EXIT_ERROR
    assert "second_moment" in capsys.readouterr().err

    with pytest.raises(SystemExit):
        main(["solve", "--config", config])


def test_workers_and_seed(config, monkeypatch):
    parser = build_parser()

    monkeypatch.setenv("ROBUSTCF_WORKERS", "3")
    base = ["solve", "--config", config, "--delta", "0.1"]
    resolved = _resolve_config(parser.parse_args(base))
    assert resolved.search.workers == 3

    args = parser.parse_args(base + ["--workers", "2", "--seed", "11"])
    resolved = _resolve_config(args)
    assert resolved.search.workers == 2
    assert resolved.seed == resolved.search.seed == 11
