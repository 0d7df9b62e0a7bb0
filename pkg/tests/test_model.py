import numpy as np
import pytest
import robust_counterfactuals  # noqa: F401  (registers the reference models)
from robust_counterfactuals.model import (
    Explicit,
    Implicit,
    MomentModel,
    Multipliers,
    ReducedForm,
    ShapeRow,
    append_shape_restrictions,
    instantiate_model,
    lambda12,
    registered_models,
    stack_lambda,
)
from robust_counterfactuals.shapes import (
    covariance_bound,
    identity_covariance,
    interquantile,
    mean_zero,
    median_zero,
    smoothness_band,
    unit_variance,
)


def four_blocks(u, theta, gamma):
    """Columns (g1, g2, g3, g4) = (u, 2u, 3u, 4u)"""
    return u[:, :1] * np.array([1.0, 2.0, 3.0, 4.0])


def block_model(**kwargs):
    return MomentModel(
        dims=(1, 1, 1, 1),
        g_eval=four_blocks,
        k=Explicit(lambda u, theta, gamma: u[:, 0]),
        theta_lower=[0.0, -1.0],
        theta_upper=[1.0, 1.0],
        u_dim=1,
        **kwargs,
    )


U = np.array([[1.0], [-2.0]])


def test_multipliers():
    m = Multipliers.from_stacked([1.0, 2.0, 3.0, 4.0], (1, 1, 1, 1), eta=0.5)
    assert m.dims == (1, 1, 1, 1)
    assert np.array_equal(stack_lambda(m), [1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(lambda12(m), [1.0, 2.0])
    assert m == Multipliers.from_stacked(stack_lambda(m), m.dims, eta=0.5)
    assert Multipliers.zeros((2, 0, 1, 0)).dims == (2, 0, 1, 0)

    with pytest.raises(ValueError, match="lambda1 must be nonnegative"):
        Multipliers.from_stacked([-1.0, 0, 0, 0], (1, 1, 1, 1))
    with pytest.raises(ValueError, match="eta must be nonnegative"):
        Multipliers.from_stacked([0, 0, 0, 0], (1, 1, 1, 1), eta=-1.0)
    with pytest.raises(ValueError, match="Expected 4 multipliers"):
        Multipliers.from_stacked([0.0], (1, 1, 1, 1))


def test_model_validation():
    with pytest.raises(ValueError, match="four counts"):
        MomentModel(
            dims=(1, 1),
            g_eval=four_blocks,
            k=Explicit(lambda u, theta, gamma: u[:, 0]),
            theta_lower=[0.0],
            theta_upper=[1.0],
            u_dim=1,
        )
    with pytest.raises(ValueError, match="must not exceed"):
        block_model().with_box([1.0, 0.0], [0.0, 1.0])


def test_model_properties():
    model = block_model()
    assert (model.d, model.d12, model.theta_dim) == (4, 2, 2)
    assert model.theta_names == ("theta_1", "theta_2")
    assert model.is_explicit
    assert model.contains([0.5, 0.0])
    assert not model.contains([1.5, 0.0])
    assert np.array_equal(model.g(U, [0.5, 0.0])[:, 3], [4.0, -8.0])
    assert np.array_equal(model.k_values(U, [0.5, 0.0]), [1.0, -2.0])

    with pytest.raises(ValueError, match="depends on u explicitly"):
        model.k_implicit([0.5, 0.0])


def test_column_mismatch():
    model = MomentModel(
        dims=(0, 3, 0, 0),
        g_eval=four_blocks,
        k=Explicit(lambda u, theta, gamma: u[:, 0]),
        theta_lower=[0.0],
        theta_upper=[1.0],
        u_dim=1,
    )
    with pytest.raises(ValueError, match="expected 3"):
        model.g(U, [0.5])


def test_targets():
    model = block_model()
    P = ReducedForm(np.array([0.1]), np.array([0.2]))
    assert np.array_equal(model.pad(P), [0.1, 0.2, 0.0, 0.0])
    assert np.array_equal(model.pad([0.1, 0.2]), [0.1, 0.2, 0.0, 0.0])
    with pytest.raises(ValueError, match="targeted rows"):
        model.pad([0.1])
    with pytest.raises(ValueError, match="Reduced form has lengths"):
        model.check_reduced_form(ReducedForm(np.empty(0), np.array([0.2])))


def test_equalities_only():
    model = block_model().equalities_only()
    assert model.dims == (0, 1, 0, 1)
    assert np.array_equal(model.g(U, [0.5, 0.0]), [[2.0, 4.0], [-4.0, -8.0]])


def test_implicit_counterfactual():
    model = block_model().with_counterfactual(
        Implicit(lambda theta, gamma: theta[0] + theta[1])
    )
    assert not model.is_explicit
    assert model.k_implicit([0.25, 0.5]) == 0.75
    with pytest.raises(ValueError, match="does not depend on u"):
        model.k_values(U, [0.25, 0.5])


def test_append_shape_restrictions():
    model = block_model()
    rows = mean_zero(1) + covariance_bound([2.0])
    augmented = append_shape_restrictions(model, rows)

    assert augmented.dims == (1, 1, 2, 2)
    g = augmented.g(U, [0.5, 0.0])
    # g3 then the bound, g4 then the mean
    assert np.array_equal(g[0], [1.0, 2.0, 3.0, -1.0, 4.0, 1.0])
    assert np.array_equal(g[1], [-2.0, -4.0, -6.0, 2.0, -8.0, -2.0])
    assert append_shape_restrictions(model, []) is model

    with pytest.raises(ValueError, match="'equality' or 'inequality'"):
        append_shape_restrictions(model, [ShapeRow("maybe", len)])


def test_shape_rows():
    u = np.array([[-1.0, 2.0], [0.5, 0.0]])

    median = median_zero(2)
    assert np.array_equal(median[0].evaluate(u), [0.5, -0.5])

    variance = unit_variance(2)
    assert np.array_equal(variance[1].evaluate(u), [3.0, -1.0])

    covariance = identity_covariance(3)
    assert len(covariance) == 6
    assert all(row.kind == "equality" for row in covariance)
    assert np.array_equal(identity_covariance(2)[1].evaluate(u), [-2.0, 0.0])

    (spread,) = interquantile(0, 1.0, 0.5)
    assert np.array_equal(spread.evaluate(u), [-0.5, 0.5])
    with pytest.raises(ValueError, match="a must be positive"):
        interquantile(0, 0.0, 0.5)

    bands = smoothness_band(0, [-2.0, 0.0, 2.0], 0.6)
    assert [row.kind for row in bands] == ["inequality", "inequality"]
    assert np.allclose(bands[0].evaluate(u), [0.4, -0.6])
    with pytest.raises(ValueError, match="strictly increasing"):
        smoothness_band(0, [1.0, 0.0], 0.6)


def test_model_registry():
    assert {"entry-game", "ddc-kss"} <= set(registered_models())
    with pytest.raises(ValueError, match="Did you forget to register"):
        instantiate_model("un-registered", {})
