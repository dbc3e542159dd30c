import numpy as np
import pytest

from datarecon.errors import NumericalError
from datarecon.gradpen import penalty
from datarecon.linear import (check_stationarity, construct_collapse, construct_interpolating_inputs,
                              push_to_margin, underdetermination_report)
from datarecon.metrics import nearest_neighbors
from datarecon.model import Dataset, LossSpec, ModelSpec, ParamVector, forward
from datarecon.trainer import TrainConfig, train


def test_stationarity_after_mse_training(gen):
    x, y = gen.uniform(size=(10, 3)), gen.choice([-1.0, 1.0], 10)
    data = Dataset(x, y)
    rep = train(ModelSpec.affine(3), data, LossSpec("mse", 0.0), TrainConfig(lr=0.1, grad_tol=1e-10))
    assert check_stationarity(data, rep.theta_star, LossSpec("mse")) <= 1e-6


def test_stationarity_zero_at_perfect_fit(gen):
    theta = gen.normal(size=4)
    x = gen.uniform(size=(3, 3))
    y = np.hstack([x, np.ones((3, 1))]) @ theta
    assert check_stationarity(Dataset(x, y), theta, LossSpec("mse")) <= 1e-14


def test_stationarity_random_theta_matches_assembled_expression(gen):
    theta = gen.normal(size=4)
    x, y = gen.uniform(size=(5, 3)), gen.choice([-1.0, 1.0], 5)
    xb = np.hstack([x, np.ones((5, 1))])
    z = xb @ theta
    expected = np.linalg.norm(xb.T @ (-y * (1 - 1 / (1 + np.exp(-y * z)))) / 5)
    got = check_stationarity(Dataset(x, y), theta, LossSpec("logistic"))
    assert got > 0 and got == pytest.approx(expected, rel=1e-12)


def test_stationarity_rejects_non_affine():
    spec = ModelSpec.one_hidden(2, 2)
    with pytest.raises(ValueError):
        check_stationarity(Dataset(np.zeros((1, 2)), [1.0]), ParamVector(spec), LossSpec())


def test_underdetermination_counts(gen):
    rep = underdetermination_report(100, 3072, 1)
    assert (rep.n_equations, rep.n_unknowns) == (100, 307200)
    rep = underdetermination_report(1, 1, 1)
    assert (rep.n_equations, rep.n_unknowns) == (1, 1)
    data = Dataset(gen.uniform(size=(5, 8)), np.ones(5))
    rep = underdetermination_report(5, 8, 1, data)
    assert rep.kernel_dim_lower_bound == 0 and rep.rank == 5
    tall = Dataset(gen.uniform(size=(9, 2)), np.ones(9))
    assert underdetermination_report(9, 2, 1, tall).kernel_dim_lower_bound == 6


def test_interpolating_coordinate_case():
    x = construct_interpolating_inputs(np.array([1.0, 0.0, 0.0, 0.0]), np.array([1.0, -1.0]))
    np.testing.assert_array_equal(x, [[1, 0, 0], [-1, 0, 0]])


def test_interpolating_exact_fit_and_zero_penalty(gen):
    for _ in range(20):
        theta = gen.normal(size=17)
        y = gen.normal(size=4)
        offset = gen.normal(size=(4, 16))
        for off in (None, offset):
            x = construct_interpolating_inputs(theta, y, off)
            fit = np.hstack([x, np.ones((4, 1))]) @ theta
            assert np.max(np.abs(fit - y)) <= 1e-12
            assert penalty(ModelSpec.affine(16), theta, Dataset(x, y), LossSpec("mse")) <= 1e-12


def test_interpolating_degenerate_weights():
    theta = np.array([0.0, 0.0, 0.5])
    assert np.all(construct_interpolating_inputs(theta, np.array([0.5, 0.5])) == 0)
    with pytest.raises(ValueError):
        construct_interpolating_inputs(theta, np.array([1.0]))


def test_collapse_along_weight_direction(affine_fixture):
    fx = affine_fixture
    w = fx.theta_star[:-1]
    x = push_to_margin(fx.spec, fx.theta_star, 0.5 + 0.0 * w, 1.0, 20.0)
    for n in (1, 12):
        data = construct_collapse(x, fx.spec, fx.theta_star, 1.0, n, LossSpec("logistic", 0.0))
        assert data.n == n and data.meta["penalty"] <= 1e-12
        assert forward(fx.spec, fx.theta_star, data.inputs[:1])[0] >= 20.0


def test_collapse_from_holdout_image(affine_fixture):
    fx = affine_fixture
    x = push_to_margin(fx.spec, fx.theta_star, fx.holdout.inputs[0], fx.holdout.labels[0])
    data = construct_collapse(x, fx.spec, fx.theta_star, fx.holdout.labels[0], 12)
    assert nearest_neighbors(data.inputs[:1], fx.train.inputs)[0].l2 > 0


def test_collapse_rejects_low_margin(affine_fixture):
    fx = affine_fixture
    with pytest.raises(ValueError, match="margin"):
        construct_collapse(fx.train.inputs[0], fx.spec, fx.theta_star, fx.train.labels[0], 3)


def test_collapse_never_returns_unverified_dataset(affine_fixture):
    # with weight decay the rho*theta term alone exceeds the bound
    fx = affine_fixture
    x = push_to_margin(fx.spec, fx.theta_star, fx.holdout.inputs[0], fx.holdout.labels[0])
    with pytest.raises(NumericalError):
        construct_collapse(x, fx.spec, fx.theta_star, fx.holdout.labels[0], 12, fx.loss)


def test_push_to_margin_nonlinear(onehidden_fixture, gen):
    fx = onehidden_fixture
    x = push_to_margin(fx.spec, fx.theta_star, gen.uniform(size=fx.spec.input_dim), -1.0, 20.0)
    assert -forward(fx.spec, fx.theta_star, x[None])[0] >= 20.0
