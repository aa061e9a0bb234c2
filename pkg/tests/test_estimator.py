import numpy as np
import pytest
from sklearn.base import clone

from mrbsde.estimator import MeanReflectedBSDE
from mrbsde.problem import Affine, AssumptionConstants, DriverSpec, LossSpec, ProblemSpec, TerminalSpec
from mrbsde.reference import Example46, example46_problem
from mrbsde.simulation import build_grid, simulate_brownian


def test_params_round_trip():
    est = MeanReflectedBSDE(example46_problem(Example46.ONE), n_paths=1000, picard_tol=1e-3)
    params = est.get_params()
    assert params["n_paths"] == 1000 and params["picard_tol"] == 1e-3
    assert clone(est).get_params()["mode"] == "adaptive"
    est.set_params(windows=2)
    assert est.solver_config().windows == 2


def test_fit_simulates_and_predicts():
    est = MeanReflectedBSDE(example46_problem(Example46.TWO), n_steps=16, n_paths=20000, random_state=3).fit()
    assert est.accepted_
    assert est.predict().shape == (17,)
    np.testing.assert_allclose(est.K_, np.minimum(est.times_, 0.5), atol=0.03)


def test_fit_on_given_ensemble_matches_global(small_ensemble):
    spec = ProblemSpec(TerminalSpec.clipped_polynomial((0.0, 1.0)), DriverSpec(alpha=0.5, gamma=0.5),
                       LossSpec.linear(Affine(0.5, -0.5)), 1.0, AssumptionConstants(10.0, 1.0))
    est = MeanReflectedBSDE(spec, check_determinism=True).fit(small_ensemble)
    assert len(est.traces_) >= 1
    assert est.k_determinism_.passed()
    assert est.y_samples_.shape == (17, small_ensemble.M)


def test_input_validation(small_ensemble):
    with pytest.raises(TypeError):
        MeanReflectedBSDE(None).fit()
    with pytest.raises(TypeError):
        MeanReflectedBSDE(example46_problem(Example46.ONE)).fit(np.zeros((3, 3)))
    other = simulate_brownian(build_grid(2.0, 4), 10)
    with pytest.raises(ValueError):
        MeanReflectedBSDE(example46_problem(Example46.ONE)).fit(other)
    with pytest.raises(ValueError):
        MeanReflectedBSDE(example46_problem(Example46.ONE), method="fast").fit(small_ensemble)


def test_predict_before_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        MeanReflectedBSDE(example46_problem(Example46.ONE)).predict()
