import math

import numpy as np
import pytest
from scipy.special import erf, ndtr

from mrbsde.exceptions import InvalidFixture, OutOfRange
from mrbsde.problem import Affine, AssumptionConstants, DriverSpec, LossSpec, ProblemSpec, TerminalSpec
from mrbsde.reference import (
    Example46,
    erf_series,
    example46_mean,
    example46_problem,
    example46_solution,
    linear_loss_simple_oracle,
    mean_comparison_fixture,
    overlap_probability,
)
from mrbsde.simulation import build_grid


def test_example46_scenario_one():
    Y, Z, K = example46_solution(Example46.ONE, 0.25, 1.0, 1.0)
    assert (Y, Z, K) == (1.0 + 2.0 - 0.5, 2.0, 0.25)


def test_example46_scenario_two():
    Y, Z, K = example46_solution(Example46.TWO, 0.25, 1.0, 1.0)
    assert Y == pytest.approx(1.5 + max(2 - 0.625, 1.5 - 0.375))
    assert Z == 3.0 and K == 0.25
    assert example46_solution(Example46.TWO, 0.8, 0.0, 1.0)[2] == 0.5


def test_example46_terminal_matches_xi():
    b = np.linspace(-2, 2, 9)
    for sc, scale in ((Example46.ONE, 1.0), (Example46.TWO, 1.5)):
        np.testing.assert_allclose(example46_solution(sc, 1.0, b, 1.0)[0], scale * b * b)
        assert example46_problem(sc).terminal.scale == scale


def test_example46_mean_is_saturated_then_slack():
    t = np.linspace(0, 1, 11)
    np.testing.assert_allclose(example46_mean(Example46.ONE, t, 1.0), 2 - t)
    slack = example46_mean(Example46.TWO, t, 1.0) - (2 - t)
    np.testing.assert_allclose(slack, np.maximum(1.5 - (2 - t), 0.0), atol=1e-15)


def test_example46_rejects_out_of_range():
    with pytest.raises(OutOfRange):
        example46_solution(Example46.ONE, 1.5, 0.0, 1.0)


def test_erf_series_against_library():
    for x in (0.0, 0.1, 0.5, 1 / math.sqrt(2), 1.0, 2.0):
        assert erf_series(x) == pytest.approx(erf(x), abs=1e-12)


def test_overlap_probability():
    p = overlap_probability(0.25, 1.0)
    assert p == pytest.approx(2 * ndtr(1.0) - 1, abs=1e-12)
    assert p == pytest.approx(0.68269, abs=5e-6)
    for t in (0.0, 0.6):
        with pytest.raises(OutOfRange):
            overlap_probability(t, 1.0)


def test_overlap_probability_monte_carlo():
    b = np.random.default_rng(1).standard_normal(400_000) * math.sqrt(0.25)
    assert np.mean(b * b < 0.25) == pytest.approx(overlap_probability(0.25, 1.0), abs=0.003)


def test_linear_oracle_constant_driver():
    grid = build_grid(1.0, 4)
    res = linear_loss_simple_oracle(1.0, 0.5, Affine(2.5, -1.0), grid)
    t = grid.nodes
    mean_x = 1.0 + 0.5 * (1 - t)
    shifts = np.maximum(2.5 - t - mean_x, 0.0)
    np.testing.assert_allclose(res.terminal_sup, shifts.max())
    np.testing.assert_allclose(res.K, shifts.max() - np.maximum.accumulate(shifts[::-1])[::-1])
    assert np.all(res.mean_y >= 2.5 - t - 1e-15)


def test_linear_oracle_inactive():
    grid = build_grid(1.0, 4)
    res = linear_loss_simple_oracle(0.0, 0.25, -10.0, grid)
    np.testing.assert_allclose(res.K, 0.0)
    np.testing.assert_allclose(res.mean_y, 0.25 * (1 - grid.nodes))


def _base(loss=LossSpec.linear(0.0), driver=DriverSpec(gamma=0.5), C=1.0):
    return ProblemSpec(TerminalSpec.clipped_polynomial((0.0, 1.0)), driver, loss, 1.0, AssumptionConstants(10.0, 1.0, C))


def test_mean_comparison_fixture():
    hi, lo = mean_comparison_fixture(_base(), 0.2, 0.0)
    b = np.array([-1.0, 0.0, 3.0])
    np.testing.assert_allclose(hi.terminal.evaluate(b) - lo.terminal.evaluate(b), 0.2)
    assert hi.driver == lo.driver and hi.loss == lo.loss


@pytest.mark.parametrize("kwargs,c1,c2", [
    ({}, 0.0, 0.2),
    (dict(loss=LossSpec.piecewise_linear(2.0, 1.0), C=2.0), 0.2, 0.0),
    (dict(driver=DriverSpec(alpha=0.5)), 0.2, 0.0),
])
def test_mean_comparison_fixture_errors(kwargs, c1, c2):
    with pytest.raises(InvalidFixture):
        mean_comparison_fixture(_base(**kwargs), c1, c2)
