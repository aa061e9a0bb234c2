import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrbsde.exceptions import BracketFailure
from mrbsde.problem import Affine, LossSpec
from mrbsde.reference import Example46, example46_mean, example46_solution
from mrbsde.reflection import (
    CompensatorPath,
    ReflectionInput,
    compute_K,
    compute_Lt,
    constraint_margin,
    flatness_integral,
)
from mrbsde.simulation import build_grid

PIECEWISE = LossSpec.piecewise_linear(2.0, 1.0)
LOSSES = [LossSpec.linear(0.5), PIECEWISE, LossSpec.piecewise_linear(1.0, 3.0, 0.25)]


def test_linear_shift_examples():
    loss = LossSpec.linear(3.0)
    assert compute_Lt(loss, 0.0, np.array([4.0, 6.0])) == 0.0
    assert compute_Lt(loss, 0.0, np.array([1.0, 3.0])) == 1.0


def _scan_oracle(loss, samples, step=1e-6, upper=4.0):
    xs = np.arange(0.0, upper, step)
    means = np.mean(loss.value(0.0, xs[:, None] + samples[None, :]), axis=1)
    return xs[np.argmax(means >= 0.0)]


def test_piecewise_bisection_matches_scan():
    samples = np.array([-4.0, 1.0])
    x = compute_Lt(PIECEWISE, 0.0, samples)
    assert x == pytest.approx(_scan_oracle(PIECEWISE, samples), abs=2e-6)
    assert x == pytest.approx(2.0 / 3.0, abs=1e-8)


def test_bracket_failure():
    with pytest.raises(BracketFailure):
        compute_Lt(PIECEWISE, 0.0, np.array([-1e10]))


@settings(max_examples=100, deadline=None)
@given(k=st.integers(0, 2), seed=st.integers(0, 2**31), shift=st.floats(-3, 3))
def test_shift_is_minimal(k, seed, shift):
    loss, tol = LOSSES[k], 1e-8
    X = np.random.default_rng(seed).standard_normal(64) + shift
    x = compute_Lt(loss, 0.0, X, tol)
    slope = loss.C_lip
    assert np.mean(loss.value(0.0, x + X)) >= -slope * tol
    if x > 2 * tol:
        assert np.mean(loss.value(0.0, max(x - 2 * tol, 0.0) + X)) < 0


@settings(max_examples=100, deadline=None)
@given(k=st.integers(0, 2), seed=st.integers(0, 2**31), bump=st.floats(0, 2))
def test_shift_is_monotone(k, seed, bump):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal(64) - 1.0
    Y = X + bump * rng.random(64)
    assert compute_Lt(LOSSES[k], 0.0, Y) <= compute_Lt(LOSSES[k], 0.0, X) + 1e-8


@settings(max_examples=100, deadline=None)
@given(k=st.integers(0, 2), seed=st.integers(0, 2**31))
def test_mean_lipschitz(k, seed):
    loss, tol = LOSSES[k], 1e-8
    rng = np.random.default_rng(seed)
    X = rng.standard_normal(64) - 1.0
    Y = X + rng.standard_normal(64)
    C = loss.mean_lipschitz
    diff = abs(compute_Lt(loss, 0.0, X, tol) - compute_Lt(loss, 0.0, Y, tol))
    assert diff <= C * np.mean(np.abs(X - Y)) + 2 * tol


def test_zero_shifts_give_zero_K():
    grid = build_grid(1.0, 8)
    K = compute_K(LossSpec.linear(-1.0), ReflectionInput.from_grid(grid, np.zeros((9, 10))))
    assert np.all(K.values == 0.0) and K.terminal_sup == 0.0


def _exact_x(scenario, grid, ensemble):
    """Unreflected solution ``E_t[xi]`` from the Gaussian law."""
    scale = 1.0 if scenario is Example46.ONE else 1.5
    b = ensemble.states[:, :, 0].T
    return scale * (b * b + (grid.T - grid.nodes)[:, None])


@pytest.mark.parametrize("scenario", list(Example46))
def test_example46_compensator(scenario, grid64, ensemble):
    X = _exact_x(scenario, grid64, ensemble)
    K = compute_K(LossSpec.linear(Affine(2.0, -1.0)), ReflectionInput.from_grid(grid64, X))
    expected = grid64.nodes if scenario is Example46.ONE else np.minimum(grid64.nodes, 0.5)
    np.testing.assert_allclose(K.values, expected, atol=0.02)
    assert K.values[0] == 0.0
    assert np.all(np.diff(K.values) >= 0)
    np.testing.assert_array_equal(K.suffix_sup, K.terminal_sup - K.values)


def test_K_examples_are_exact_for_exact_means():
    grid = build_grid(1.0, 8)
    t = grid.nodes
    means = np.column_stack([1.0 + 0 * t, 1.0 + 0 * t])  # E[X_t] = T
    K = compute_K(LossSpec.linear(Affine(2.0, -1.0)), ReflectionInput(t, means))
    np.testing.assert_allclose(K.values, t, atol=1e-15)
    np.testing.assert_allclose(K.shifts, 1.0 - t, atol=1e-15)


def test_flatness_examples(grid64):
    loss = LossSpec.linear(Affine(2.0, -1.0))
    t = grid64.nodes
    flat = CompensatorPath(t, np.zeros_like(t), 0.0, np.zeros_like(t))
    assert flatness_integral(loss, np.ones((t.size, 4)), flat) == 0.0
    for sc in Example46:
        # one-sample rows holding the exact means of Y
        means = example46_mean(sc, t, 1.0)[:, None]
        Kv = example46_solution(sc, t, 0.0, 1.0)[2] * np.ones_like(t)
        K = CompensatorPath(t, Kv, float(Kv[-1]), np.zeros_like(t))
        assert flatness_integral(loss, means, K) == pytest.approx(0.0, abs=1e-12)
        assert constraint_margin(loss, means, t) == pytest.approx(0.0, abs=1e-12)


def test_margin_of_shifted_level():
    grid = build_grid(1.0, 8)
    loss = LossSpec.linear(Affine(0.3, 0.7))
    Y = loss.level(grid.nodes)[:, None] + np.ones((9, 5))
    assert constraint_margin(loss, Y, grid.nodes) == pytest.approx(1.0)
