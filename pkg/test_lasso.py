#!/usr/bin/env python3
"""
Tests for coordinate-descent lasso and the weighted fused-lasso path
"""

import numpy as np
import pytest

from lasso.coordinate_descent import (CumulativeDesign, DenseDesign, LassoConvergenceError, LassoProblem,
                                      kkt_residual, soft_threshold, solve_lasso)
from lasso.fused_path import (EmptyComponentError, chain_dynamic_program, fill_unweighted, fused_objective,
                              solve_fused_path)


def _chain_objective(b, y, w, penalty):
    return 0.5 * float(np.sum(w * (y - b) ** 2)) + penalty * float(np.abs(np.diff(b)).sum())


def test_soft_threshold():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-3.0, 1.0) == -2.0
    assert soft_threshold(0.5, 1.0) == 0.0


def test_orthonormal_design_has_closed_form():
    y = np.array([3.0, -0.5, 1.5, -2.0])
    coefficients = solve_lasso(LassoProblem(np.eye(4), y, 1.0))
    assert np.allclose(coefficients, [2.0, 0.0, 0.5, -1.0])


def test_zero_penalty_matches_least_squares():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(30, 4))
    y = x @ np.array([1.0, -2.0, 0.0, 0.5]) + 0.1 * rng.normal(size=30)
    coefficients = solve_lasso(LassoProblem(x, y, 0.0))
    assert np.allclose(coefficients, np.linalg.lstsq(x, y, rcond=None)[0], atol=1e-6)


def test_solution_satisfies_kkt_and_unpenalized_columns_stay_free():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(40, 5))
    y = x @ np.array([0.0, 3.0, 0.0, -1.0, 0.2]) + rng.normal(size=40)
    mask = np.array([False, True, True, True, True])
    problem = LassoProblem(DenseDesign(x), y, 20.0, mask)
    coefficients = solve_lasso(problem)
    residual = y - x @ coefficients
    assert kkt_residual(problem, coefficients, residual) < 1e-6
    assert abs(x[:, 0] @ residual) < 1e-6


def test_large_penalty_gives_all_zero():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(20, 3))
    y = rng.normal(size=20)
    penalty = float(np.abs(x.T @ y).max()) + 1.0
    assert np.all(solve_lasso(LassoProblem(x, y, penalty)) == 0)


def test_small_steps_do_not_stop_before_kkt_holds():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(200, 3))
    y = x @ np.array([1.0, -2.0, 0.5]) + 0.1 * rng.normal(size=200)
    problem = LassoProblem(x, y, 0.0)
    # every step after the first sweep is below this tolerance
    coefficients = solve_lasso(problem, tol=1.0)
    assert kkt_residual(problem, coefficients, y - x @ coefficients) <= 1e-8
    assert np.allclose(coefficients, np.linalg.lstsq(x, y, rcond=None)[0], atol=1e-9)


def test_sweep_cap_raises_with_last_iterate():
    rng = np.random.default_rng(8)
    base = rng.normal(size=50)
    x = np.column_stack([base, base + 1e-3 * rng.normal(size=50)])
    y = base + rng.normal(size=50)
    with pytest.raises(LassoConvergenceError) as excinfo:
        solve_lasso(LassoProblem(x, y, 0.1), max_sweeps=1)
    assert excinfo.value.sweeps == 1
    assert excinfo.value.coefficients.shape == (2,)
    assert excinfo.value.kkt_residual > 0


def test_problem_validation():
    with pytest.raises(ValueError):
        LassoProblem(np.eye(3), np.ones(2), 1.0)
    with pytest.raises(ValueError):
        LassoProblem(np.eye(3), np.ones(3), -1.0)
    with pytest.raises(ValueError):
        LassoProblem(np.eye(3), np.array([1.0, np.nan, 0.0]), 1.0)


def test_cumulative_design_matches_dense():
    rng = np.random.default_rng(9)
    sqrt_w = np.sqrt(rng.uniform(0.5, 2.0, size=6))
    design = CumulativeDesign(sqrt_w)
    dense = DenseDesign(design.to_dense())
    coefficients = rng.normal(size=6)
    residual = rng.normal(size=6)
    assert np.allclose(design.predict(coefficients), dense.predict(coefficients))
    assert np.allclose(design.gradient(residual), dense.gradient(residual))
    assert np.allclose(design.column_sq_norms(), dense.column_sq_norms())


def test_chain_program_matches_coordinate_descent():
    rng = np.random.default_rng(10)
    y = np.concatenate([np.zeros(8), 2 * np.ones(8)]) + 0.3 * rng.normal(size=16)
    w = rng.uniform(0.5, 1.5, size=16)
    penalty = 0.8
    exact = chain_dynamic_program(y, w, penalty)
    sqrt_w = np.sqrt(w)
    mask = np.ones(16, dtype=bool)
    mask[0] = False
    eta = solve_lasso(LassoProblem(CumulativeDesign(sqrt_w), sqrt_w * y, penalty, mask))
    assert _chain_objective(exact, y, w, penalty) <= _chain_objective(np.cumsum(eta), y, w, penalty) + 1e-8
    assert np.allclose(exact, np.cumsum(eta), atol=1e-3)


def test_chain_program_limits():
    y = np.array([1.0, 4.0, 2.0, 7.0])
    w = np.array([1.0, 2.0, 1.0, 0.5])
    assert np.allclose(chain_dynamic_program(y, w, 0.0), y)
    flat = chain_dynamic_program(y, w, 1e6)
    assert np.allclose(flat, np.average(y, weights=w))


def test_fill_unweighted_carries_previous_value():
    positive = np.array([False, True, False, True, False])
    assert fill_unweighted(np.array([1.0, 2.0]), positive).tolist() == [1.0, 1.0, 1.0, 2.0, 2.0]


def test_fused_path_recovers_a_step():
    rng = np.random.default_rng(12)
    y = np.concatenate([np.zeros(15), 3 * np.ones(15)]) + 0.05 * rng.normal(size=30)
    atoms, chosen = solve_fused_path(np.ones(30), y, (0.05, 0.5, 2.0, 8.0))
    assert np.abs(atoms[:15]).max() < 0.5
    assert np.abs(atoms[15:] - 3).max() < 0.5
    assert np.count_nonzero(np.abs(np.diff(atoms)) > 1.0) == 1
    assert chosen in (0.05, 0.5, 2.0, 8.0)


def test_fused_path_objective_no_worse_than_constant_fit():
    rng = np.random.default_rng(13)
    w = rng.uniform(0.1, 1.0, size=20)
    y = rng.normal(size=20)
    atoms, chosen = solve_fused_path(w, y, (1.0,))
    constant = np.full(20, np.average(y, weights=w))
    assert fused_objective(atoms, w, y, chosen) <= fused_objective(constant, w, y, chosen) + 1e-8


def test_fused_path_rejects_bad_inputs():
    with pytest.raises(EmptyComponentError):
        solve_fused_path(np.zeros(5), np.ones(5), (1.0,))
    with pytest.raises(ValueError):
        solve_fused_path(np.ones(5), np.ones(4), (1.0,))
    with pytest.raises(ValueError):
        solve_fused_path(np.ones(5), np.ones(5), (2.0, 1.0))
