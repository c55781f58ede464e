#!/usr/bin/env python3
"""
Tests for the nodewise precision-matrix estimator and its Gibbs sampler
"""

import numpy as np
import pytest

from estimators.gibbs import column_conditional, draw_column, gibbs_sweeps, robust_cholesky, set_column
from estimators.precision_estimator import (NonMonotoneTraceError, PositiveDefinitenessError, PrecisionEstimator,
                                            fit_idpmac, initial_precisions, partial_correlations, row_vectors)
from panel.dataset import HyperParams, NetworkKind, PanelDataset

FAST = HyperParams(n_components=2, lambda_grid=(0.5, 4.0), mc_samples=4, mc_burn_in=2, max_em_iters=3)


def ggm_panel(n_subjects=4, n_scans=40, seed=0):
    """Three nodes with a single strong edge between the first two"""
    omega = np.array([[1.0, -0.5, 0.0], [-0.5, 1.0, 0.0], [0.0, 0.0, 1.0]])
    rng = np.random.default_rng(seed)
    data = rng.multivariate_normal(np.zeros(3), np.linalg.inv(omega), size=(n_subjects, n_scans))
    return PanelDataset(data=np.transpose(data, (0, 2, 1)), covariates=rng.normal(size=(n_subjects, 1)))


def test_row_vectors_layout():
    omega = np.arange(2 * 1 * 3 * 3, dtype=float).reshape(2, 1, 3, 3)
    rows = row_vectors(omega)
    assert rows.shape == (6, 1, 2)
    # subject 2, node 3 -> unit 2 * 3 + 2, off-diagonal entries of row 3
    assert np.array_equal(rows[5, 0], omega[1, 0, 2, [0, 1]])
    assert np.array_equal(rows[1, 0], omega[0, 0, 1, [0, 2]])


def test_initial_precisions_are_positive_definite():
    panel = ggm_panel()
    omega = initial_precisions(panel.data)
    assert omega.shape == (4, 40, 3, 3)
    assert np.linalg.eigvalsh(omega).min() > 0


def test_column_update_keeps_inverse_in_sync():
    rng = np.random.default_rng(1)
    base = rng.normal(size=(4, 4))
    omega = (base @ base.T + 4 * np.eye(4))[None]
    sigma = np.linalg.inv(omega)
    x = rng.normal(size=4)
    scatter = np.outer(x, x)[None]
    conditional = column_conditional(sigma, scatter, 2, np.array([1.0]), np.zeros((1, 3)), alpha=1.0)
    omega_v, kappa, jitters = draw_column(conditional, rng)
    set_column(omega, sigma, 2, omega_v, kappa, conditional.omega11_inv)
    assert jitters == 0
    assert np.allclose(omega, omega.transpose(0, 2, 1))
    assert np.allclose(sigma, np.linalg.inv(omega), atol=1e-8)
    assert np.linalg.eigvalsh(omega).min() > 0


def test_cholesky_jitter_rescues_semidefinite_matrices():
    singular = np.array([[[1.0, 1.0], [1.0, 1.0]]])
    chol, jitters = robust_cholesky(singular)
    assert jitters >= 1
    assert np.all(np.isfinite(chol))
    _, clean = robust_cholesky(np.eye(2)[None])
    assert clean == 0


def test_gibbs_sweeps_return_symmetric_positive_definite_means():
    rng = np.random.default_rng(2)
    series = rng.normal(size=(3, 6))
    omega = np.broadcast_to(np.eye(3), (6, 3, 3))
    psi = np.full((3, 2, 6), 0.5)
    atoms = np.zeros((2, 6, 2))
    result = gibbs_sweeps(series, omega, psi, atoms, np.ones(2), 1.0, burn_in=2, n_samples=5, rng=rng,
                          keep_draws=True)
    assert result.mean.shape == (6, 3, 3)
    assert np.allclose(result.mean, result.mean.transpose(0, 2, 1))
    assert np.linalg.eigvalsh(result.mean).min() > 0
    assert result.draws.shape == (5, 6, 3, 3)
    assert np.allclose(result.draws, np.swapaxes(result.draws, -1, -2))


def test_fit_shapes_and_outputs():
    fit = fit_idpmac(ggm_panel(), FAST, seed=3)
    assert fit.omega.shape == (4, 40, 3, 3)
    assert np.linalg.eigvalsh(fit.omega).min() > 0
    assert fit.networks.kind == NetworkKind.PRECISION
    assert fit.labels().shape == (4, 40, 3)
    assert fit.state.atoms.shape == (2, 40, 2)
    partial = partial_correlations(fit)
    assert partial.kind == NetworkKind.PARTIAL_CORRELATION
    assert np.allclose(np.diagonal(partial.values, axis1=-2, axis2=-1), 1.0)
    diagnostics = fit.diagnostics()
    assert {"iteration", "jitters", "audit_min_eigenvalue", "log_posterior", "mc_sd"} <= set(diagnostics.columns)
    assert len(diagnostics) == fit.iterations


def test_fit_recovers_the_strong_edge():
    fit = fit_idpmac(ggm_panel(n_subjects=6, n_scans=60, seed=4), FAST, seed=4)
    partial = fit.networks.edge_series()
    strong, absent = partial[..., 0].mean(), partial[..., 1].mean()
    assert strong > absent


def test_fit_is_deterministic_across_thread_counts():
    panel = ggm_panel(n_subjects=3, n_scans=20)
    serial = fit_idpmac(panel, FAST, seed=5, n_jobs=1)
    parallel = fit_idpmac(panel, FAST, seed=5, n_jobs=2)
    assert np.array_equal(serial.omega, parallel.omega)
    assert serial.log_posterior_trace == parallel.log_posterior_trace


def test_covariate_naive_fit_has_no_coefficients():
    fit = fit_idpmac(ggm_panel(n_subjects=3, n_scans=20), FAST, seed=6, covariate_naive=True)
    assert fit.state.beta.shape == (20, 1, 0)


def test_audit_reports_first_failing_cell():
    panel = ggm_panel(n_subjects=2, n_scans=10)
    estimator = PrecisionEstimator(panel.data, panel.covariates, FAST, seed=0)
    estimator.initialize()
    estimator.omega[1, 4] = -np.eye(3)
    with pytest.raises(PositiveDefinitenessError) as excinfo:
        estimator.audit_positive_definite(fraction=1.0)
    assert excinfo.value.subject == 2
    assert excinfo.value.scan == 5
    assert excinfo.value.min_eigenvalue < 0


def test_repeated_drops_beyond_noise_abort():
    panel = ggm_panel(n_subjects=2, n_scans=10)
    estimator = PrecisionEstimator(panel.data, panel.covariates, FAST, seed=0)
    estimator.mc_sd = 0.0
    estimator.trace = [100.0]
    with pytest.raises(NonMonotoneTraceError):
        for iteration in range(2, 10):
            estimator.trace.append(estimator.trace[-1] - 1.0)
            estimator.check_trace(iteration)
    assert estimator.consecutive_decreases == 5


def test_small_drops_within_noise_are_tolerated():
    panel = ggm_panel(n_subjects=2, n_scans=10)
    estimator = PrecisionEstimator(panel.data, panel.covariates, FAST, seed=0)
    estimator.mc_sd = 10.0
    estimator.trace = [100.0]
    for iteration in range(2, 10):
        estimator.trace.append(estimator.trace[-1] - 1.0)
        estimator.check_trace(iteration)
    assert estimator.consecutive_decreases == 0


def test_sigma2_update_maximizes_the_traced_objective():
    panel = ggm_panel(n_subjects=3, n_scans=20, seed=8)
    hyper = HyperParams(n_components=1, lambda_grid=(0.5,), a_sigma=0.1, b_sigma=1.0, mc_samples=4, mc_burn_in=2,
                        max_em_iters=1)
    estimator = PrecisionEstimator(panel.data, panel.covariates, hyper, seed=0)
    estimator.initialize()
    estimator.em_iteration(1)
    updated = estimator.state.sigma2.copy()
    values = {}
    for factor in (0.25, 0.9, 0.99, 1.0, 1.01, 1.1, 2.0, 3.0):
        estimator.state.sigma2 = updated * factor
        values[factor] = estimator._objective(estimator.omega)
    assert max(values, key=values.get) == 1.0


def test_column_conditional_matches_hand_computation():
    rng = np.random.default_rng(9)
    base = rng.normal(size=(4, 4))
    omega = base @ base.T + 4 * np.eye(4)
    x = rng.normal(size=4)
    scatter = np.outer(x, x)
    alpha, v = 1.5, 1
    psi = np.array([0.3, 0.7])
    sigma2 = np.array([0.5, 2.0])
    atoms = rng.normal(size=(2, 3))
    prior_precision = np.sum(psi / sigma2)
    prior_shift = (psi / sigma2) @ atoms

    conditional = column_conditional(np.linalg.inv(omega)[None], scatter[None], v, np.array([prior_precision]),
                                     prior_shift[None], alpha=alpha)
    others = [0, 2, 3]
    omega11_inv = np.linalg.inv(omega[np.ix_(others, others)])
    covariance = np.linalg.inv((scatter[v, v] + alpha) * omega11_inv + prior_precision * np.eye(3))
    mean = covariance @ (prior_shift - scatter[others, v])
    assert np.allclose(conditional.omega11_inv[0], omega11_inv)
    assert np.allclose(conditional.mean[0], mean)
    assert np.allclose(conditional.covariance[0], covariance)
    assert conditional.gamma_rate[0] == pytest.approx(0.5 * (scatter[v, v] + alpha))


def test_column_draws_match_conditional_moments():
    rng = np.random.default_rng(10)
    n_draws = 20000
    base = rng.normal(size=(3, 3))
    omega = base @ base.T + 3 * np.eye(3)
    x = rng.normal(size=3)
    sigma = np.broadcast_to(np.linalg.inv(omega), (n_draws, 3, 3)).copy()
    scatter = np.broadcast_to(np.outer(x, x), (n_draws, 3, 3)).copy()
    alpha = 1.0
    conditional = column_conditional(sigma, scatter, 0, np.full(n_draws, 2.0), np.tile([0.4, -0.2], (n_draws, 1)),
                                     alpha=alpha)
    omega_v, kappa, _ = draw_column(conditional, rng)

    expected_kappa = 3.0 / (scatter[0, 0, 0] + alpha)
    kappa_se = np.sqrt(1.5) / conditional.gamma_rate[0] / np.sqrt(n_draws)
    assert abs(kappa.mean() - expected_kappa) < 3 * kappa_se
    mean = conditional.mean[0]
    column_se = np.sqrt(np.diag(conditional.covariance[0]) / n_draws)
    assert np.all(np.abs(omega_v.mean(axis=0) - mean) < 3 * column_se)
