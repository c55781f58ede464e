#!/usr/bin/env python3
"""
Tests for the covariate-dependent mixture engine and its initialization
"""

import numpy as np
import pytest

from mixture.engine import (beta_objective, beta_prior_precision, e_step_responsibilities, log_mixture_weights,
                            m_step_beta, m_step_sigma2, mixture_weights, responsibilities_from_weights,
                            safeguarded_beta_step)
from mixture.mixture_state import MixtureState, init_mixture_state, state_from_arrays


def test_weights_form_a_probability_vector():
    rng = np.random.default_rng(0)
    covariates = rng.normal(size=(6, 2))
    beta = rng.normal(size=(5, 3, 2))
    weights = np.exp(log_mixture_weights(covariates, beta))
    assert weights.shape == (6, 4, 5)
    assert np.allclose(weights.sum(axis=1), 1.0)


def test_reference_component_logit():
    assert np.allclose(mixture_weights([1.0], [[np.log(2.0)]]), [2 / 3, 1 / 3])
    assert np.allclose(mixture_weights([0.0, 0.0], np.zeros((2, 2))), [1 / 3, 1 / 3, 1 / 3])


def test_extreme_logits_do_not_overflow():
    weights = mixture_weights([1.0], [[800.0]])
    assert np.all(np.isfinite(weights))
    assert weights[0] == pytest.approx(1.0)


def test_separated_components_give_hard_responsibilities():
    obs = np.array([[-3.0, -3.0], [3.0, 3.0]])
    state = state_from_arrays(atoms=[[-3.0, -3.0], [3.0, 3.0]], sigma2=[0.1, 0.1], beta=np.zeros((2, 1, 0)),
                              n_units=2)
    psi = e_step_responsibilities(obs, state, np.zeros((2, 0)))
    assert np.allclose(psi.sum(axis=1), 1.0)
    assert psi[0, 0, 0] > 0.999
    assert psi[1, 1, 1] > 0.999


def test_explicit_weights_tilt_responsibilities():
    obs = np.zeros((1, 1))
    atoms = np.array([[-1.0], [1.0]])
    psi = responsibilities_from_weights(obs, atoms, np.ones(2), np.array([0.75, 0.25]))
    assert psi[0, :, 0] == pytest.approx([0.75, 0.25])
    psi = responsibilities_from_weights(obs, atoms, np.ones(2), np.array([1.0, 0.0]))
    assert psi[0, :, 0] == pytest.approx([1.0, 0.0])


def test_sigma2_closed_form():
    obs = np.array([[0.0, 2.0], [1.0, 1.0]])
    atoms = np.array([[0.5, 1.5]])
    psi = np.ones((2, 1, 2))
    sigma2 = m_step_sigma2(psi, obs, atoms, a_sigma=2.0, b_sigma=1.0, dim=1)
    # residuals 0.5, 0.5, 0.5, 0.5: (1 + 0.5 * 1) / (2 + 2 - 1)
    assert sigma2[0] == pytest.approx(0.5)


def test_sigma2_held_when_denominator_is_not_positive():
    obs = np.array([[0.0]])
    atoms = np.array([[0.0]])
    psi = np.ones((1, 1, 1))
    held = m_step_sigma2(psi, obs, atoms, a_sigma=0.1, b_sigma=1.0, dim=1, previous=np.array([0.7]))
    assert held[0] == pytest.approx(0.7)
    with pytest.raises(ValueError):
        m_step_sigma2(psi, obs, atoms, a_sigma=0.1, b_sigma=1.0, dim=1)


def test_sigma2_vector_form_counts_one_network_per_subject_scan():
    # one V = 3 network: three rows with psi = 1 and squared residuals totalling 4
    obs = np.array([[[2.0, 0.0]], [[0.0, 0.0]], [[0.0, 0.0]]])
    atoms = np.zeros((1, 1, 2))
    psi = np.ones((3, 1, 1))
    sigma2 = m_step_sigma2(psi, obs, atoms, a_sigma=0.1, b_sigma=1.0, dim=2)
    assert sigma2[0] == pytest.approx(3.0 / 4.1)
    assert sigma2[0] == pytest.approx(0.7317, abs=1e-4)


def test_sigma2_vector_form_single_row():
    obs = np.ones((1, 1, 2))
    atoms = np.zeros((1, 1, 2))
    psi = np.ones((1, 1, 1))
    # (b + 0.5 * 2) / (a + 1 + 0.5 * (V - 1) * 1)
    sigma2 = m_step_sigma2(psi, obs, atoms, a_sigma=1.0, b_sigma=1.0, dim=2)
    assert sigma2[0] == pytest.approx(2.0 / 3.0)


def test_sigma2_shrinks_with_residuals():
    atoms = np.zeros((1, 1, 2))
    psi = np.ones((4, 1, 1))
    wide = m_step_sigma2(psi, np.full((4, 1, 2), 2.0), atoms, a_sigma=0.1, b_sigma=1.0, dim=2)
    narrow = m_step_sigma2(psi, np.full((4, 1, 2), 0.5), atoms, a_sigma=0.1, b_sigma=1.0, dim=2)
    assert 0 < narrow[0] < wide[0]


def test_density_ratio_responsibility():
    state = state_from_arrays(atoms=[[0.0], [1.0]], sigma2=[1.0, 1.0], beta=np.zeros((1, 1, 0)))
    psi = e_step_responsibilities(np.zeros((1, 1)), state, np.zeros((1, 0)))
    assert psi[0, 0, 0] == pytest.approx(1.0 / (1.0 + np.exp(-0.5)))
    assert psi[0, 0, 0] == pytest.approx(0.62246, abs=1e-5)


def test_responsibilities_ignore_a_common_log_shift():
    rng = np.random.default_rng(6)
    obs = rng.normal(size=(5, 4))
    atoms = rng.normal(size=(3, 4))
    sigma2 = np.array([0.5, 1.0, 2.0])
    weights = np.array([0.2, 0.3, 0.5])
    base = responsibilities_from_weights(obs, atoms, sigma2, weights)
    assert np.allclose(base.sum(axis=1), 1.0, atol=1e-10)
    scaled = responsibilities_from_weights(obs, atoms, sigma2, weights * 1e-280)
    assert np.allclose(base, scaled, atol=1e-12)
    # translating data and atoms together leaves every density ratio unchanged
    far = responsibilities_from_weights(obs + 1e3, atoms + 1e3, sigma2, weights)
    assert np.allclose(base, far, atol=1e-8)


def test_beta_step_moves_towards_covariate_signal():
    rng = np.random.default_rng(1)
    covariates = rng.normal(size=(40, 1))
    first = (covariates[:, 0] > 0).astype(float)
    psi = np.stack([first, 1.0 - first], axis=1)[:, :, None]
    beta = np.zeros((1, 1, 1))
    prior = beta_prior_precision(1.0, 1)
    updated = safeguarded_beta_step(psi, covariates, beta, prior)
    assert updated[0, 0, 0] > 0
    assert beta_objective(psi, covariates, updated, prior)[0] >= beta_objective(psi, covariates, beta, prior)[0]


def test_single_scan_beta_step_matches_batched():
    rng = np.random.default_rng(2)
    covariates = rng.normal(size=(10, 2))
    psi = rng.dirichlet(np.ones(3), size=10)
    single = m_step_beta(psi, covariates, np.zeros((2, 2)), np.eye(2))
    assert single.shape == (2, 2)
    assert np.all(np.isfinite(single))


def test_beta_untouched_without_covariates_or_with_one_component():
    psi = np.ones((5, 1, 3))
    beta = np.zeros((3, 0, 2))
    assert safeguarded_beta_step(psi, np.ones((5, 2)), beta, np.eye(2)).shape == (3, 0, 2)


def test_initialization_separates_groups_and_is_deterministic():
    rng = np.random.default_rng(3)
    values = np.concatenate([rng.normal(-2, 0.1, size=(5, 8)), rng.normal(2, 0.1, size=(5, 8))])
    state = init_mixture_state(values, 2, 1, seed=4)
    again = init_mixture_state(values, 2, 1, seed=4)
    assert np.array_equal(state.atoms, again.atoms)
    assert state.atoms.shape == (2, 8)
    assert np.all(state.atoms[0] < -1.5) and np.all(state.atoms[1] > 1.5)
    assert np.array_equal(state.labels()[:5], np.zeros((5, 8)))
    assert state.beta.shape == (8, 1, 1)
    assert np.all(state.sigma2 > 0)


def test_initialization_with_more_components_than_distinct_values():
    values = np.zeros((3, 4))
    state = init_mixture_state(values, 3, 0, seed=0)
    assert state.atoms.shape == (3, 4)
    assert np.allclose(state.responsibilities.sum(axis=1), 1.0)


def test_permutation_preserves_mixture_weights():
    rng = np.random.default_rng(5)
    covariates = rng.normal(size=(4, 2))
    state = MixtureState(atoms=rng.normal(size=(3, 2)), sigma2=np.ones(3), beta=rng.normal(size=(2, 2, 2)),
                         responsibilities=rng.dirichlet(np.ones(3), size=(4, 2)).transpose(0, 2, 1))
    order = [2, 0, 1]
    permuted = state.permuted(order)
    before = log_mixture_weights(covariates, state.beta)[:, order]
    after = log_mixture_weights(covariates, permuted.beta)
    assert np.allclose(before, after)
    assert np.array_equal(permuted.atoms, state.atoms[order])
