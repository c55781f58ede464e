import logging
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from mixture.mixture_state import MixtureState
from settings import settings

logger = logging.getLogger(__name__)


def log_mixture_weights(covariates: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """
    Multinomial-logistic log weights.
    covariates (units, q), beta (T, H-1, q) -> (units, H, T); the last component is the reference.
    """
    n_units = covariates.shape[0]
    n_scans = beta.shape[0]
    logits = np.einsum("uq,thq->uht", covariates, beta)
    logits = np.concatenate([logits, np.zeros((n_units, 1, n_scans))], axis=1)
    return logits - logsumexp(logits, axis=1, keepdims=True)


def mixture_weights(x, beta_t) -> np.ndarray:
    """Component probabilities for one covariate vector and one scan's (H-1, q) coefficients"""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    beta_t = np.asarray(beta_t, dtype=float).reshape(-1, x.size)
    return np.exp(log_mixture_weights(x[None, :], beta_t[None])[0, :, 0])


def gaussian_log_density(obs: np.ndarray, atoms: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """
    Isotropic Gaussian log-density of each unit value under each component.
    obs (units, T) or (units, T, D); atoms (H, T) or (H, T, D) -> (units, H, T)
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    if obs.ndim == 2:
        dim = 1
        sq = (obs[:, None, :] - atoms[None, :, :]) ** 2
    else:
        dim = obs.shape[2]
        cross = np.einsum("utd,htd->uht", obs, atoms)
        sq = (np.einsum("utd,utd->ut", obs, obs)[:, None, :] - 2.0 * cross
              + np.einsum("htd,htd->ht", atoms, atoms)[None, :, :])
        sq = np.maximum(sq, 0.0)
    return -0.5 * dim * np.log(2.0 * np.pi * sigma2)[None, :, None] - sq / (2.0 * sigma2)[None, :, None]


def log_joint(obs: np.ndarray, state: MixtureState, covariates: np.ndarray,
              log_weights: Optional[np.ndarray] = None) -> np.ndarray:
    if log_weights is None:
        log_weights = log_mixture_weights(covariates, state.beta)
    return log_weights + gaussian_log_density(obs, state.atoms, state.sigma2)


def responsibilities_from_weights(obs: np.ndarray, atoms: np.ndarray, sigma2: np.ndarray,
                                  weights: np.ndarray) -> np.ndarray:
    """E-step with explicit component weights (units, H, T) or (H,)"""
    weights = np.asarray(weights, dtype=float)
    if weights.ndim == 1:
        weights = weights[None, :, None]
    with np.errstate(divide="ignore"):
        joint = np.log(weights) + gaussian_log_density(obs, atoms, sigma2)
    return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))


def e_step_responsibilities(obs: np.ndarray, state: MixtureState, covariates: np.ndarray) -> np.ndarray:
    """Posterior component probabilities (units, H, T), normalized in log space"""
    joint = log_joint(obs, state, covariates)
    return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))


def mixture_log_likelihood(obs: np.ndarray, state: MixtureState, covariates: np.ndarray) -> float:
    """Sum over units and scans of log sum_h xi_h phi_h"""
    return float(logsumexp(log_joint(obs, state, covariates), axis=1).sum())


def _squared_residuals(obs: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    if obs.ndim == 2:
        return (obs[:, None, :] - atoms[None, :, :]) ** 2
    diff_sq = np.einsum("utd,utd->ut", obs, obs)[:, None, :] \
        - 2.0 * np.einsum("utd,htd->uht", obs, atoms) \
        + np.einsum("htd,htd->ht", atoms, atoms)[None, :, :]
    return np.maximum(diff_sq, 0.0)


def m_step_sigma2(responsibilities: np.ndarray, obs: np.ndarray, atoms: np.ndarray, a_sigma: float,
                  b_sigma: float, dim: int, previous: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Closed-form component variances.
    dim == 1: (b + 0.5 sum psi r^2) / (a + 0.5 sum psi - 1)
    dim == V-1: (b + 0.5 sum psi ||r||^2) / (a + 1 + 0.5 V (V-1) m), where the units are
    network rows and m = sum psi / V is the mass per network
    """
    mass = responsibilities.sum(axis=(0, 2))
    weighted = np.einsum("uht,uht->h", responsibilities, _squared_residuals(obs, atoms))
    numerator = b_sigma + 0.5 * weighted
    if dim == 1:
        denominator = a_sigma + 0.5 * mass - 1.0
    else:
        n_nodes = dim + 1
        denominator = a_sigma + 1.0 + 0.5 * n_nodes * (n_nodes - 1) * (mass / n_nodes)

    sigma2 = np.empty(len(mass))
    for h in range(len(mass)):
        if previous is not None and mass[h] < settings.empty_component_mass:
            sigma2[h] = previous[h]
        elif denominator[h] <= 0:
            if previous is None:
                raise ValueError(f"non-positive variance denominator for component {h + 1} and no previous value")
            logger.warning(f"Variance denominator {denominator[h]:.3g} <= 0 for component {h + 1}; "
                           f"holding sigma2 at {previous[h]:.4g}")
            sigma2[h] = previous[h]
        else:
            sigma2[h] = numerator[h] / denominator[h]
    return np.maximum(sigma2, settings.sigma2_floor)


def beta_prior_precision(sigma_beta_diag: float, n_covariates: int) -> np.ndarray:
    return np.eye(n_covariates) / sigma_beta_diag


def m_step_beta_scans(responsibilities: np.ndarray, covariates: np.ndarray, beta: np.ndarray,
                      prior_precision: np.ndarray) -> np.ndarray:
    """
    One quadratic-approximation step for every scan.
    responsibilities (units, H, T), covariates (units, q), beta (T, H-1, q).
    Units sharing a subject (the node rows of the precision model) repeat its covariates.
    """
    n_units, n_components, n_scans = responsibilities.shape
    if n_components == 1 or covariates.shape[1] == 0:
        return beta.copy()
    probs = np.exp(log_mixture_weights(covariates, beta))[:, :-1]
    weights = np.maximum(probs * (1.0 - probs), settings.irls_weight_floor)
    linear = np.einsum("uq,thq->uht", covariates, beta)
    working = linear + (responsibilities[:, :-1] - probs) / weights
    system = prior_precision[None, None] + np.einsum("uht,uq,ur->thqr", weights, covariates, covariates,
                                                     optimize=True)
    rhs = np.einsum("uht,uq->thq", weights * working, covariates, optimize=True)
    return np.linalg.solve(system, rhs[..., None])[..., 0]


def m_step_beta(responsibilities_t, covariates, beta_prev, sigma_beta) -> np.ndarray:
    """Single-scan form: responsibilities (units, H), beta_prev (H-1, q), sigma_beta (q, q)"""
    responsibilities_t = np.asarray(responsibilities_t, dtype=float)
    covariates = np.asarray(covariates, dtype=float)
    beta_prev = np.asarray(beta_prev, dtype=float)
    prior_precision = np.linalg.inv(np.atleast_2d(sigma_beta))
    updated = m_step_beta_scans(responsibilities_t[:, :, None], covariates, beta_prev[None], prior_precision)
    return updated[0]


def beta_objective(responsibilities: np.ndarray, covariates: np.ndarray, beta: np.ndarray,
                   prior_precision: np.ndarray) -> np.ndarray:
    """Per-scan part of the log-posterior that depends on beta: sum psi log xi + Gaussian prior"""
    log_weights = log_mixture_weights(covariates, beta)
    fit = np.einsum("uht,uht->t", responsibilities, log_weights)
    prior = -0.5 * np.einsum("thq,qr,thr->t", beta, prior_precision, beta)
    return fit + prior


def safeguarded_beta_step(responsibilities: np.ndarray, covariates: np.ndarray, beta: np.ndarray,
                          prior_precision: np.ndarray) -> np.ndarray:
    """Quadratic-approximation step, rejected at scans where it lowers the beta objective"""
    proposal = m_step_beta_scans(responsibilities, covariates, beta, prior_precision)
    if proposal.size == 0:
        return proposal
    before = beta_objective(responsibilities, covariates, beta, prior_precision)
    after = beta_objective(responsibilities, covariates, proposal, prior_precision)
    rejected = after < before
    if rejected.any():
        logger.debug(f"Beta step rejected at {int(rejected.sum())} scans")
        proposal[rejected] = beta[rejected]
    return proposal


def beta_log_prior(beta: np.ndarray, prior_precision: np.ndarray) -> float:
    if beta.size == 0:
        return 0.0
    q = prior_precision.shape[0]
    _, logdet = np.linalg.slogdet(prior_precision)
    n_vectors = beta.shape[0] * beta.shape[1]
    quad = np.einsum("thq,qr,thr->", beta, prior_precision, beta)
    return float(-0.5 * quad + 0.5 * n_vectors * (logdet - q * np.log(2.0 * np.pi)))
