import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from estimators.base_estimator import BaseEstimator, NonMonotoneTraceError, derive_seed
from estimators.gibbs import GibbsResult, gibbs_sweeps
from estimators.pairwise_estimator import prepare_panel
from lasso.fused_path import EmptyComponentError, solve_fused_path
from mixture.engine import (beta_log_prior, beta_prior_precision, e_step_responsibilities, m_step_sigma2,
                            mixture_log_likelihood, safeguarded_beta_step)
from mixture.mixture_state import MixtureState, init_mixture_state
from panel.dataset import DynamicNetworkSet, HyperParams, NetworkKind, PanelDataset
from panel.transforms import partial_correlation_matrices, sliding_covariance
from settings import settings

logger = logging.getLogger(__name__)


class PositiveDefinitenessError(Exception):
    """Raised when an audited precision matrix is not positive definite"""
    def __init__(self, subject: int, scan: int, min_eigenvalue: float):
        self.subject = subject
        self.scan = scan
        self.min_eigenvalue = min_eigenvalue
        super().__init__(f"Precision matrix of subject {subject} at scan {scan} is not positive definite "
                         f"(min eigenvalue {min_eigenvalue:.3e})")


def row_vectors(omega: np.ndarray) -> np.ndarray:
    """(N, T, V, V) -> (N*V, T, V-1): off-diagonal entries of each row, unit index i*V + v"""
    n_subjects, n_scans, n_nodes, _ = omega.shape
    columns = np.array([np.delete(np.arange(n_nodes), v) for v in range(n_nodes)])
    rows = omega[:, :, np.arange(n_nodes)[:, None], columns]
    return np.transpose(rows, (0, 2, 1, 3)).reshape(n_subjects * n_nodes, n_scans, n_nodes - 1)


def initial_precisions(data: np.ndarray, window: int = settings.init_window,
                       ridge: float = settings.init_ridge) -> np.ndarray:
    """Ridge-regularized inverse of the windowed covariance, (N, T, V, V)"""
    window = max(2, min(window, data.shape[2]))
    covariance = sliding_covariance(data, window)
    return np.linalg.inv(covariance + ridge * np.eye(data.shape[1]))


def precision_log_posterior(data: np.ndarray, omega: np.ndarray, state: MixtureState, unit_covariates: np.ndarray,
                            hyper: HyperParams, lambdas: np.ndarray) -> float:
    """
    Observed-data log-posterior with Omega plugged in: Gaussian likelihood of every scan,
    exponential prior on the diagonal, mixture prior on the rows, fused penalty on atoms,
    inverse-gamma prior on sigma2 and Gaussian prior on beta.
    """
    n_nodes = omega.shape[-1]
    _, logdet = np.linalg.slogdet(omega)
    quad = np.einsum("ivt,itvu,iut->it", data, omega, data)
    likelihood = float(np.sum(0.5 * logdet - 0.5 * quad - 0.5 * n_nodes * np.log(2.0 * np.pi)))
    diagonal = np.diagonal(omega, axis1=-2, axis2=-1)
    diagonal_prior = float(np.sum(np.log(hyper.alpha / 2.0) - 0.5 * hyper.alpha * diagonal))
    mixture = mixture_log_likelihood(row_vectors(omega), state, unit_covariates)
    fused = -float(np.sum(lambdas * np.abs(np.diff(state.atoms, axis=1)).sum(axis=1)))
    variance = float(np.sum(-(hyper.a_sigma + 1.0) * np.log(state.sigma2) - hyper.b_sigma / state.sigma2))
    prior_precision = beta_prior_precision(hyper.sigma_beta_diag, unit_covariates.shape[1])
    return likelihood + diagonal_prior + mixture + fused + variance + beta_log_prior(state.beta, prior_precision)


def _subject_gibbs(series, omega, responsibilities, atoms, sigma2, alpha, burn_in, n_samples, seed) -> GibbsResult:
    rng = np.random.default_rng(seed)
    return gibbs_sweeps(series, omega, responsibilities, atoms, sigma2, alpha, burn_in, n_samples, rng)


@dataclass
class PrecisionFit:
    omega: np.ndarray
    state: MixtureState
    log_posterior_trace: List[float]
    converged: bool
    iterations: int
    lambdas: np.ndarray
    jitters: int = 0
    iteration_log: List[Dict] = field(default_factory=list)

    @property
    def networks(self) -> DynamicNetworkSet:
        return DynamicNetworkSet(kind=NetworkKind.PRECISION, values=self.omega, n_nodes=self.omega.shape[-1])

    def labels(self) -> np.ndarray:
        """(subject, scan, node) most responsible component of each row"""
        n_subjects, n_scans, n_nodes, _ = self.omega.shape
        labels = self.state.labels().reshape(n_subjects, n_nodes, n_scans)
        return np.transpose(labels, (0, 2, 1))

    def diagnostics(self) -> pd.DataFrame:
        return pd.DataFrame(self.iteration_log)


class PrecisionEstimator(BaseEstimator):
    """Monte Carlo EM for subject-level dynamic precision matrices with product mixture priors on rows"""

    def __init__(self, data: np.ndarray, covariates: np.ndarray, hyper: HyperParams, seed: int, n_jobs: int = 1,
                 freeze_lambda: bool = False, covariate_naive: bool = False,
                 initial_state: Optional[MixtureState] = None):
        super().__init__(hyper, seed, "precision model")
        self.data = np.asarray(data, dtype=float)
        n_subjects, n_nodes, _ = self.data.shape
        if n_nodes < 2:
            raise ValueError("network estimation needs at least two nodes")
        covariates = np.zeros((n_subjects, 0)) if covariate_naive else np.asarray(covariates, dtype=float)
        self.unit_covariates = np.repeat(covariates, n_nodes, axis=0)
        self.n_jobs = n_jobs
        self.freeze_lambda = freeze_lambda
        self.initial_state = initial_state
        self.prior_precision = beta_prior_precision(hyper.sigma_beta_diag, self.unit_covariates.shape[1])
        self.lambdas = np.full((hyper.n_components, n_nodes - 1), hyper.lambda_grid[0])
        self.omega = None
        self.state = None
        self.jitters = 0
        self.mc_sd = 0.0
        self.half_means: List[np.ndarray] = []
        self.consecutive_decreases = 0
        self.iteration_log: List[Dict] = []
        self.audit_rng = np.random.default_rng(derive_seed(seed, 7919))

    def initialize(self) -> None:
        self.omega = initial_precisions(self.data)
        if self.initial_state is not None:
            self.state = self.initial_state.copy()
        else:
            self.state = init_mixture_state(row_vectors(self.omega), self.hyper.n_components,
                                            self.unit_covariates.shape[1], self.seed)

    def _monte_carlo_e_step(self, iteration: int) -> None:
        n_subjects, n_nodes, _ = self.data.shape
        responsibilities = self.state.responsibilities.reshape(n_subjects, n_nodes, self.state.n_components, -1)
        results = Parallel(n_jobs=self.n_jobs)(
            delayed(_subject_gibbs)(self.data[i], self.omega[i], responsibilities[i], self.state.atoms,
                                    self.state.sigma2, self.hyper.alpha, self.hyper.mc_burn_in,
                                    self.hyper.mc_samples, derive_seed(self.seed, iteration, i))
            for i in range(n_subjects))
        self.omega = np.stack([r.mean for r in results])
        jitters = sum(r.jitters for r in results)
        self.jitters += jitters
        if jitters:
            logger.warning(f"Gibbs sampler needed {jitters} Cholesky jitters "
                           f"at iteration {iteration}")
        self.half_means = [np.stack([r.first_half_mean for r in results]),
                           np.stack([r.second_half_mean for r in results])]

    def _lambda_grid(self, h: int, d: int, iteration: int):
        if self.freeze_lambda and iteration > 1:
            return [self.lambdas[h, d]]
        return self.hyper.lambda_grid

    def em_iteration(self, iteration: int) -> None:
        state = self.state
        psi = e_step_responsibilities(row_vectors(self.omega), state, self.unit_covariates)
        state.responsibilities = psi
        self._monte_carlo_e_step(iteration)
        rows = row_vectors(self.omega)

        for h in range(state.n_components):
            mass = psi[:, h, :].sum(axis=0)
            if mass.sum() < settings.empty_component_mass:
                continue
            weights = mass / (2.0 * state.sigma2[h])
            safe_mass = np.where(mass > 0, mass, 1.0)
            targets = np.einsum("ut,utd->td", psi[:, h, :], rows) / safe_mass[:, None]
            for d in range(rows.shape[2]):
                try:
                    state.atoms[h, :, d], self.lambdas[h, d] = solve_fused_path(
                        weights, targets[:, d], self._lambda_grid(h, d, iteration),
                        context=f"component {h + 1} coordinate {d + 1}")
                except EmptyComponentError:
                    break

        state.sigma2 = m_step_sigma2(psi, rows, state.atoms, self.hyper.a_sigma, self.hyper.b_sigma,
                                     dim=rows.shape[2], previous=state.sigma2)
        state.beta = safeguarded_beta_step(psi, self.unit_covariates, state.beta, self.prior_precision)
        min_eigenvalue = self.audit_positive_definite(fraction=settings.pd_audit_fraction)
        self.iteration_log.append({"iteration": iteration, "jitters": self.jitters,
                                   "audit_min_eigenvalue": min_eigenvalue})

    def audit_positive_definite(self, fraction: float = 1.0) -> float:
        n_subjects, n_scans = self.omega.shape[:2]
        cells = np.arange(n_subjects * n_scans)
        if fraction < 1.0:
            size = max(1, int(round(fraction * cells.size)))
            cells = np.sort(self.audit_rng.choice(cells, size=size, replace=False))
        subjects, scans = np.divmod(cells, n_scans)
        eigenvalues = np.linalg.eigvalsh(self.omega[subjects, scans])[:, 0]
        worst = int(np.argmin(eigenvalues))
        if eigenvalues[worst] <= 0:
            raise PositiveDefinitenessError(int(subjects[worst]) + 1, int(scans[worst]) + 1, float(eigenvalues[worst]))
        return float(eigenvalues[worst])

    def _objective(self, omega: np.ndarray) -> float:
        return precision_log_posterior(self.data, omega, self.state, self.unit_covariates, self.hyper, self.lambdas)

    def _monte_carlo_sd(self) -> float:
        """Half the gap between the objective at the two half-chain means"""
        halves = [0.5 * (m + np.swapaxes(m, -1, -2)) for m in self.half_means]
        try:
            return 0.5 * abs(self._objective(halves[0]) - self._objective(halves[1]))
        except np.linalg.LinAlgError:
            return 0.0

    def log_posterior(self) -> float:
        value = self._objective(self.omega)
        self.mc_sd = self._monte_carlo_sd()
        if self.iteration_log:
            self.iteration_log[-1]["log_posterior"] = value
            self.iteration_log[-1]["mc_sd"] = self.mc_sd
        return value

    def has_converged(self, previous: float, value: float) -> bool:
        return abs(value - previous) / max(1.0, abs(value)) < self.hyper.em_tol

    def check_trace(self, iteration: int) -> None:
        if len(self.trace) < 2:
            return
        change = self.trace[-1] - self.trace[-2]
        if change < -settings.mc_noise_band * self.mc_sd:
            self.consecutive_decreases += 1
        else:
            self.consecutive_decreases = 0
        if change < 0 and abs(change) / max(1.0, abs(self.trace[-1])) > settings.mc_oscillation_factor * self.hyper.em_tol:
            logger.warning(f"Log-posterior fell by {-change:.4g} at iteration {iteration}; "
                           f"consider raising mc_samples above {self.hyper.mc_samples}")
        if self.consecutive_decreases >= settings.max_consecutive_decreases:
            logger.error(f"{self.unit}: log-posterior fell beyond Monte Carlo noise "
                         f"{settings.max_consecutive_decreases} iterations in a row")
            raise NonMonotoneTraceError(self.unit, iteration, -change)

    def result(self) -> PrecisionFit:
        return PrecisionFit(omega=self.omega, state=self.state, log_posterior_trace=list(self.trace),
                            converged=self.converged, iterations=self.iterations, lambdas=self.lambdas.copy(),
                            jitters=self.jitters, iteration_log=list(self.iteration_log))


def fit_idpmac(panel: PanelDataset, hyper: HyperParams, seed: int, n_jobs: int = 1, standardize: bool = True,
               standardize_covariates: bool = True, freeze_lambda: bool = False, covariate_naive: bool = False,
               initial_state: Optional[MixtureState] = None) -> PrecisionFit:
    """Fit dynamic precision matrices for every subject jointly"""
    data, covariates = prepare_panel(panel, standardize, standardize_covariates)
    logger.info(f"Fitting precision model: N={panel.n_subjects}, V={panel.n_nodes}, T={panel.n_scans}, "
                f"H={hyper.n_components}, mc_samples={hyper.mc_samples}")
    estimator = PrecisionEstimator(data, covariates, hyper, seed, n_jobs=n_jobs, freeze_lambda=freeze_lambda,
                                   covariate_naive=covariate_naive, initial_state=initial_state)
    estimator.run_em()
    estimator.audit_positive_definite(fraction=1.0)
    logger.info(f"Precision model finished after {estimator.iterations} iterations "
                f"(converged={estimator.converged}, jitters={estimator.jitters})")
    return estimator.result()


def partial_correlations(fit: PrecisionFit) -> DynamicNetworkSet:
    """-omega_kl / sqrt(omega_kk omega_ll) with unit diagonal"""
    return DynamicNetworkSet(kind=NetworkKind.PARTIAL_CORRELATION, values=partial_correlation_matrices(fit.omega),
                             n_nodes=fit.omega.shape[-1])
