import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from estimators.base_estimator import BaseEstimator, NonMonotoneTraceError, derive_seed
from lasso.fused_path import EmptyComponentError, solve_fused_path
from mixture.engine import (beta_log_prior, beta_prior_precision, e_step_responsibilities, m_step_sigma2,
                            mixture_log_likelihood, safeguarded_beta_step)
from mixture.mixture_state import MixtureState, init_mixture_state
from panel.dataset import DynamicNetworkSet, HyperParams, NetworkKind, PanelDataset
from panel.transforms import edge_pair, fisher_bound, fisher_transform, sliding_correlation
from settings import settings

logger = logging.getLogger(__name__)


def _log_cosh(gamma: np.ndarray) -> np.ndarray:
    return np.logaddexp(gamma, -gamma) - np.log(2.0)


def prior_moments(responsibilities: np.ndarray, atoms: np.ndarray, sigma2: np.ndarray):
    """sum_h psi/sigma2 and sum_h psi*atom/sigma2 for every (subject, scan)"""
    scaled = responsibilities / sigma2[None, :, None]
    return scaled.sum(axis=1), (scaled * atoms[None]).sum(axis=1)


def _cell_objective(gamma, sq_sum, cross, precision, shift, sigma_y2):
    quadratic = 0.5 * sq_sum * (1.0 + np.cosh(2.0 * gamma)) - cross * np.sinh(2.0 * gamma)
    return _log_cosh(gamma) - quadratic / (2.0 * sigma_y2) - 0.5 * precision * gamma ** 2 + shift * gamma


def _cell_derivatives(gamma, sq_sum, cross, precision, shift, sigma_y2):
    sinh2, cosh2 = np.sinh(2.0 * gamma), np.cosh(2.0 * gamma)
    first = np.tanh(gamma) - (sq_sum * sinh2 - 2.0 * cross * cosh2) / (2.0 * sigma_y2) - precision * gamma + shift
    second = 1.0 / np.cosh(gamma) ** 2 - (sq_sum * cosh2 - 2.0 * cross * sinh2) / sigma_y2 - precision
    return first, second


def per_observation_log_posterior(gamma, y_j, y_l, responsibilities, atoms, sigma2, sigma_y2) -> np.ndarray:
    """
    gamma-dependent log-posterior terms for every (subject, scan), up to terms free of gamma:
    -0.5 log(1 - rho^2) - (y_j^2 + y_l^2 - 2 rho y_j y_l) / (2 sigma_y2 (1 - rho^2)) - 0.5 sum_h psi (gamma - atom)^2 / sigma2
    """
    precision, shift = prior_moments(responsibilities, atoms, sigma2)
    return _cell_objective(gamma, y_j ** 2 + y_l ** 2, y_j * y_l, precision, shift, sigma_y2)


def newton_derivatives(gamma, y_j, y_l, responsibilities, atoms, sigma2, sigma_y2) -> Tuple[np.ndarray, np.ndarray]:
    precision, shift = prior_moments(responsibilities, atoms, sigma2)
    return _cell_derivatives(gamma, y_j ** 2 + y_l ** 2, y_j * y_l, precision, shift, sigma_y2)


def newton_update_gamma(gamma_curr, y_j, y_l, responsibilities, atoms, sigma2, sigma_y2,
                        tol: float = settings.newton_tol, max_iters: int = settings.newton_max_iters) -> np.ndarray:
    """
    Safeguarded Newton-Raphson on every (subject, scan) latent Fisher-z value.
    Steps that lower the per-observation objective are halved; points where the
    second derivative is not negative take a fixed gradient step instead.
    """
    bound = fisher_bound()
    gamma = np.clip(np.array(gamma_curr, dtype=float), -bound, bound)
    shape = gamma.shape
    precision, shift = prior_moments(responsibilities, atoms, sigma2)
    cells = [np.broadcast_to(x, shape).reshape(-1)
             for x in (y_j ** 2 + y_l ** 2, y_j * y_l, precision, shift)]
    gamma = gamma.reshape(-1)

    active = np.arange(gamma.size)
    for _ in range(max_iters):
        if active.size == 0:
            break
        args = [c[active] for c in cells] + [sigma_y2]
        g = gamma[active]
        first, second = _cell_derivatives(g, *args)
        concave = second < 0
        step = np.where(concave, -first / np.where(concave, second, -1.0), settings.newton_gradient_step * first)
        base = _cell_objective(g, *args)
        trial = np.clip(g + step, -bound, bound)
        worse = _cell_objective(trial, *args) < base
        for _ in range(settings.newton_max_halvings):
            if not worse.any():
                break
            step = np.where(worse, 0.5 * step, step)
            trial = np.clip(g + step, -bound, bound)
            worse = _cell_objective(trial, *args) < base
        trial = np.where(worse, g, trial)
        moved = np.abs(trial - g)
        gamma[active] = trial
        active = active[moved >= tol]
    return gamma.reshape(shape)


def pairwise_log_posterior(gamma, y_j, y_l, state: MixtureState, covariates, hyper: HyperParams,
                           sigma_y2: float, lambdas) -> float:
    """
    Log-posterior of one edge with the component indicators summed out: bivariate
    likelihood, mixture prior on gamma, fused penalty on atoms, Gamma(a, b) prior
    on each 1/sigma2 and Gaussian prior on beta.
    """
    sq_sum = y_j ** 2 + y_l ** 2
    quadratic = 0.5 * sq_sum * (1.0 + np.cosh(2.0 * gamma)) - y_j * y_l * np.sinh(2.0 * gamma)
    likelihood = np.sum(-np.log(2.0 * np.pi * sigma_y2) + _log_cosh(gamma) - quadratic / (2.0 * sigma_y2))
    mixture = mixture_log_likelihood(gamma, state, covariates)
    fused = -float(np.sum(np.asarray(lambdas) * np.abs(np.diff(state.atoms, axis=1)).sum(axis=1)))
    variance = float(np.sum(-(hyper.a_sigma - 1.0) * np.log(state.sigma2) - hyper.b_sigma / state.sigma2))
    prior_precision = beta_prior_precision(hyper.sigma_beta_diag, covariates.shape[1])
    return float(likelihood) + mixture + fused + variance + beta_log_prior(state.beta, prior_precision)


@dataclass
class EdgeFit:
    gamma: np.ndarray
    state: MixtureState
    log_posterior_trace: List[float]
    converged: bool
    iterations: int
    lambdas: np.ndarray
    edge: Tuple[int, int] = (1, 2)


class PairwiseEdgeEstimator(BaseEstimator):
    """EM for the latent Fisher-z trajectories of one edge across all subjects"""

    def __init__(self, y_j: np.ndarray, y_l: np.ndarray, covariates: np.ndarray, hyper: HyperParams, seed: int,
                 sigma_y2: float, unit: str = "edge", freeze_lambda: bool = False, covariate_naive: bool = False,
                 initial_state: Optional[MixtureState] = None):
        super().__init__(hyper, seed, unit)
        self.y_j = np.asarray(y_j, dtype=float)
        self.y_l = np.asarray(y_l, dtype=float)
        self.covariates = np.zeros((self.y_j.shape[0], 0)) if covariate_naive else np.asarray(covariates, dtype=float)
        self.sigma_y2 = sigma_y2
        self.freeze_lambda = freeze_lambda
        self.initial_state = initial_state
        self.prior_precision = beta_prior_precision(hyper.sigma_beta_diag, self.covariates.shape[1])
        self.lambdas = np.full(hyper.n_components, hyper.lambda_grid[0])
        self.lambda_history: List[np.ndarray] = []
        self.gamma = None
        self.state = None

    def initialize(self) -> None:
        n_scans = self.y_j.shape[1]
        window = min(settings.init_window, n_scans)
        if window < 2:
            raise ValueError(f"{self.unit}: at least two scans are required")
        self.gamma = fisher_transform(sliding_correlation(self.y_j, self.y_l, window))
        if self.initial_state is not None:
            self.state = self.initial_state.copy()
        else:
            self.state = init_mixture_state(self.gamma, self.hyper.n_components, self.covariates.shape[1], self.seed)

    def _lambda_grid(self, h: int, iteration: int):
        if self.freeze_lambda and iteration > 1:
            return [self.lambdas[h]]
        return self.hyper.lambda_grid

    def em_iteration(self, iteration: int) -> None:
        state = self.state
        psi = e_step_responsibilities(self.gamma, state, self.covariates)
        state.responsibilities = psi

        for h in range(state.n_components):
            mass = psi[:, h, :].sum(axis=0)
            if mass.sum() < settings.empty_component_mass:
                logger.debug(f"{self.unit}: component {h + 1} is empty, atoms frozen")
                continue
            weights = mass / (2.0 * state.sigma2[h])
            targets = np.where(mass > 0, (psi[:, h, :] * self.gamma).sum(axis=0) / np.where(mass > 0, mass, 1.0), 0.0)
            try:
                state.atoms[h], self.lambdas[h] = solve_fused_path(
                    weights, targets, self._lambda_grid(h, iteration), context=f"{self.unit} component {h + 1}")
            except EmptyComponentError:
                continue
        self.lambda_history.append(self.lambdas.copy())

        state.sigma2 = m_step_sigma2(psi, self.gamma, state.atoms, self.hyper.a_sigma, self.hyper.b_sigma,
                                     dim=1, previous=state.sigma2)
        state.beta = safeguarded_beta_step(psi, self.covariates, state.beta, self.prior_precision)
        self.gamma = newton_update_gamma(self.gamma, self.y_j, self.y_l, psi, state.atoms, state.sigma2,
                                         self.sigma_y2)

    def log_posterior(self) -> float:
        return pairwise_log_posterior(self.gamma, self.y_j, self.y_l, self.state, self.covariates, self.hyper,
                                      self.sigma_y2, self.lambdas)

    def check_trace(self, iteration: int) -> None:
        if len(self.trace) < 2 or not np.array_equal(self.lambda_history[-1], self.lambda_history[-2]):
            return
        drop = self.trace[-2] - self.trace[-1]
        if drop > settings.em_monotone_tol * max(1.0, abs(self.trace[-2])):
            logger.error(f"{self.unit}: log-posterior decreased by {drop:.3e} at iteration {iteration}")
            raise NonMonotoneTraceError(self.unit, iteration, drop)

    def result(self, edge: Tuple[int, int] = (1, 2)) -> EdgeFit:
        return EdgeFit(gamma=self.gamma, state=self.state, log_posterior_trace=list(self.trace),
                       converged=self.converged, iterations=self.iterations, lambdas=self.lambdas.copy(), edge=edge)


def fit_edge(y_j, y_l, covariates, hyper: HyperParams, seed: int, sigma_y2: Optional[float] = None,
             freeze_lambda: bool = False, covariate_naive: bool = False,
             initial_state: Optional[MixtureState] = None, edge: Tuple[int, int] = (1, 2)) -> EdgeFit:
    """Fit one edge; sigma_y2 defaults to hyper.sigma_y2, then to the mean variance of the two series"""
    y_j = np.asarray(y_j, dtype=float)
    y_l = np.asarray(y_l, dtype=float)
    if sigma_y2 is None:
        sigma_y2 = hyper.sigma_y2 or float(np.mean([y_j.var(axis=1, ddof=1).mean(), y_l.var(axis=1, ddof=1).mean()]))
    estimator = PairwiseEdgeEstimator(y_j, y_l, covariates, hyper, seed, sigma_y2, unit=f"edge {edge}",
                                      freeze_lambda=freeze_lambda, covariate_naive=covariate_naive,
                                      initial_state=initial_state)
    estimator.run_em()
    return estimator.result(edge)


def _fit_edge_task(index: int, y_j, y_l, covariates, hyper, seed, sigma_y2, freeze_lambda, covariate_naive,
                   edge) -> EdgeFit:
    try:
        return fit_edge(y_j, y_l, covariates, hyper, derive_seed(seed, index), sigma_y2, freeze_lambda,
                        covariate_naive, edge=edge)
    except Exception as e:
        logger.warning(f"Edge {edge} failed ({e}); retrying once with a fresh seed")
        return fit_edge(y_j, y_l, covariates, hyper, derive_seed(seed, index, 1), sigma_y2, freeze_lambda,
                        covariate_naive, edge=edge)


@dataclass
class PairwiseNetworkFit:
    networks: DynamicNetworkSet
    edge_fits: List[EdgeFit] = field(default_factory=list)

    def labels(self) -> np.ndarray:
        """(subject, scan, edge) most responsible component"""
        return np.stack([fit.state.labels() for fit in self.edge_fits], axis=-1)

    @property
    def converged(self) -> bool:
        return all(fit.converged for fit in self.edge_fits)

    def diagnostics(self) -> pd.DataFrame:
        rows = []
        for k, fit in enumerate(self.edge_fits):
            rows.append({
                "edge": k + 1,
                "node_j": fit.edge[0],
                "node_l": fit.edge[1],
                "iterations": fit.iterations,
                "converged": fit.converged,
                "log_posterior": fit.log_posterior_trace[-1] if fit.log_posterior_trace else np.nan,
                "lambdas": ";".join(f"{lam:g}" for lam in fit.lambdas),
            })
        return pd.DataFrame(rows)


def prepare_panel(panel: PanelDataset, standardize: bool = True, standardize_covariates: bool = True):
    data = panel.standardized().data if standardize else panel.data
    covariates = panel.standardized_covariates() if standardize_covariates else np.array(panel.covariates)
    return data, covariates


def fit_all_edges(panel: PanelDataset, hyper: HyperParams, seed: int, n_jobs: int = 1, standardize: bool = True,
                  standardize_covariates: bool = True, freeze_lambda: bool = False,
                  covariate_naive: bool = False) -> PairwiseNetworkFit:
    """Fit every edge independently and assemble (subject, scan, edge) Fisher-z networks"""
    if panel.n_nodes < 2:
        raise ValueError("network estimation needs at least two nodes")
    data, covariates = prepare_panel(panel, standardize, standardize_covariates)
    sigma_y2 = hyper.sigma_y2 or float(np.var(data, axis=2, ddof=1).mean())
    n_edges = panel.n_edges
    logger.info(f"Fitting {n_edges} edges for {panel.n_subjects} subjects with H={hyper.n_components}, "
                f"sigma_y2={sigma_y2:.4f}, n_jobs={n_jobs}")

    pairs = [edge_pair(k + 1, panel.n_nodes) for k in range(n_edges)]
    edge_fits = Parallel(n_jobs=n_jobs)(
        delayed(_fit_edge_task)(k, data[:, j - 1], data[:, l - 1], covariates, hyper, seed, sigma_y2,
                                freeze_lambda, covariate_naive, (j, l))
        for k, (j, l) in enumerate(pairs))

    values = np.stack([fit.gamma for fit in edge_fits], axis=-1)
    networks = DynamicNetworkSet(kind=NetworkKind.PAIRWISE_FISHER_Z, values=values, n_nodes=panel.n_nodes)
    n_converged = sum(fit.converged for fit in edge_fits)
    logger.info(f"Edge fits finished: {n_converged}/{n_edges} converged")
    return PairwiseNetworkFit(networks=networks, edge_fits=list(edge_fits))
