import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from settings import settings

logger = logging.getLogger(__name__)


@dataclass
class ColumnConditional:
    """Gaussian conditional of one off-diagonal column, batched over matrices"""
    precision: np.ndarray
    rhs: np.ndarray
    omega11_inv: np.ndarray
    gamma_rate: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return np.linalg.solve(self.precision, self.rhs[..., None])[..., 0]

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.precision)


def other_nodes(n_nodes: int, v: int) -> np.ndarray:
    return np.delete(np.arange(n_nodes), v)


def column_conditional(sigma: np.ndarray, scatter: np.ndarray, v: int, prior_precision: np.ndarray,
                       prior_shift: np.ndarray, alpha: float) -> ColumnConditional:
    """
    Conditional of column v given the rest, for a batch of (V, V) matrices.
    sigma is the current inverse of Omega; prior_precision (M,) is sum_h psi_h/sigma2_h and
    prior_shift (M, V-1) is sum_h psi_h atom_h/sigma2_h for that node.
    The column is N(C (prior_shift - s_v), C) with C^-1 = (s_vv + alpha) Omega_11^-1 + prior_precision I.
    """
    others = other_nodes(sigma.shape[-1], v)
    sig11 = sigma[:, others][:, :, others]
    sig12 = sigma[:, others, v]
    sig22 = sigma[:, v, v]
    omega11_inv = sig11 - sig12[:, :, None] * sig12[:, None, :] / sig22[:, None, None]
    s_vv = scatter[:, v, v]
    s_v = scatter[:, others, v]
    eye = np.eye(len(others))
    precision = (s_vv + alpha)[:, None, None] * omega11_inv + prior_precision[:, None, None] * eye
    return ColumnConditional(precision=precision, rhs=prior_shift - s_v, omega11_inv=omega11_inv,
                             gamma_rate=0.5 * (s_vv + alpha))


def robust_cholesky(matrices: np.ndarray) -> Tuple[np.ndarray, int]:
    """Batched Cholesky; matrices that fail get settings.cholesky_jitter * I added (growing tenfold)"""
    try:
        return np.linalg.cholesky(matrices), 0
    except np.linalg.LinAlgError:
        pass
    matrices = matrices.copy()
    eye = np.eye(matrices.shape[-1])
    jitters = 0
    jitter = settings.cholesky_jitter
    for _ in range(12):
        failing = np.linalg.eigvalsh(matrices)[:, 0] <= jitter
        matrices[failing] += jitter * eye
        jitters += int(failing.sum())
        try:
            return np.linalg.cholesky(matrices), jitters
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError("Cholesky failed after repeated jitter")


def draw_column(conditional: ColumnConditional, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, int]:
    """One draw of (omega_v, kappa) per matrix in the batch"""
    chol, jitters = robust_cholesky(conditional.precision)
    mean = np.linalg.solve(conditional.precision, conditional.rhs[..., None])[..., 0]
    z = rng.standard_normal(mean.shape)
    noise = np.linalg.solve(np.swapaxes(chol, -1, -2), z[..., None])[..., 0]
    kappa = rng.standard_gamma(1.5, size=len(mean)) / conditional.gamma_rate
    return mean + noise, kappa, jitters


def set_column(omega: np.ndarray, sigma: np.ndarray, v: int, omega_v: np.ndarray, kappa: np.ndarray,
               omega11_inv: np.ndarray) -> None:
    """Write column/row v of omega and update its inverse in place"""
    others = other_nodes(omega.shape[-1], v)
    omega[:, others, v] = omega_v
    omega[:, v, others] = omega_v
    u = np.einsum("mij,mj->mi", omega11_inv, omega_v)
    omega[:, v, v] = kappa + np.einsum("mi,mi->m", omega_v, u)
    block = omega11_inv + u[:, :, None] * u[:, None, :] / kappa[:, None, None]
    sigma[:, others[:, None], others[None, :]] = block
    sigma[:, others, v] = -u / kappa[:, None]
    sigma[:, v, others] = -u / kappa[:, None]
    sigma[:, v, v] = 1.0 / kappa


@dataclass
class GibbsResult:
    mean: np.ndarray
    first_half_mean: np.ndarray
    second_half_mean: np.ndarray
    jitters: int
    draws: Optional[np.ndarray] = None


def gibbs_sweeps(series: np.ndarray, omega: np.ndarray, responsibilities: np.ndarray, atoms: np.ndarray,
                 sigma2: np.ndarray, alpha: float, burn_in: int, n_samples: int, rng: np.random.Generator,
                 keep_draws: bool = False) -> GibbsResult:
    """
    Column-wise Gibbs sampling of one subject's precision matrices at every scan.
    series (V, T); omega (T, V, V) starting point; responsibilities (V, H, T);
    atoms (H, T, V-1). Returns the posterior mean over the kept sweeps.
    """
    n_nodes, n_scans = series.shape
    omega = np.array(omega, dtype=float)
    scatter = np.einsum("vt,ut->tvu", series, series)
    scaled = responsibilities / sigma2[None, :, None]
    prior_precision = scaled.sum(axis=1)
    prior_shift = np.einsum("vht,htd->vtd", scaled, atoms)

    total = np.zeros_like(omega)
    halves = [np.zeros_like(omega), np.zeros_like(omega)]
    draws = [] if keep_draws else None
    jitters = 0
    for sweep in range(burn_in + n_samples):
        sigma = np.linalg.inv(omega)
        for v in range(n_nodes):
            conditional = column_conditional(sigma, scatter, v, prior_precision[v], prior_shift[v], alpha)
            omega_v, kappa, used = draw_column(conditional, rng)
            jitters += used
            set_column(omega, sigma, v, omega_v, kappa, conditional.omega11_inv)
        if sweep >= burn_in:
            kept = sweep - burn_in
            total += omega
            halves[0 if kept < n_samples / 2 else 1] += omega
            if keep_draws:
                draws.append(omega.copy())

    n_first = int(np.ceil(n_samples / 2))
    n_second = n_samples - n_first
    mean = total / n_samples
    return GibbsResult(
        mean=0.5 * (mean + np.swapaxes(mean, -1, -2)),
        first_half_mean=halves[0] / n_first,
        second_half_mean=halves[1] / n_second if n_second else halves[0] / n_first,
        jitters=jitters,
        draws=np.stack(draws) if keep_draws else None,
    )
