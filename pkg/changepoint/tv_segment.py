import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from lasso.fused_path import chain_dynamic_program
from settings import settings

logger = logging.getLogger(__name__)

CHANGE_TOL = 1e-8


def _as_matrix(series) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    if series.ndim != 2 or series.shape[0] == 0:
        raise ValueError(f"series must be a (T, E) matrix, got shape {series.shape}")
    return series


def step_gram(n_scans: int) -> np.ndarray:
    """Gram matrix of the centered step design: C_ij = min(i, j) (T - max(i, j)) / T for i, j in 1..T-1"""
    idx = np.arange(1, n_scans)
    lo = np.minimum.outer(idx, idx)
    hi = np.maximum.outer(idx, idx)
    return lo * (n_scans - hi) / n_scans


def piecewise_from_jumps(series: np.ndarray, jumps: np.ndarray) -> np.ndarray:
    """u_t = mean + sum of jumps before t, re-centered so u and the series share their mean"""
    steps = np.vstack([np.zeros((1, series.shape[1])), np.cumsum(jumps, axis=0)])
    return series.mean(axis=0) + steps - steps.mean(axis=0)


def changepoints_of(piecewise: np.ndarray) -> List[int]:
    """1-based scans t whose value differs from scan t-1"""
    norms = np.linalg.norm(np.diff(piecewise, axis=0), axis=1)
    return [int(t) + 2 for t in np.flatnonzero(norms > CHANGE_TOL)]


def tv_objective(series, piecewise, lambda_u: float) -> float:
    """||r - u||^2 + (lambda_u / E) sum_t ||u_{t+1} - u_t||"""
    series = _as_matrix(series)
    piecewise = _as_matrix(piecewise)
    n_edges = series.shape[1]
    fidelity = float(np.sum((series - piecewise) ** 2))
    return fidelity + lambda_u / n_edges * float(np.linalg.norm(np.diff(piecewise, axis=0), axis=1).sum())


def _block_descent(gram: np.ndarray, correlation: np.ndarray, jumps: np.ndarray, active: List[int],
                   threshold: float, tol: float, max_sweeps: int) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Cyclic group soft-thresholding over the active jumps.
    correlation holds X'(Y - X jumps) for the current jumps and is kept in sync.
    """
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_change = 0.0
        for i in active:
            c_ii = gram[i, i]
            s = correlation[i] + c_ii * jumps[i]
            norm = np.linalg.norm(s)
            new = (1.0 - threshold / norm) * s / c_ii if norm > threshold else np.zeros_like(s)
            delta = new - jumps[i]
            if np.any(delta):
                correlation -= np.outer(gram[:, i], delta)
                jumps[i] = new
                max_change = max(max_change, float(np.abs(delta).max()))
        if max_change <= tol:
            break
    return jumps, correlation, sweeps


def tv_segment(series, lambda_u: float, tol: float = settings.cp_tol,
               max_sweeps: int = settings.cp_max_sweeps) -> Tuple[np.ndarray, List[int]]:
    """
    Piecewise-constant approximation of a (T, E) series under the group total-variation penalty
    ||r - u||^2 + (lambda_u / E) sum_t ||u_{t+1} - u_t||. Returns (u, change points).

    Jumps enter one at a time by largest KKT violation and the active set is refined by
    block coordinate descent; with E = 1 the exact chain solution is used as the starting point.
    """
    series = _as_matrix(series)
    if lambda_u < 0:
        raise ValueError(f"lambda_u must be non-negative, got {lambda_u}")
    n_scans, n_edges = series.shape
    if lambda_u == 0 or n_scans == 1:
        piecewise = series.copy()
        return piecewise, changepoints_of(piecewise)

    threshold = lambda_u / (2.0 * n_edges)
    centered = series - series.mean(axis=0)
    gram = step_gram(n_scans)
    jumps = np.zeros((n_scans - 1, n_edges))
    if n_edges == 1:
        exact = chain_dynamic_program(series[:, 0], np.ones(n_scans), 0.5 * lambda_u)
        jumps[:, 0] = np.diff(exact)
    correlation = -np.cumsum(centered, axis=0)[:-1] - gram @ jumps
    scale = max(1.0, float(np.abs(centered).max()))

    active = [int(i) for i in np.flatnonzero(np.linalg.norm(jumps, axis=1) > 0)]
    total_sweeps = 0
    while True:
        if active:
            jumps, correlation, sweeps = _block_descent(gram, correlation, jumps, active, threshold,
                                                        tol * scale, max_sweeps)
            total_sweeps += sweeps
            active = [i for i in active if np.any(jumps[i])]
        violation = np.linalg.norm(correlation, axis=1) - threshold * (1.0 + 1e-9)
        if active:
            violation[active] = -np.inf
        worst = int(np.argmax(violation))
        if violation[worst] <= 0 or total_sweeps >= max_sweeps:
            break
        active.append(worst)

    if total_sweeps >= max_sweeps:
        logger.warning(f"Total-variation segmentation stopped after {total_sweeps} sweeps "
                       f"(lambda_u={lambda_u:.4g}, T={n_scans}, E={n_edges})")
    piecewise = piecewise_from_jumps(series, jumps)
    return piecewise, changepoints_of(piecewise)


def robust_noise_scale(series) -> float:
    """1.4826 * median |successive difference| / sqrt(2), pooled over columns"""
    series = _as_matrix(series)
    if series.shape[0] < 2:
        return 0.0
    return float(1.4826 * np.median(np.abs(np.diff(series, axis=0))) / math.sqrt(2.0))


def default_lambda_grid(series, multipliers: Sequence[float] = settings.cp_lambda_multipliers) -> Tuple[float, ...]:
    """multipliers * sigma_hat * sqrt(T E) * E, with sigma_hat from successive differences"""
    series = _as_matrix(series)
    n_scans, n_edges = series.shape
    sigma = robust_noise_scale(series)
    if sigma <= 0:
        sigma = float(np.std(series)) or 1.0
    base = sigma * math.sqrt(n_scans * n_edges) * n_edges
    return tuple(float(m) * base for m in multipliers)


def segment_refit_rss(series: np.ndarray, changepoints: Sequence[int]) -> float:
    """Residual sum of squares of the least-squares piecewise-constant fit on the given segments"""
    bounds = [0] + [t - 1 for t in changepoints] + [series.shape[0]]
    rss = 0.0
    for start, stop in zip(bounds, bounds[1:]):
        segment = series[start:stop]
        rss += float(np.sum((segment - segment.mean(axis=0)) ** 2))
    return rss


def changepoint_bic(series: np.ndarray, changepoints: Sequence[int]) -> float:
    """T ln(RSS/T) + (#change points) ln(T) E_eff, E_eff = 1 for a single edge and ln(E) + 1 otherwise"""
    n_scans, n_edges = series.shape
    effective = 1.0 if n_edges == 1 else math.log(n_edges) + 1.0
    rss = max(segment_refit_rss(series, changepoints) / n_scans, np.finfo(float).tiny)
    return n_scans * math.log(rss) + len(changepoints) * math.log(n_scans) * effective


@dataclass
class LambdaPathPoint:
    lambda_u: float
    changepoints: List[int]
    bic: float


def lambda_path(series, grid: Optional[Sequence[float]] = None) -> List[LambdaPathPoint]:
    series = _as_matrix(series)
    grid = [float(x) for x in (default_lambda_grid(series) if grid is None else grid)]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError(f"lambda_u grid must be non-empty and strictly increasing: {grid}")
    path = []
    for lam in grid:
        _, cps = tv_segment(series, lam)
        path.append(LambdaPathPoint(lambda_u=lam, changepoints=cps, bic=changepoint_bic(series, cps)))
    counts = [len(p.changepoints) for p in path]
    if any(b > a for a, b in zip(counts, counts[1:])):
        logger.warning(f"Change-point counts not monotone along the lambda_u path: {counts}")
    return path


def select_lambda_u(series, grid: Optional[Sequence[float]] = None) -> float:
    """Grid value with the smallest modified BIC; ties go to the larger value"""
    path = lambda_path(series, grid)
    best = path[0]
    for point in path[1:]:
        if point.bic <= best.bic:
            best = point
    return best.lambda_u
