import logging
import math
from typing import Sequence, Tuple

import numpy as np

from lasso.coordinate_descent import CumulativeDesign, LassoConvergenceError, LassoProblem, solve_lasso
from settings import settings

logger = logging.getLogger(__name__)


class EmptyComponentError(Exception):
    """Raised when a fused problem carries no positive weight"""
    def __init__(self, context: str = ""):
        self.context = context
        super().__init__(f"All fused-lasso weights are zero{' for ' + context if context else ''}")


def chain_dynamic_program(targets: Sequence[float], weights: Sequence[float], penalty: float) -> np.ndarray:
    """
    Exact minimizer of 0.5 * sum(w_t (y_t - b_t)^2) + penalty * sum(|b_t - b_{t-1}|)
    for strictly positive weights, by forward derivative messages and back-pointers.
    """
    y = [float(v) for v in targets]
    w = [float(v) for v in weights]
    n = len(y)
    if n == 1 or penalty == 0:
        return np.array(y)

    lam = float(penalty)
    x = [0.0] * (2 * n)
    a = [0.0] * (2 * n)
    b = [0.0] * (2 * n)
    tm = [0.0] * (n - 1)
    tp = [0.0] * (n - 1)

    tm[0] = -lam / w[0] + y[0]
    tp[0] = lam / w[0] + y[0]
    left, right = n - 1, n
    x[left], x[right] = tm[0], tp[0]
    a[left], b[left] = w[0], -w[0] * y[0] + lam
    a[right], b[right] = -w[0], w[0] * y[0] + lam
    a_first, b_first = w[1], -lam - w[1] * y[1]
    a_last, b_last = -w[1], -lam + w[1] * y[1]

    for k in range(1, n - 1):
        a_lo, b_lo = a_first, b_first
        lo = left
        while lo <= right:
            if a_lo * x[lo] + b_lo > -lam:
                break
            a_lo += a[lo]
            b_lo += b[lo]
            lo += 1
        tm[k] = (-lam - b_lo) / a_lo
        left = lo - 1
        x[left] = tm[k]

        a_hi, b_hi = a_last, b_last
        hi = right
        while hi >= left:
            if -a_hi * x[hi] - b_hi < lam:
                break
            a_hi += a[hi]
            b_hi += b[hi]
            hi -= 1
        tp[k] = (lam + b_hi) / (-a_hi)
        right = hi + 1
        x[right] = tp[k]

        a[left], b[left] = a_lo, b_lo + lam
        a[right], b[right] = a_hi, b_hi + lam
        a_first, b_first = w[k + 1], -lam - w[k + 1] * y[k + 1]
        a_last, b_last = -w[k + 1], -lam + w[k + 1] * y[k + 1]

    a_lo, b_lo = a_first, b_first
    lo = left
    while lo <= right:
        if a_lo * x[lo] + b_lo > 0:
            break
        a_lo += a[lo]
        b_lo += b[lo]
        lo += 1

    solution = [0.0] * n
    solution[n - 1] = -b_lo / a_lo
    for k in range(n - 2, -1, -1):
        if solution[k + 1] > tp[k]:
            solution[k] = tp[k]
        elif solution[k + 1] < tm[k]:
            solution[k] = tm[k]
        else:
            solution[k] = solution[k + 1]
    return np.array(solution)


def fused_objective(atoms: np.ndarray, weights: np.ndarray, targets: np.ndarray, penalty: float) -> float:
    """sum(w_t (target_t - atom_t)^2) + penalty * total variation"""
    return float(np.sum(weights * (targets - atoms) ** 2) + penalty * np.abs(np.diff(atoms)).sum())


def fill_unweighted(values: np.ndarray, positive: np.ndarray) -> np.ndarray:
    """Expand values fitted on positive-weight scans; other scans carry the previous fitted value"""
    index = np.where(positive, np.arange(len(positive)), -1)
    index = np.maximum.accumulate(index)
    index[index < 0] = np.flatnonzero(positive)[0]
    full = np.empty(len(positive))
    full[positive] = values
    return full[index]


def solve_fused_penalty(weights: np.ndarray, targets: np.ndarray, penalty: float,
                        context: str = "") -> np.ndarray:
    """Fit on positive-weight scans for one penalty; returns the difference coefficients"""
    sqrt_w = np.sqrt(weights)
    start = np.diff(chain_dynamic_program(targets, 2.0 * weights, penalty), prepend=0.0)
    mask = np.ones(len(weights), dtype=bool)
    mask[0] = False
    problem = LassoProblem(CumulativeDesign(sqrt_w), sqrt_w * targets, 0.5 * penalty, mask)
    try:
        return solve_lasso(problem, initial=start)
    except LassoConvergenceError as e:
        logger.warning(f"Fused lasso did not converge{' for ' + context if context else ''}: {e}")
        return e.coefficients


def bic_score(rss: float, n: int, k: int) -> float:
    return n * math.log(max(rss / n, np.finfo(float).tiny)) + k * math.log(n)


def solve_fused_path(weights, targets, lambda_grid, context: str = "") -> Tuple[np.ndarray, float]:
    """
    Weighted fused lasso over a penalty grid; returns the atoms and the
    penalty with the smallest BIC (ties go to the larger penalty).
    """
    weights = np.asarray(weights, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if weights.shape != targets.shape or weights.ndim != 1:
        raise ValueError("weights and targets must be vectors of equal length")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and non-negative")
    grid = [float(lam) for lam in lambda_grid]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError(f"lambda grid must be non-empty and strictly increasing: {grid}")

    positive = weights > settings.fused_weight_floor * weights.max()
    if not positive.any():
        raise EmptyComponentError(context)
    w, y = weights[positive], targets[positive]
    n = len(w)

    best_atoms, best_lambda, best_bic = None, None, np.inf
    for lam in grid:
        eta = solve_fused_penalty(w, y, lam, context)
        fitted = np.cumsum(eta)
        rss = float(np.sum(w * (y - fitted) ** 2))
        k = int(np.sum(np.abs(eta[1:]) > settings.fused_zero_tol)) + 1
        bic = bic_score(rss, n, k)
        logger.debug(f"Fused path {context} lambda={lam}: rss={rss:.4g}, changes={k - 1}, bic={bic:.4g}")
        if bic <= best_bic:
            best_atoms, best_lambda, best_bic = fitted, lam, bic
    return fill_unweighted(best_atoms, positive), best_lambda
