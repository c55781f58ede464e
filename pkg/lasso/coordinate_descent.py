import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from settings import settings

logger = logging.getLogger(__name__)


class LassoConvergenceError(Exception):
    """Raised when coordinate descent hits the sweep cap"""
    def __init__(self, kkt_residual: float, coefficients: np.ndarray, sweeps: int):
        self.kkt_residual = kkt_residual
        self.coefficients = coefficients
        self.sweeps = sweeps
        super().__init__(f"Lasso did not converge after {sweeps} sweeps (KKT residual {kkt_residual:.3e})")


class DenseDesign:
    """Explicit n x p design matrix"""

    def __init__(self, matrix: np.ndarray):
        self.matrix = np.asarray(matrix, dtype=float)
        if self.matrix.ndim != 2:
            raise ValueError("design must be a matrix")

    @property
    def shape(self):
        return self.matrix.shape

    def column_sq_norms(self) -> np.ndarray:
        return np.einsum("ij,ij->j", self.matrix, self.matrix)

    def column_dot(self, j: int, residual: np.ndarray) -> float:
        return float(self.matrix[:, j] @ residual)

    def update_residual(self, residual: np.ndarray, j: int, delta: float) -> None:
        residual -= delta * self.matrix[:, j]

    def predict(self, coefficients: np.ndarray) -> np.ndarray:
        return self.matrix @ coefficients

    def gradient(self, residual: np.ndarray) -> np.ndarray:
        return self.matrix.T @ residual

    def to_dense(self) -> np.ndarray:
        return self.matrix


class CumulativeDesign:
    """
    Lower-triangular design with column s equal to sqrt(w_t) for t >= s.
    Coefficients are a level followed by successive differences, so the
    prediction at scan t is sqrt(w_t) * (eta_0 + ... + eta_t).
    """

    def __init__(self, sqrt_weights: np.ndarray):
        self.sqrt_weights = np.asarray(sqrt_weights, dtype=float)
        self._suffix = np.cumsum((self.sqrt_weights ** 2)[::-1])[::-1]

    @property
    def shape(self):
        n = len(self.sqrt_weights)
        return n, n

    def column_sq_norms(self) -> np.ndarray:
        return self._suffix.copy()

    def column_dot(self, j: int, residual: np.ndarray) -> float:
        return float(self.sqrt_weights[j:] @ residual[j:])

    def update_residual(self, residual: np.ndarray, j: int, delta: float) -> None:
        residual[j:] -= delta * self.sqrt_weights[j:]

    def predict(self, coefficients: np.ndarray) -> np.ndarray:
        return self.sqrt_weights * np.cumsum(coefficients)

    def gradient(self, residual: np.ndarray) -> np.ndarray:
        return np.cumsum((self.sqrt_weights * residual)[::-1])[::-1]

    def to_dense(self) -> np.ndarray:
        return np.tril(np.repeat(self.sqrt_weights[:, None], len(self.sqrt_weights), axis=1))


Design = Union[DenseDesign, CumulativeDesign]


@dataclass
class LassoProblem:
    """Minimize 0.5 * ||y - X b||^2 + penalty * sum(|b_j| for masked j)"""
    design: Design
    response: np.ndarray
    penalty: float
    penalize_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if isinstance(self.design, np.ndarray):
            self.design = DenseDesign(self.design)
        self.response = np.asarray(self.response, dtype=float)
        n, p = self.design.shape
        if n < 1 or p < 1:
            raise ValueError(f"empty lasso problem ({n} x {p})")
        if self.response.shape != (n,):
            raise ValueError(f"response has shape {self.response.shape}, expected ({n},)")
        if self.penalty < 0:
            raise ValueError(f"penalty must be non-negative, got {self.penalty}")
        if not np.all(np.isfinite(self.response)):
            raise ValueError("response must be finite")
        if self.penalize_mask is None:
            self.penalize_mask = np.ones(p, dtype=bool)
        self.penalize_mask = np.asarray(self.penalize_mask, dtype=bool)
        if self.penalize_mask.shape != (p,):
            raise ValueError("penalize_mask must have one entry per column")

    def objective(self, residual: np.ndarray, coefficients: np.ndarray) -> float:
        return 0.5 * float(residual @ residual) + self.penalty * float(np.abs(coefficients[self.penalize_mask]).sum())


def soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


def kkt_residual(problem: LassoProblem, coefficients: np.ndarray, residual: np.ndarray) -> float:
    """Largest violation of the lasso optimality conditions"""
    gradient = problem.design.gradient(residual)
    mask = problem.penalize_mask
    lam = problem.penalty
    norms = problem.design.column_sq_norms()
    violation = np.abs(gradient)
    penalized = mask & (norms > 0)
    zero = penalized & (coefficients == 0)
    active = penalized & (coefficients != 0)
    violation[zero] = np.maximum(0.0, np.abs(gradient[zero]) - lam)
    violation[active] = np.abs(gradient[active] - lam * np.sign(coefficients[active]))
    violation[norms == 0] = 0.0
    return float(violation.max()) if violation.size else 0.0


def solve_lasso(problem: LassoProblem, initial: Optional[np.ndarray] = None,
                max_sweeps: int = settings.lasso_max_sweeps, tol: float = settings.lasso_tol) -> np.ndarray:
    """
    Cyclic coordinate descent.
    Returns once the KKT residual falls below settings.lasso_kkt_tol. Steps
    below tol only end the run when the residual has also stopped shrinking,
    and the remaining gap is logged.
    """
    design = problem.design
    _, p = design.shape
    coefficients = np.zeros(p) if initial is None else np.array(initial, dtype=float)
    norms = design.column_sq_norms()
    coefficients[norms == 0] = 0.0
    residual = problem.response - design.predict(coefficients)
    mask = problem.penalize_mask
    lam = problem.penalty
    objective = problem.objective(residual, coefficients)
    previous_kkt = np.inf

    for sweep in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(p):
            if norms[j] == 0:
                continue
            rho = design.column_dot(j, residual) + norms[j] * coefficients[j]
            updated = (soft_threshold(rho, lam) if mask[j] else rho) / norms[j]
            delta = updated - coefficients[j]
            if delta != 0.0:
                design.update_residual(residual, j, delta)
                coefficients[j] = updated
                max_change = max(max_change, abs(delta))

        new_objective = problem.objective(residual, coefficients)
        assert new_objective <= objective + 1e-9 * max(1.0, abs(objective)), \
            f"coordinate descent sweep increased the objective ({objective} -> {new_objective})"
        objective = new_objective
        kkt = kkt_residual(problem, coefficients, residual)
        if kkt <= settings.lasso_kkt_tol:
            logger.debug(f"Lasso converged after {sweep} sweeps")
            return coefficients
        if max_change <= tol and kkt >= previous_kkt:
            logger.warning(f"Lasso stalled after {sweep} sweeps with KKT residual {kkt:.3e} "
                           f"above {settings.lasso_kkt_tol:g}")
            return coefficients
        previous_kkt = kkt

    raise LassoConvergenceError(kkt_residual(problem, coefficients, residual), coefficients, max_sweeps)
