import logging
from typing import List, Optional

import numpy as np

from panel.dataset import HyperParams

logger = logging.getLogger(__name__)


class NonFiniteLogPosterior(Exception):
    """Raised when an EM iterate produces a non-finite log-posterior"""
    def __init__(self, unit: str, iteration: int):
        self.unit = unit
        self.iteration = iteration
        super().__init__(f"Non-finite log-posterior for {unit} at EM iteration {iteration}")


class NonMonotoneTraceError(Exception):
    """Raised when the traced log-posterior falls further than the estimator tolerates"""
    def __init__(self, unit: str, iteration: int, drop: float):
        self.unit = unit
        self.iteration = iteration
        self.drop = drop
        super().__init__(f"Log-posterior of {unit} decreased by {drop:.3e} at EM iteration {iteration}")


def derive_seed(*keys: int) -> int:
    """Deterministic 32-bit seed from a global seed and work-unit indices"""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


class BaseEstimator:
    """EM driver; subclasses supply initialization, one iteration and the traced objective"""

    def __init__(self, hyper: HyperParams, seed: int, unit: str):
        self.hyper = hyper
        self.seed = seed
        self.unit = unit
        self.trace: List[float] = []
        self.converged = False
        self.iterations = 0

    def run_em(self) -> None:
        self.initialize()
        previous: Optional[float] = None
        for iteration in range(1, self.hyper.max_em_iters + 1):
            self.em_iteration(iteration)
            value = self.log_posterior()
            if not np.isfinite(value):
                logger.error(f"{self.unit}: log-posterior became {value} at iteration {iteration}")
                raise NonFiniteLogPosterior(self.unit, iteration)
            self.trace.append(value)
            self.iterations = iteration
            self.check_trace(iteration)
            logger.debug(f"{self.unit}: iteration {iteration}, log-posterior {value:.6f}")
            if previous is not None and self.has_converged(previous, value):
                self.converged = True
                break
            previous = value
        if not self.converged:
            logger.info(f"{self.unit}: stopped after {self.iterations} iterations without meeting em_tol")

    def has_converged(self, previous: float, value: float) -> bool:
        return abs(value - previous) < self.hyper.em_tol

    def check_trace(self, iteration: int) -> None:
        pass

    def initialize(self) -> None:
        raise NotImplementedError("Not implemented method initialize")

    def em_iteration(self, iteration: int) -> None:
        raise NotImplementedError("Not implemented method em_iteration")

    def log_posterior(self) -> float:
        raise NotImplementedError("Not implemented method log_posterior")
