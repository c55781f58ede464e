import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from panel.transforms import correlation_from_precision, inverse_fisher, partial_correlation_matrices, upper_triangle
from settings import settings

logger = logging.getLogger(__name__)


class PanelValidationError(Exception):
    """Raised when panel data or covariates violate the dataset invariants"""
    def __init__(self, reason: str, subject: Optional[int] = None, node: Optional[int] = None):
        self.reason = reason
        self.subject = subject
        self.node = node
        location = []
        if subject is not None:
            location.append(f"subject {subject}")
        if node is not None:
            location.append(f"node {node}")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{reason}{suffix}")


def _read_only(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class PanelDataset:
    """Multi-subject node time series (subject, node, scan) with per-subject covariates"""
    data: np.ndarray
    covariates: np.ndarray
    subject_ids: Tuple[str, ...] = ()
    node_names: Tuple[str, ...] = ()
    source_hash: str = ""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3:
            raise PanelValidationError(f"data must be a (subjects, nodes, scans) tensor, got {data.ndim} dimensions")
        n_subjects, n_nodes, n_scans = data.shape
        if n_subjects < 1 or n_nodes < 1 or n_scans < 1:
            raise PanelValidationError(f"empty panel with shape {data.shape}")

        missing = np.argwhere(np.isnan(data))
        if len(missing):
            i, v, _ = missing[0]
            raise PanelValidationError("NaN present", subject=int(i) + 1, node=int(v) + 1)
        infinite = np.argwhere(~np.isfinite(data))
        if len(infinite):
            i, v, _ = infinite[0]
            raise PanelValidationError("non-finite value", subject=int(i) + 1, node=int(v) + 1)
        if n_scans > 1:
            constant = np.argwhere(np.ptp(data, axis=2) == 0)
            if len(constant):
                i, v = constant[0]
                raise PanelValidationError("constant (zero-variance) node series", subject=int(i) + 1, node=int(v) + 1)

        covariates = np.asarray(self.covariates, dtype=float)
        if covariates.size == 0:
            covariates = np.zeros((n_subjects, 0))
        if covariates.ndim == 1:
            covariates = covariates.reshape(-1, 1)
        if covariates.shape[0] != n_subjects:
            raise PanelValidationError(
                f"dimension mismatch: {covariates.shape[0]} covariate rows for {n_subjects} subjects")
        if not np.all(np.isfinite(covariates)):
            i = int(np.argwhere(~np.isfinite(covariates))[0][0])
            raise PanelValidationError("non-finite covariate", subject=i + 1)

        subject_ids = tuple(self.subject_ids) or tuple(f"S{i + 1:03d}" for i in range(n_subjects))
        if len(subject_ids) != n_subjects:
            raise PanelValidationError(f"dimension mismatch: {len(subject_ids)} subject ids for {n_subjects} subjects")
        node_names = tuple(self.node_names) or tuple(f"node{v + 1}" for v in range(n_nodes))
        if len(node_names) != n_nodes:
            raise PanelValidationError(f"dimension mismatch: {len(node_names)} node names for {n_nodes} nodes")

        object.__setattr__(self, "data", _read_only(data))
        object.__setattr__(self, "covariates", _read_only(covariates))
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in subject_ids))
        object.__setattr__(self, "node_names", tuple(str(n) for n in node_names))

    @property
    def n_subjects(self) -> int:
        return self.data.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.data.shape[1]

    @property
    def n_scans(self) -> int:
        return self.data.shape[2]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_edges(self) -> int:
        return self.n_nodes * (self.n_nodes - 1) // 2

    def mean_series_variance(self) -> float:
        """Mean over subjects and nodes of the per-series sample variance"""
        return float(np.var(self.data, axis=2, ddof=1).mean())

    def with_data(self, data: np.ndarray) -> "PanelDataset":
        return replace(self, data=data)

    def demeaned(self) -> "PanelDataset":
        return self.with_data(self.data - self.data.mean(axis=2, keepdims=True))

    def standardized(self) -> "PanelDataset":
        """Zero mean, unit variance per subject and node"""
        centered = self.data - self.data.mean(axis=2, keepdims=True)
        scale = centered.std(axis=2, ddof=1, keepdims=True)
        return self.with_data(centered / scale)

    def standardized_covariates(self) -> np.ndarray:
        """Covariates scaled to zero mean and unit variance; constant columns become zero"""
        centered = self.covariates - self.covariates.mean(axis=0, keepdims=True)
        scale = self.covariates.std(axis=0, keepdims=True)
        scale = np.where(scale > 0, scale, 1.0)
        return centered / scale


class NetworkKind(str, Enum):
    PAIRWISE_FISHER_Z = "pairwise_fisher_z"
    PRECISION = "precision"
    PARTIAL_CORRELATION = "partial_correlation"


@dataclass(frozen=True)
class DynamicNetworkSet:
    """
    Per-subject, per-scan networks.
    PAIRWISE_FISHER_Z values are (subject, scan, edge) in row-major upper-triangle order;
    the matrix kinds are (subject, scan, node, node).
    """
    kind: NetworkKind
    values: np.ndarray
    n_nodes: int

    def __post_init__(self):
        kind = NetworkKind(self.kind)
        values = np.asarray(self.values, dtype=float)
        n_edges = self.n_nodes * (self.n_nodes - 1) // 2
        if kind == NetworkKind.PAIRWISE_FISHER_Z:
            if values.ndim != 3 or values.shape[2] != n_edges:
                raise PanelValidationError(f"pairwise networks need shape (N, T, {n_edges}), got {values.shape}")
        else:
            if values.ndim != 4 or values.shape[2:] != (self.n_nodes, self.n_nodes):
                raise PanelValidationError(
                    f"matrix networks need shape (N, T, {self.n_nodes}, {self.n_nodes}), got {values.shape}")
            if not np.allclose(values, np.swapaxes(values, 2, 3), atol=1e-10):
                raise PanelValidationError("network matrices are not symmetric")
        if not np.all(np.isfinite(values)):
            raise PanelValidationError("network values must be finite")
        if kind == NetworkKind.PRECISION and values.size:
            eigenvalues = np.linalg.eigvalsh(values)[..., 0]
            if eigenvalues.min() <= 0:
                subject = int(np.unravel_index(np.argmin(eigenvalues), eigenvalues.shape)[0]) + 1
                raise PanelValidationError(f"precision matrices must be positive definite, "
                                           f"min eigenvalue {eigenvalues.min():.3e}", subject=subject)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "values", _read_only(values))

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def n_scans(self) -> int:
        return self.values.shape[1]

    def edge_series(self) -> np.ndarray:
        """
        (subject, scan, edge) connectivity signal used for change points and F1:
        correlations for the pairwise kind, partial correlations otherwise
        """
        if self.kind == NetworkKind.PAIRWISE_FISHER_Z:
            return inverse_fisher(self.values)
        if self.kind == NetworkKind.PRECISION:
            return upper_triangle(partial_correlation_matrices(self.values))
        return upper_triangle(self.values)

    def correlations(self) -> np.ndarray:
        """(subject, scan, edge) pairwise correlations implied by the networks"""
        if self.kind == NetworkKind.PAIRWISE_FISHER_Z:
            return inverse_fisher(self.values)
        if self.kind == NetworkKind.PRECISION:
            return upper_triangle(correlation_from_precision(self.values))
        raise ValueError("pairwise correlations are not recoverable from partial correlations alone")


@dataclass(frozen=True)
class HyperParams:
    n_components: int = settings.n_components
    lambda_grid: Tuple[float, ...] = settings.fused_lambda_grid
    a_sigma: float = settings.a_sigma
    b_sigma: float = settings.b_sigma
    sigma_y2: Optional[float] = None
    alpha: float = settings.alpha
    sigma_beta_diag: float = settings.sigma_beta_diag
    mc_samples: int = settings.mc_samples
    mc_burn_in: int = settings.mc_burn_in
    max_em_iters: int = settings.max_em_iters
    em_tol: float = settings.em_tol

    def __post_init__(self):
        if int(self.n_components) != self.n_components or self.n_components < 1:
            raise ValueError(f"Invalid number of mixture components: {self.n_components}")
        grid = tuple(float(x) for x in self.lambda_grid)
        if not grid:
            raise ValueError("lambda_grid must not be empty")
        if any(x <= 0 for x in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError(f"lambda_grid must be positive and strictly increasing: {grid}")
        object.__setattr__(self, "lambda_grid", grid)
        for name in ("a_sigma", "b_sigma", "alpha", "sigma_beta_diag", "em_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sigma_y2 is not None and self.sigma_y2 <= 0:
            raise ValueError(f"sigma_y2 must be positive, got {self.sigma_y2}")
        for name in ("mc_samples", "max_em_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.mc_burn_in < 0:
            raise ValueError(f"mc_burn_in must be non-negative, got {self.mc_burn_in}")


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    n_clusters: int = field(default=0)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        k = int(self.n_clusters) or (int(labels.max()) if labels.size else 0)
        if labels.ndim != 1 or labels.size == 0:
            raise ValueError("cluster labels must be a non-empty vector")
        if labels.min() < 1 or labels.max() > k:
            raise ValueError(f"cluster labels must lie in 1..{k}")
        if k > labels.size:
            raise ValueError(f"{k} clusters for {labels.size} subjects")
        object.__setattr__(self, "labels", _read_only(labels, dtype=int))
        object.__setattr__(self, "n_clusters", k)

    def members(self, cluster: int) -> np.ndarray:
        """0-based subject indices in a 1-based cluster"""
        return np.flatnonzero(self.labels == cluster)
