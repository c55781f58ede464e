import logging
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from settings import settings

logger = logging.getLogger(__name__)


@dataclass
class MixtureState:
    """
    EM iterate for one edge (pairwise model) or one network (precision model).
    atoms: (H, T) or (H, T, D); sigma2: (H,); beta: (T, H-1, q) with the last
    component as zero reference; responsibilities: (units, H, T).
    """
    atoms: np.ndarray
    sigma2: np.ndarray
    beta: np.ndarray
    responsibilities: np.ndarray

    @property
    def n_components(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_scans(self) -> int:
        return self.atoms.shape[1]

    @property
    def dim(self) -> int:
        return 1 if self.atoms.ndim == 2 else self.atoms.shape[2]

    def copy(self) -> "MixtureState":
        return MixtureState(self.atoms.copy(), self.sigma2.copy(), self.beta.copy(), self.responsibilities.copy())

    def labels(self) -> np.ndarray:
        """(units, T) most responsible component, ties to the lower index"""
        return np.argmax(self.responsibilities, axis=1)

    def permuted(self, order) -> "MixtureState":
        """Relabel components so that new component h is old component order[h]"""
        order = np.asarray(order)
        n_scans, _, q = self.beta.shape
        full = np.concatenate([self.beta, np.zeros((n_scans, 1, q))], axis=1)[:, order]
        beta = full[:, :-1] - full[:, -1:]
        return replace(self, atoms=self.atoms[order].copy(), sigma2=self.sigma2[order].copy(),
                       beta=beta, responsibilities=self.responsibilities[:, order].copy())


def _sorted_rows(points: np.ndarray) -> np.ndarray:
    """Row order independent of the order the units arrive in"""
    return np.lexsort(points.T[::-1])


def _global_centers(points: np.ndarray, n_components: int, seed: int) -> np.ndarray:
    distinct = np.unique(points, axis=0)
    if len(distinct) < n_components:
        levels = (np.arange(n_components) + 0.5) / n_components
        return np.quantile(points, levels, axis=0)
    ordered = points[_sorted_rows(points)]
    km = KMeans(n_clusters=n_components, n_init=10, random_state=seed).fit(ordered)
    centers = km.cluster_centers_
    return centers[_sorted_rows(centers)]


def init_mixture_state(values: np.ndarray, n_components: int, n_covariates: int, seed: int) -> MixtureState:
    """
    K-means per scan on the unit values (units, T) or (units, T, D), seeded
    from pooled centres and aligned to the previous scan's atoms.
    """
    vector_valued = values.ndim == 3
    points_by_scan = values if vector_valued else values[..., None]
    n_units, n_scans, dim = points_by_scan.shape
    pooled = points_by_scan.reshape(-1, dim)

    atoms = np.empty((n_components, n_scans, dim))
    labels = np.empty((n_units, n_scans), dtype=int)
    previous = _global_centers(pooled, n_components, seed)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for t in range(n_scans):
            points = points_by_scan[:, t]
            if n_units >= n_components and n_components > 1:
                order = _sorted_rows(points)
                km = KMeans(n_clusters=n_components, init=previous, n_init=1).fit(points[order])
                centers = km.cluster_centers_
                scan_labels = np.empty(n_units, dtype=int)
                scan_labels[order] = km.labels_
            else:
                centers = previous.copy()
                scan_labels = np.argmin(cdist(points, centers, "sqeuclidean"), axis=1)
            _, match = linear_sum_assignment(cdist(previous, centers, "sqeuclidean"))
            relabel = np.empty(n_components, dtype=int)
            relabel[match] = np.arange(n_components)
            atoms[:, t] = centers[match]
            labels[:, t] = relabel[scan_labels]
            previous = atoms[:, t]

    sigma2 = np.empty(n_components)
    pooled_var = max(float(np.mean((pooled - pooled.mean(axis=0)) ** 2)), settings.init_sigma2_floor)
    for h in range(n_components):
        unit_idx, scan_idx = np.nonzero(labels == h)
        if len(unit_idx):
            diff = points_by_scan[unit_idx, scan_idx] - atoms[h, scan_idx]
            sigma2[h] = max(float(np.mean(diff ** 2)), settings.init_sigma2_floor)
        else:
            sigma2[h] = pooled_var

    responsibilities = np.zeros((n_units, n_components, n_scans))
    np.put_along_axis(responsibilities, labels[:, None, :], 1.0, axis=1)
    beta = np.zeros((n_scans, n_components - 1, n_covariates))
    logger.debug(f"Initialized {n_components} components over {n_scans} scans, sigma2={np.round(sigma2, 4)}")
    return MixtureState(atoms=atoms if vector_valued else atoms[..., 0], sigma2=sigma2, beta=beta,
                        responsibilities=responsibilities)


def state_from_arrays(atoms, sigma2, beta, responsibilities: Optional[np.ndarray] = None,
                      n_units: int = 1) -> MixtureState:
    atoms = np.asarray(atoms, dtype=float)
    n_components, n_scans = atoms.shape[:2]
    if responsibilities is None:
        responsibilities = np.full((n_units, n_components, n_scans), 1.0 / n_components)
    return MixtureState(atoms, np.asarray(sigma2, dtype=float), np.asarray(beta, dtype=float),
                        np.asarray(responsibilities, dtype=float))
