import logging
from typing import List, Optional

import numpy as np
from sklearn.cluster import KMeans

from panel.dataset import ClusterAssignment
from settings import settings
from subgroups.similarity import SimilarityMatrix

logger = logging.getLogger(__name__)


def canonical_labels(labels) -> np.ndarray:
    """1-based labels numbered in order of first appearance"""
    labels = np.asarray(labels)
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    mapping = {old: new for new, old in enumerate(order, start=1)}
    return np.array([mapping[x] for x in labels], dtype=int)


def _kmeans(rows: np.ndarray, n_clusters: int, seed: int, restarts: int) -> KMeans:
    return KMeans(n_clusters=n_clusters, n_init=restarts, random_state=seed).fit(rows)


def wcss_curve(rows: np.ndarray, k_values: List[int], seed: int,
               restarts: int = settings.kmeans_restarts) -> np.ndarray:
    return np.array([_kmeans(rows, k, seed, restarts).inertia_ for k in k_values])


def elbow_k(k_values: List[int], wcss: np.ndarray) -> int:
    """
    Point of maximum curvature (largest second difference) of the WCSS curve.
    With fewer than three candidates: the largest K whose WCSS drop from K-1 exceeds half, else the first.
    """
    if len(k_values) >= 3:
        curvature = wcss[:-2] - 2.0 * wcss[1:-1] + wcss[2:]
        return k_values[1 + int(np.argmax(curvature))]
    chosen = k_values[0]
    for k, before, after in zip(k_values[1:], wcss[:-1], wcss[1:]):
        if before > 0 and (before - after) / before > 0.5:
            chosen = k
    return chosen


def kmeans_subgroups(sim: SimilarityMatrix, n_clusters: Optional[int] = None, max_clusters: Optional[int] = None,
                     seed: int = 0, restarts: int = settings.kmeans_restarts) -> ClusterAssignment:
    """
    K-means on the rows of the similarity matrix. Without n_clusters, K is picked by the
    elbow rule over 1..min(max_clusters, N-1).
    """
    rows = np.asarray(sim.values, dtype=float)
    n_subjects = rows.shape[0]
    if n_clusters is not None and not 1 <= n_clusters <= n_subjects:
        raise ValueError(f"number of subgroups must lie in 1..{n_subjects}, got {n_clusters}")

    if np.allclose(rows, rows[0], atol=1e-12):
        if n_clusters not in (None, 1):
            logger.warning(f"All similarity rows are identical; returning one subgroup instead of {n_clusters}")
        else:
            logger.warning("All similarity rows are identical; returning one subgroup")
        return ClusterAssignment(np.ones(n_subjects, dtype=int), 1)

    if n_clusters is None:
        upper = min(max_clusters or n_subjects - 1, n_subjects - 1)
        k_values = list(range(1, max(upper, 1) + 1))
        wcss = wcss_curve(rows, k_values, seed, restarts)
        n_clusters = elbow_k(k_values, wcss)
        logger.info(f"Elbow rule picked K={n_clusters} from WCSS {np.round(wcss, 4).tolist()}")

    if n_clusters == 1:
        return ClusterAssignment(np.ones(n_subjects, dtype=int), 1)
    model = _kmeans(rows, n_clusters, seed, restarts)
    labels = canonical_labels(model.labels_)
    logger.info(f"K-means found {n_clusters} subgroups, WCSS {model.inertia_:.4f}")
    return ClusterAssignment(labels, int(labels.max()))
