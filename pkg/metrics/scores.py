import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import entropy
from sklearn.metrics import mutual_info_score
from sklearn.metrics.cluster import contingency_matrix

from panel.dataset import ClusterAssignment, DynamicNetworkSet
from panel.transforms import upper_triangle
from settings import settings

logger = logging.getLogger(__name__)


class ShapeMismatchError(ValueError):
    """Raised when estimated and true quantities cannot be compared cell by cell"""
    def __init__(self, expected, found):
        self.expected = expected
        self.found = found
        super().__init__(f"Shape mismatch: expected {expected}, found {found}")


def _labels(assignment) -> np.ndarray:
    if isinstance(assignment, ClusterAssignment):
        return np.asarray(assignment.labels)
    return np.asarray(assignment)


def _paired_labels(est, truth) -> Tuple[np.ndarray, np.ndarray]:
    est, truth = _labels(est), _labels(truth)
    if est.shape != truth.shape:
        raise ShapeMismatchError(truth.shape, est.shape)
    return est, truth


def clustering_error(est, truth) -> float:
    """1 - best agreement over label matchings / N, by optimal assignment on the contingency table"""
    est, truth = _paired_labels(est, truth)
    table = contingency_matrix(truth, est)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(1.0 - table[rows, cols].sum() / len(est))


def variation_of_information(est, truth) -> float:
    """H(est) + H(truth) - 2 I(est; truth) in nats"""
    est, truth = _paired_labels(est, truth)
    h_est = entropy(np.unique(est, return_counts=True)[1])
    h_truth = entropy(np.unique(truth, return_counts=True)[1])
    return float(max(h_est + h_truth - 2.0 * mutual_info_score(truth, est), 0.0))


def _edge_f1(est_edges: np.ndarray, true_edges: np.ndarray, threshold: float) -> float:
    detected = np.abs(est_edges) > threshold
    actual = np.asarray(true_edges).astype(bool)
    if not detected.any() and not actual.any():
        return 1.0
    tp = int(np.sum(detected & actual))
    if tp == 0:
        return 0.0
    precision = tp / int(detected.sum())
    recall = tp / int(actual.sum())
    return 2.0 * precision * recall / (precision + recall)


def f1_score(est_partials, true_adjacency, threshold: float = settings.f1_threshold) -> float:
    """F1 of the off-diagonal support |partial correlation| > threshold against a binary adjacency"""
    est_partials = np.asarray(est_partials, dtype=float)
    true_adjacency = np.asarray(true_adjacency)
    if est_partials.shape != true_adjacency.shape or est_partials.ndim != 2:
        raise ShapeMismatchError(true_adjacency.shape, est_partials.shape)
    return _edge_f1(upper_triangle(est_partials), upper_triangle(true_adjacency), threshold)


def f1_over_time(est: DynamicNetworkSet, true_adjacency, threshold: float = settings.f1_threshold) -> np.ndarray:
    """Mean F1 across subjects at every scan; true_adjacency is (N, T, V, V) binary"""
    true_edges = upper_triangle(np.asarray(true_adjacency))
    est_edges = est.edge_series()
    if est_edges.shape != true_edges.shape:
        raise ShapeMismatchError(true_edges.shape, est_edges.shape)
    scores = np.array([[_edge_f1(est_edges[i, t], true_edges[i, t], threshold)
                        for t in range(est_edges.shape[1])] for i in range(est_edges.shape[0])])
    return scores.mean(axis=0)


def mean_f1(est: DynamicNetworkSet, true_adjacency, threshold: float = settings.f1_threshold) -> float:
    return float(f1_over_time(est, true_adjacency, threshold).mean())


def cp_match_score(est_cps: Sequence[int], true_cps: Sequence[int],
                   tolerance: int = settings.cp_match_tolerance) -> Tuple[float, int]:
    """Greedy in-order one-to-one matching within +/- tolerance; returns (sensitivity, false positives)"""
    est_cps, true_cps = sorted(est_cps), sorted(true_cps)
    matched = 0
    used = [False] * len(est_cps)
    for true_cp in true_cps:
        for k, est_cp in enumerate(est_cps):
            if not used[k] and abs(est_cp - true_cp) <= tolerance:
                used[k] = True
                matched += 1
                break
    sensitivity = matched / len(true_cps) if true_cps else 1.0
    return sensitivity, len(est_cps) - sum(used)


def mse_correlations(est: DynamicNetworkSet, truth: DynamicNetworkSet) -> float:
    """Mean squared difference of pairwise correlations over (subject, scan, edge)"""
    est_corr, true_corr = est.correlations(), truth.correlations()
    if est_corr.shape != true_corr.shape:
        raise ShapeMismatchError(true_corr.shape, est_corr.shape)
    return float(np.mean((est_corr - true_corr) ** 2))


@dataclass
class MetricReport:
    ce: Optional[float] = None
    vi: Optional[float] = None
    f1: Optional[float] = None
    mse: Optional[float] = None
    cp_sensitivity: Optional[float] = None
    cp_false_positives: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        """Flat key=value table; missing metrics are written as NA"""
        lines = []
        for key, value in self.to_dict().items():
            lines.append(f"{key}={'NA' if value is None else format(value, '.6f')}")
        return "\n".join(lines) + "\n"
