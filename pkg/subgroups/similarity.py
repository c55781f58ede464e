import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise co-clustering frequencies between subjects; symmetric, in [0, 1], unit diagonal"""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"similarity must be square, got shape {values.shape}")
        if not np.allclose(values, values.T, atol=1e-12):
            raise ValueError("similarity matrix is not symmetric")
        if values.min() < -1e-12 or values.max() > 1 + 1e-12:
            raise ValueError("similarity entries must lie in [0, 1]")
        values = np.clip(values, 0.0, 1.0)
        np.fill_diagonal(values, 1.0)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]


def build_similarity(labels) -> SimilarityMatrix:
    """
    labels: (subject, scan, edge-or-node) component labels.
    Entry (i, k) is the fraction of (scan, edge) cells in which subjects i and k share a label,
    i.e. the per-edge agreement rates averaged over edges.
    """
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[:, :, None]
    if labels.ndim != 3:
        raise ValueError(f"labels must have shape (N, T, E), got {labels.shape}")
    n_subjects = labels.shape[0]
    flat = labels.reshape(n_subjects, -1)
    agreement = np.zeros((n_subjects, n_subjects))
    for component in np.unique(flat):
        indicator = (flat == component).astype(float)
        agreement += indicator @ indicator.T
    return SimilarityMatrix(agreement / flat.shape[1])
