import logging

import numpy as np

from panel.dataset import DynamicNetworkSet, NetworkKind, PanelDataset
from panel.transforms import fisher_transform, sliding_covariance, upper_triangle
from settings import settings

logger = logging.getLogger(__name__)


def _check_window(window: int, n_scans: int) -> None:
    if window % 2 == 0 or not 3 <= window <= n_scans:
        raise ValueError(f"window must be odd and lie in 3..{n_scans}, got {window}")


def sliding_window_baseline(panel: PanelDataset, window: int = settings.baseline_window) -> DynamicNetworkSet:
    """Fisher-transformed Pearson correlations over the centred window around each scan"""
    _check_window(window, panel.n_scans)
    covariance = sliding_covariance(panel.data, window)
    scale = np.sqrt(np.diagonal(covariance, axis1=-2, axis2=-1))
    denom = scale[..., :, None] * scale[..., None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        correlation = np.where(denom > 0, covariance / np.where(denom > 0, denom, 1.0), 0.0)
    logger.info(f"Sliding-window correlations with window {window} for {panel.n_subjects} subjects")
    return DynamicNetworkSet(kind=NetworkKind.PAIRWISE_FISHER_Z, values=fisher_transform(upper_triangle(correlation)),
                             n_nodes=panel.n_nodes)


def sliding_window_precision(panel: PanelDataset, window: int = settings.baseline_window,
                             ridge: float = settings.init_ridge) -> DynamicNetworkSet:
    """Inverse of the ridge-regularized windowed covariance of the standardized series"""
    _check_window(window, panel.n_scans)
    covariance = sliding_covariance(panel.standardized().data, window)
    omega = np.linalg.inv(covariance + ridge * np.eye(panel.n_nodes))
    omega = 0.5 * (omega + np.swapaxes(omega, -1, -2))
    return DynamicNetworkSet(kind=NetworkKind.PRECISION, values=omega, n_nodes=panel.n_nodes)
