import logging
from dataclasses import replace
from typing import Sequence, Tuple

import numpy as np
import pandas as pd

from changepoint.tv_segment import lambda_path
from estimators.pairwise_estimator import fit_all_edges
from panel.dataset import HyperParams, PanelDataset

logger = logging.getLogger(__name__)


def network_criterion(networks) -> float:
    """Mean over subjects of the smallest change-point BIC along each subject's lambda_u path"""
    signal = networks.edge_series()
    return float(np.mean([min(point.bic for point in lambda_path(signal[i])) for i in range(signal.shape[0])]))


def select_n_components(panel: PanelDataset, h_grid: Sequence[int], hyper: HyperParams, seed: int,
                        n_jobs: int = 1, **fit_options) -> Tuple[int, pd.DataFrame]:
    """Fit the pairwise model for each H and keep the H whose networks give the smallest mean criterion"""
    h_grid = sorted(set(int(h) for h in h_grid))
    if not h_grid or h_grid[0] < 1:
        raise ValueError(f"component grid must hold positive integers, got {h_grid}")
    rows = []
    for n_components in h_grid:
        fit = fit_all_edges(panel, replace(hyper, n_components=n_components), seed, n_jobs=n_jobs, **fit_options)
        criterion = network_criterion(fit.networks)
        rows.append({"n_components": n_components, "criterion": criterion, "converged": fit.converged})
        logger.info(f"H={n_components}: criterion {criterion:.4f}")
    table = pd.DataFrame(rows)
    best = int(table.loc[table["criterion"].idxmin(), "n_components"])
    logger.info(f"Selected H={best}")
    return best, table
