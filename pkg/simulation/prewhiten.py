import logging
import math
from typing import Tuple

import numpy as np
import pandas as pd
from statsmodels.regression.linear_model import yule_walker

from panel.dataset import PanelDataset
from settings import settings

logger = logging.getLogger(__name__)

UNIT_ROOT_MARGIN = 1e-3


def information_criterion(sigma2: float, n_scans: int, order: int, criterion: str) -> float:
    penalty = math.log(n_scans) if criterion == "bic" else 2.0
    return n_scans * math.log(max(sigma2, np.finfo(float).tiny)) + penalty * order


def ar_residuals(x: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
    """e_t = x_t - sum_k phi_k x_{t-k}; the first p scans are set to the residual mean 0"""
    order = len(coefficients)
    residuals = np.zeros_like(x)
    residuals[order:] = x[order:]
    for k, phi in enumerate(coefficients, start=1):
        residuals[order:] -= phi * x[order - k:len(x) - k]
    return residuals


def near_unit_root(coefficients: np.ndarray) -> bool:
    if len(coefficients) == 0:
        return False
    roots = np.roots(np.r_[-coefficients[::-1], 1.0])
    return bool(np.any(np.abs(roots) <= 1.0 + UNIT_ROOT_MARGIN))


def whiten_series(x, max_ar_order: int = settings.max_ar_order, criterion: str = "bic") -> Tuple[np.ndarray, int, bool]:
    """
    AR(p) residuals of one series with p in 0..max_ar_order chosen by the information criterion
    on Yule-Walker fits. Returns (residuals, p, differenced); a fit with a root within 1e-3 of the
    unit circle falls back to first differencing.
    """
    if criterion not in ("aic", "bic"):
        raise ValueError(f"criterion must be 'aic' or 'bic', got {criterion}")
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    n_scans = len(x)
    best_order, best_coefficients = 0, np.zeros(0)
    best_score = information_criterion(float(np.mean(x ** 2)), n_scans, 0, criterion)
    for order in range(1, max_ar_order + 1):
        coefficients, sigma = yule_walker(x, order=order, method="mle")
        score = information_criterion(float(sigma) ** 2, n_scans, order, criterion)
        if score < best_score:
            best_order, best_coefficients, best_score = order, np.atleast_1d(coefficients), score

    if near_unit_root(best_coefficients):
        differenced = np.zeros_like(x)
        differenced[1:] = np.diff(x)
        return differenced, best_order, True
    return ar_residuals(x, best_coefficients), best_order, False


def prewhiten_report(panel: PanelDataset, max_ar_order: int = settings.max_ar_order,
                     criterion: str = "bic") -> Tuple[PanelDataset, pd.DataFrame]:
    """Whitened panel plus one row per (subject, node) with the chosen order and the differencing flag"""
    if panel.n_scans <= 3 * max_ar_order:
        raise ValueError(f"prewhitening with max order {max_ar_order} needs T > {3 * max_ar_order}, "
                         f"got T={panel.n_scans}")
    whitened = np.empty_like(panel.data)
    rows = []
    for i in range(panel.n_subjects):
        for v in range(panel.n_nodes):
            whitened[i, v], order, differenced = whiten_series(panel.data[i, v], max_ar_order, criterion)
            rows.append({"subject_id": panel.subject_ids[i], "node": panel.node_names[v],
                         "order": order, "differenced": differenced})
    report = pd.DataFrame(rows)
    flagged = int(report["differenced"].sum())
    if flagged:
        logger.warning(f"{flagged} series fell back to first differencing")
    logger.info(f"Prewhitened {len(report)} series; order counts {report['order'].value_counts().to_dict()}")
    return panel.with_data(whitened), report


def prewhiten(panel: PanelDataset, max_ar_order: int = settings.max_ar_order, criterion: str = "bic") -> PanelDataset:
    return prewhiten_report(panel, max_ar_order, criterion)[0]
