import logging
from typing import Dict, List

import pandas as pd

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["ce", "vi", "f1", "mse", "cp_sensitivity", "cp_false_positives"]


def group_by_cluster(subject_table: pd.DataFrame) -> pd.DataFrame:
    """Mean subject-level change-point scores per true cluster"""
    return (subject_table.groupby("cluster")[["n_true", "n_estimated", "sensitivity", "false_positives"]]
            .mean().reset_index())


def group_by_method(rows: List[Dict]) -> pd.DataFrame:
    """Mean and standard deviation of every metric per method over replicates"""
    frame = pd.DataFrame(rows)
    metrics = [c for c in METRIC_COLUMNS if c in frame.columns]
    summary = frame.groupby("method")[metrics].agg(["mean", "std"])
    summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
    return summary.reset_index()


def f1_curves(curves: Dict[str, List[float]]) -> pd.DataFrame:
    """Long-format (scan, method, f1) table, scans 1-based"""
    rows = []
    for method, curve in curves.items():
        rows.extend({"scan": t + 1, "method": method, "f1": float(value)} for t, value in enumerate(curve))
    return pd.DataFrame(rows, columns=["scan", "method", "f1"])
