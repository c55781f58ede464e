import logging
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from sklearn.metrics.cluster import contingency_matrix

from changepoint.report import ChangePointReport
from metrics.scores import (MetricReport, clustering_error, cp_match_score, f1_over_time, mse_correlations,
                            variation_of_information)
from panel.dataset import ClusterAssignment, DynamicNetworkSet, NetworkKind
from settings import settings
from simulation.generator import SimTruth

logger = logging.getLogger(__name__)


def match_clusters(est_labels, true_labels) -> Dict[int, Optional[int]]:
    """True cluster -> estimated cluster under the overlap-maximizing one-to-one matching"""
    true_ids = np.unique(true_labels)
    est_ids = np.unique(est_labels)
    table = contingency_matrix(true_labels, est_labels)
    rows, cols = linear_sum_assignment(table, maximize=True)
    matching = {int(c): None for c in true_ids}
    for r, c in zip(rows, cols):
        matching[int(true_ids[r])] = int(est_ids[c])
    return matching


class MetricEvaluator:
    """Scores estimated networks, subgroups and change points against simulation truth"""

    def __init__(self, f1_threshold: float = settings.f1_threshold, cp_tolerance: int = settings.cp_match_tolerance):
        self.config = {
            'f1_threshold': f1_threshold,
            'cp_tolerance': cp_tolerance,
        }

    def cluster_changepoint_table(self, cp_report: ChangePointReport, assignment: ClusterAssignment,
                                  truth: SimTruth) -> pd.DataFrame:
        """One row per true cluster: anchors, matched estimated points, sensitivity and false positives"""
        matching = match_clusters(np.asarray(assignment.labels), truth.true_labels)
        rows = []
        for cluster, anchors in sorted(truth.cluster_cps.items()):
            est_cluster = matching.get(cluster)
            estimated = cp_report.cluster_level.get(est_cluster, []) if est_cluster is not None else []
            sensitivity, false_positives = cp_match_score(estimated, anchors, self.config['cp_tolerance'])
            rows.append({
                "cluster": cluster,
                "estimated_cluster": est_cluster,
                "true_changepoints": ";".join(str(t) for t in anchors),
                "estimated_changepoints": ";".join(str(t) for t in estimated),
                "sensitivity": sensitivity,
                "false_positives": false_positives,
            })
        return pd.DataFrame(rows)

    def subject_changepoint_table(self, cp_report: ChangePointReport, truth: SimTruth) -> pd.DataFrame:
        rows = []
        for i, (estimated, true_cps) in enumerate(zip(cp_report.per_subject, truth.true_cps)):
            sensitivity, false_positives = cp_match_score(estimated, true_cps, self.config['cp_tolerance'])
            rows.append({"subject": i + 1, "cluster": int(truth.true_labels[i]), "n_true": len(true_cps),
                         "n_estimated": len(estimated), "sensitivity": sensitivity,
                         "false_positives": false_positives})
        return pd.DataFrame(rows)

    def evaluate(self, networks: Optional[DynamicNetworkSet], truth: SimTruth, n_scans: int,
                 assignment: Optional[ClusterAssignment] = None,
                 cp_report: Optional[ChangePointReport] = None) -> Dict:
        """
        Returns the MetricReport plus the tables behind it. Metrics whose inputs are
        missing stay None and the reason is listed under 'skipped'.
        """
        report = MetricReport()
        skipped: List[str] = []
        result = {'report': report, 'skipped': skipped, 'f1_over_time': None,
                  'cluster_table': None, 'subject_table': None}

        if networks is not None:
            true_networks = DynamicNetworkSet(kind=NetworkKind.PRECISION, values=truth.precisions(n_scans),
                                              n_nodes=networks.n_nodes)
            if networks.kind == NetworkKind.PARTIAL_CORRELATION:
                skipped.append("mse: pairwise correlations are not recoverable from partial correlations")
            else:
                report.mse = mse_correlations(networks, true_networks)
            curve = f1_over_time(networks, truth.adjacency(n_scans), self.config['f1_threshold'])
            result['f1_over_time'] = curve
            report.f1 = float(curve.mean())
        else:
            skipped.append("mse, f1: no networks")

        if assignment is not None:
            report.ce = clustering_error(assignment, truth.true_labels)
            report.vi = variation_of_information(assignment, truth.true_labels)
        else:
            skipped.append("ce, vi: no subgroup assignment")

        if cp_report is not None:
            result['subject_table'] = self.subject_changepoint_table(cp_report, truth)
            if assignment is not None:
                table = self.cluster_changepoint_table(cp_report, assignment, truth)
                result['cluster_table'] = table
                report.cp_sensitivity = float(table["sensitivity"].mean())
                report.cp_false_positives = float(table["false_positives"].mean())
            else:
                skipped.append("cluster change points: no subgroup assignment")
        else:
            skipped.append("change points: no change-point report")

        for reason in skipped:
            logger.info(f"Skipped {reason}")
        return result
