from metrics.evaluator import MetricEvaluator, match_clusters
from metrics.reports import f1_curves, group_by_cluster, group_by_method
from metrics.scores import (MetricReport, ShapeMismatchError, clustering_error, cp_match_score, f1_over_time,
                            f1_score, mean_f1, mse_correlations, variation_of_information)
