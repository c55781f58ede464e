from estimators.base_estimator import BaseEstimator, NonFiniteLogPosterior, NonMonotoneTraceError, derive_seed
from estimators.pairwise_estimator import EdgeFit, PairwiseNetworkFit, fit_all_edges, fit_edge, newton_update_gamma
from estimators.precision_estimator import PositiveDefinitenessError, PrecisionFit, fit_idpmac, partial_correlations
