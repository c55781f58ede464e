from changepoint.cluster_changepoints import cluster_changepoints
from changepoint.report import ChangePointReport, detect_changepoints
from changepoint.tv_segment import default_lambda_grid, lambda_path, select_lambda_u, tv_objective, tv_segment
