from lasso.coordinate_descent import (CumulativeDesign, DenseDesign, LassoConvergenceError, LassoProblem,
                                      kkt_residual, solve_lasso)
from lasso.fused_path import EmptyComponentError, chain_dynamic_program, solve_fused_path
