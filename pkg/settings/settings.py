import os

log_level = os.environ.get("BPMM_LOG_LEVEL", "INFO").upper()
log_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

config_schema_version = 1
binary_magic = b"BPMM"

# Numerical guards
clip_eps = 1e-6
sigma2_floor = 1e-8
init_sigma2_floor = 1e-4
empty_component_mass = 1e-6
irls_weight_floor = 1e-10

# Lasso solver
lasso_max_sweeps = 10000
lasso_tol = 1e-10
lasso_kkt_tol = 1e-8
fused_zero_tol = 1e-8
fused_weight_floor = 1e-12
fused_lambda_grid = (0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0, 25.0, 50.0)

# Mixture defaults
n_components = 4
a_sigma = 0.1
b_sigma = 1.0
alpha = 1.0
sigma_beta_diag = 1.0
max_em_iters = 30
em_tol = 1e-4
em_monotone_tol = 1e-6
init_window = 15
init_ridge = 0.25

# Newton step for the pairwise latent Fisher-z values
newton_tol = 1e-3
newton_max_iters = 50
newton_max_halvings = 20
newton_gradient_step = 0.1

# Gibbs sampler
mc_samples = 20
mc_burn_in = 10
cholesky_jitter = 1e-8
pd_audit_fraction = 0.05
mc_noise_band = 3.0
mc_oscillation_factor = 10.0
max_consecutive_decreases = 5

# Change points
cp_lambda_multipliers = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
cp_tol = 1e-10
cp_max_sweeps = 5000
cp_merge_window = 2
cp_freq_threshold = 0.5
cp_match_tolerance = 2

# Subgroups
kmeans_restarts = 50

# Metrics
f1_threshold = 0.05

# Simulation
sim_n_subjects = 40
sim_n_nodes = 40
sim_n_scans = 300
sim_cluster_sizes = (10, 10, 10, 10)
sim_cps_per_cluster = (3, 3, 4, 4)
sim_cp_jitter = 3
sim_min_segment = 20
sim_var_coefficient = 0.3
sim_er_mean_degree = 4
sim_ws_neighbors = 4
sim_ws_rewire = 0.1
sim_ba_edges = 1
baseline_window = 31
max_ar_order = 3

# Scaled-down reproduction protocol
repro_n_subjects = 20
repro_n_nodes = 15
repro_n_scans = 150
repro_cluster_sizes = (5, 5, 5, 5)
repro_cps_per_cluster = (2, 2, 3, 3)
repro_replicates = 2
