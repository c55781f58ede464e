"""Run-wide defaults for estimation, post-processing and simulation."""
