#!/usr/bin/env python3
"""
Tests for total-variation segmentation, lambda selection, cluster pooling and change-point reports
"""

import numpy as np
import pytest

from changepoint.candidate import CandidateChangePoint
from changepoint.cluster_changepoints import ClusterChangePoints, cluster_changepoints
from changepoint.report import EDGE_REPORT, ChangePointReport, detect_changepoints
from changepoint.tv_segment import (changepoint_bic, changepoints_of, default_lambda_grid, lambda_path,
                                    robust_noise_scale, segment_refit_rss, select_lambda_u, step_gram,
                                    tv_objective, tv_segment)
from lasso.fused_path import chain_dynamic_program
from panel.dataset import ClusterAssignment, DynamicNetworkSet, NetworkKind


def single_breakpoint_oracle(series, lambda_u):
    """Smallest objective over every fit with at most one breakpoint"""
    n_scans, n_edges = series.shape
    kappa = lambda_u / n_edges
    best = float(np.sum((series - series.mean(axis=0)) ** 2))
    for b in range(1, n_scans):
        left, right = series[:b], series[b:]
        within = float(np.sum((left - left.mean(axis=0)) ** 2) + np.sum((right - right.mean(axis=0)) ** 2))
        c = b * (n_scans - b) / n_scans
        d = right.mean(axis=0) - left.mean(axis=0)
        norm = np.linalg.norm(d)
        shrink = max(0.0, 1.0 - kappa / (2.0 * c * norm)) if norm > 0 else 0.0
        delta = shrink * d
        best = min(best, within + c * float(np.sum((d - delta) ** 2)) + kappa * float(np.linalg.norm(delta)))
    return best


@pytest.fixture
def step_series():
    series = np.zeros((20, 3))
    series[10:] = 2.0 * np.array([1.0, -0.5, 0.8])
    return series


def test_step_gram_entries():
    gram = step_gram(5)
    assert gram.shape == (4, 4)
    assert gram[0, 0] == pytest.approx(1 * 4 / 5)
    assert gram[1, 3] == pytest.approx(2 * 1 / 5)
    assert np.allclose(gram, gram.T)


def test_changepoints_are_one_based():
    piecewise = np.array([[0.0], [0.0], [1.0], [1.0], [3.0]])
    assert changepoints_of(piecewise) == [3, 5]


def test_zero_penalty_returns_the_series(step_series):
    noisy = step_series + np.random.default_rng(0).normal(scale=0.1, size=step_series.shape)
    piecewise, cps = tv_segment(noisy, 0.0)
    assert np.array_equal(piecewise, noisy)
    assert len(cps) == 19
    with pytest.raises(ValueError):
        tv_segment(noisy, -1.0)


def test_single_jump_matches_brute_force(step_series):
    lambda_u = 6.0
    piecewise, cps = tv_segment(step_series, lambda_u)
    assert cps == [11]
    assert tv_objective(step_series, piecewise, lambda_u) == pytest.approx(
        single_breakpoint_oracle(step_series, lambda_u), abs=1e-6)
    # the jump is shrunk towards zero, keeping the series mean
    assert np.allclose(piecewise.mean(axis=0), step_series.mean(axis=0))
    jump = piecewise[10] - piecewise[9]
    d = step_series[10] - step_series[9]
    assert np.allclose(jump, d * (1 - (lambda_u / 3) / (2 * 5 * np.linalg.norm(d))))


def test_huge_penalty_gives_a_constant(step_series):
    piecewise, cps = tv_segment(step_series, 1e6)
    assert cps == []
    assert np.allclose(piecewise, step_series.mean(axis=0))


def test_solution_is_a_minimizer_on_noisy_data(step_series):
    rng = np.random.default_rng(1)
    noisy = step_series + rng.normal(scale=0.3, size=step_series.shape)
    lambda_u = 3.0
    piecewise, _ = tv_segment(noisy, lambda_u)
    best = tv_objective(noisy, piecewise, lambda_u)
    for _ in range(50):
        perturbed = piecewise + 1e-3 * rng.normal(size=piecewise.shape)
        assert tv_objective(noisy, perturbed, lambda_u) >= best - 1e-9


def test_single_edge_matches_one_dimensional_fused_lasso():
    rng = np.random.default_rng(2)
    for _ in range(5):
        y = np.repeat(rng.normal(size=4), 10) + 0.2 * rng.normal(size=40)
        lambda_u = float(rng.uniform(0.2, 3.0))
        piecewise, _ = tv_segment(y, lambda_u)
        assert np.allclose(piecewise[:, 0], chain_dynamic_program(y, np.ones(40), lambda_u / 2), atol=1e-8)


def test_noise_scale_and_grid():
    series = np.tile(np.array([0.0, 1.0]), 50)[:, None]
    assert robust_noise_scale(series) == pytest.approx(1.4826 / np.sqrt(2))
    grid = default_lambda_grid(np.random.default_rng(3).normal(size=(100, 4)))
    assert len(grid) == 6
    assert grid[1] / grid[0] == pytest.approx(2.0)
    assert all(b > a for a, b in zip(grid, grid[1:]))


def test_refit_rss_and_bic():
    series = np.array([[0.0], [2.0], [5.0], [7.0]])
    assert segment_refit_rss(series, []) == pytest.approx(np.sum((series - 3.5) ** 2))
    assert segment_refit_rss(series, [3]) == pytest.approx(2.0 + 2.0)
    assert changepoint_bic(series, [3]) == pytest.approx(4 * np.log(1.0) + np.log(4))


def test_selected_lambda_finds_a_clear_step():
    rng = np.random.default_rng(4)
    series = np.zeros((60, 5))
    series[30:] += 1.0
    series += 0.1 * rng.normal(size=series.shape)
    lambda_u = select_lambda_u(series)
    _, cps = tv_segment(series, lambda_u)
    assert 31 in cps or 30 in cps or 32 in cps
    assert len(cps) <= 2


def test_pure_noise_rarely_gives_changepoints():
    quiet = 0
    for seed in range(20):
        series = 0.1 * np.random.default_rng(100 + seed).normal(size=(100, 10))
        _, cps = tv_segment(series, select_lambda_u(series))
        quiet += len(cps) <= 1
    assert quiet >= 18


def test_lambda_path_counts_and_grid_validation(step_series):
    path = lambda_path(step_series, [0.5, 6.0, 1e6])
    assert [p.lambda_u for p in path] == [0.5, 6.0, 1e6]
    assert path[-1].changepoints == []
    with pytest.raises(ValueError):
        lambda_path(step_series, [2.0, 1.0])


def test_candidate_representative_is_lower_median():
    candidate = CandidateChangePoint(1, window=2)
    for subject, scan in enumerate([52, 49, 50, 51]):
        candidate.add(subject, scan)
    assert candidate.representative == 50
    assert 52 in candidate and 53 not in candidate
    assert candidate.support(8) == pytest.approx(0.5)


def test_candidates_merge_into_registry():
    registry = {}
    first, second = CandidateChangePoint(1, 2), CandidateChangePoint(2, 2)
    registry[1], registry[2] = first, second
    first.add(0, 10)
    second.add(1, 12)
    second.merge(registry, first)
    assert list(registry) == [2]
    assert sorted(second.scans) == [10, 12]
    assert second.subjects == {0, 1}


def test_cluster_pooling_example():
    per_subject = [[49], [50], [50], [51], [52], [], [], []]
    result = cluster_changepoints(per_subject, ClusterAssignment(np.ones(8, dtype=int)), 0.5, 2)
    assert result == {1: [50]}


def test_cluster_pooling_respects_threshold_and_clusters():
    per_subject = [[20, 80], [21], [19, 80], [60], [61], [59]]
    assignment = ClusterAssignment(np.array([1, 1, 1, 2, 2, 2]))
    result = cluster_changepoints(per_subject, assignment, 0.5, 2)
    assert result[1] == [20, 80]
    assert result[2] == [60]
    assert cluster_changepoints(per_subject, assignment, 1.0, 2)[1] == [20]


def test_far_apart_points_stay_separate():
    pool = ClusterChangePoints(window=2)
    pool.add_points([(10, 0), (20, 1), (30, 2)])
    pool.check_integrity()
    assert pool.supported(3, 0.3) == [10, 20, 30]


def test_cluster_pooling_validation():
    assignment = ClusterAssignment(np.array([1, 1]))
    with pytest.raises(ValueError):
        cluster_changepoints([[1], [2]], assignment, 0.0, 2)
    with pytest.raises(ValueError):
        cluster_changepoints([[1]], assignment, 0.5, 2)


def _step_networks():
    rng = np.random.default_rng(5)
    values = np.zeros((4, 40, 3))
    values[:, 20:] = 1.0
    values += 0.05 * rng.normal(size=values.shape)
    return DynamicNetworkSet(kind=NetworkKind.PAIRWISE_FISHER_Z, values=values, n_nodes=3)


def test_detect_changepoints_and_report_round_trip(tmp_path):
    networks = _step_networks()
    report = detect_changepoints(networks, lambda_u=10.0, edge_level=True)
    assert all(21 in cps for cps in report.per_subject)
    assert report.piecewise.shape == (4, 40, 3)
    assert report.lambda_u_used == pytest.approx(10.0)
    assert sorted(report.per_edge) == [1, 2, 3]
    report.with_clusters(ClusterAssignment(np.array([1, 1, 2, 2])), 0.5, 2)
    assert report.cluster_level[1] == [21]

    report.save(tmp_path / "changepoints.json")
    assert (tmp_path / EDGE_REPORT).exists()
    loaded = ChangePointReport.load(tmp_path / "changepoints.json")
    assert loaded.per_subject == report.per_subject
    assert loaded.cluster_level == report.cluster_level
    assert loaded.per_edge == report.per_edge
    assert np.array_equal(loaded.piecewise, report.piecewise)
    assert loaded.subject_ids == ["S001", "S002", "S003", "S004"]


def test_detect_changepoints_is_thread_independent():
    networks = _step_networks()
    serial = detect_changepoints(networks, n_jobs=1)
    parallel = detect_changepoints(networks, n_jobs=2)
    assert serial.per_subject == parallel.per_subject
    assert serial.subject_lambdas == parallel.subject_lambdas
