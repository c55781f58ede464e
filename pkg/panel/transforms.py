from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from settings import settings


def fisher_transform(rho, clip_eps: float = settings.clip_eps):
    """arctanh with |rho| clipped to 1 - clip_eps"""
    clipped = np.clip(rho, -1.0 + clip_eps, 1.0 - clip_eps)
    result = np.arctanh(clipped)
    return float(result) if np.ndim(result) == 0 else result


def inverse_fisher(z):
    result = np.tanh(z)
    return float(result) if np.ndim(result) == 0 else result


def fisher_bound(clip_eps: float = settings.clip_eps) -> float:
    """Largest attainable |z| after clipping"""
    return float(np.arctanh(1.0 - clip_eps))


def edge_index(j: int, l: int, n_nodes: int) -> int:
    """1-based ordinal of edge (j, l) in row-major upper-triangle order"""
    if not (1 <= j < l <= n_nodes):
        raise ValueError(f"edge ({j}, {l}) is not an upper-triangle pair for {n_nodes} nodes")
    return (j - 1) * (2 * n_nodes - j) // 2 + (l - j)


def edge_pair(index: int, n_nodes: int) -> Tuple[int, int]:
    """Inverse of edge_index"""
    n_edges = n_nodes * (n_nodes - 1) // 2
    if not (1 <= index <= n_edges):
        raise ValueError(f"edge ordinal {index} outside 1..{n_edges}")
    j = 1
    while index > n_nodes - j:
        index -= n_nodes - j
        j += 1
    return j, j + index


def upper_triangle(matrices: np.ndarray) -> np.ndarray:
    """(..., V, V) -> (..., E) in edge order"""
    rows, cols = np.triu_indices(matrices.shape[-1], k=1)
    return matrices[..., rows, cols]


def from_upper_triangle(edges: np.ndarray, n_nodes: int, diagonal: float = 0.0) -> np.ndarray:
    rows, cols = np.triu_indices(n_nodes, k=1)
    matrices = np.zeros(edges.shape[:-1] + (n_nodes, n_nodes))
    matrices[..., rows, cols] = edges
    matrices[..., cols, rows] = edges
    idx = np.arange(n_nodes)
    matrices[..., idx, idx] = diagonal
    return matrices


def partial_correlation_matrices(omega: np.ndarray) -> np.ndarray:
    """-omega_kl / sqrt(omega_kk omega_ll) with unit diagonal"""
    scale = np.sqrt(np.diagonal(omega, axis1=-2, axis2=-1))
    partial = -omega / (scale[..., :, None] * scale[..., None, :])
    idx = np.arange(omega.shape[-1])
    partial[..., idx, idx] = 1.0
    return partial


def correlation_from_precision(omega: np.ndarray) -> np.ndarray:
    covariance = np.linalg.inv(omega)
    scale = np.sqrt(np.diagonal(covariance, axis1=-2, axis2=-1))
    return covariance / (scale[..., :, None] * scale[..., None, :])


def window_starts(n_scans: int, window: int) -> np.ndarray:
    """Start of the full-length window centred on each scan, shifted inward at the ends"""
    if window < 2 or window > n_scans:
        raise ValueError(f"window {window} must lie in 2..{n_scans}")
    half = (window - 1) // 2
    return np.clip(np.arange(n_scans) - half, 0, n_scans - window)


def scan_windows(series: np.ndarray, window: int) -> np.ndarray:
    """(..., T) -> (..., T, window) view of the window around every scan"""
    views = sliding_window_view(series, window, axis=-1)
    return views[..., window_starts(series.shape[-1], window), :]


def sliding_correlation(y_j: np.ndarray, y_l: np.ndarray, window: int) -> np.ndarray:
    """Pearson correlation of two (..., T) series over the window around each scan"""
    a = scan_windows(np.asarray(y_j, dtype=float), window)
    b = scan_windows(np.asarray(y_l, dtype=float), window)
    a = a - a.mean(axis=-1, keepdims=True)
    b = b - b.mean(axis=-1, keepdims=True)
    denom = np.sqrt((a * a).sum(axis=-1) * (b * b).sum(axis=-1))
    numer = (a * b).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(denom > 0, numer / np.where(denom > 0, denom, 1.0), 0.0)
    return rho


def sliding_covariance(series: np.ndarray, window: int) -> np.ndarray:
    """(..., V, T) -> (..., T, V, V) windowed sample covariance"""
    windows = scan_windows(np.asarray(series, dtype=float), window)
    windows = np.moveaxis(windows, -3, -2)
    centered = windows - windows.mean(axis=-1, keepdims=True)
    return np.einsum("...vw,...uw->...vu", centered, centered) / (window - 1)
