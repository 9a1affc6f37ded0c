"""Static and dynamic functional connectivity from ROI time series."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError, ShapeError

# a centered series whose spread is below this fraction of its magnitude is treated as constant
_REL_VAR_TOL = 1e-13


@dataclass(frozen=True)
class WindowConfig:
    length: int
    stride: int

    def __post_init__(self):
        if self.length < 1:
            raise DataError(f"window length must be >= 1, got {self.length}")
        if self.stride < 1:
            raise DataError(f"window stride must be >= 1, got {self.stride}")

    def count(self, T):
        if self.length > T:
            raise DataError(f"window length {self.length} exceeds series length {T}")
        return (T - self.length) // self.stride + 1


def _is_constant(ss, scale, n):
    return ss <= n * (_REL_VAR_TOL * max(scale, 1e-300)) ** 2


def pcc(u, v):
    """Pearson correlation of two equal-length series, clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeError("pcc", u.shape, v.shape)
    if u.size < 2:
        raise DataError("pcc needs at least 2 timepoints")
    du = u - u.mean()
    dv = v - v.mean()
    su = float(du @ du)
    sv = float(dv @ dv)
    for idx, (s, x) in enumerate(((su, u), (sv, v))):
        if _is_constant(s, np.abs(x).max(), x.size):
            raise DataError(f"zero-variance series at index {idx}")
    r = float(du @ dv) / math.sqrt(su * sv)
    return min(1.0, max(-1.0, r))


def _check_variance(ss, series_block, window=None):
    n = series_block.shape[-1]
    scale = np.abs(series_block).max(axis=-1)
    for roi in range(ss.shape[0]):
        if _is_constant(ss[roi], scale[roi], n):
            where = f" in window {window}" if window is not None else ""
            raise DataError(f"zero-variance ROI {roi}{where}", )


def static_fc(series):
    """Full-series PCC matrix of an (M, T) array: symmetric with unit diagonal."""
    X = np.asarray(series, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("static_fc", X.shape, detail="expected (M, T)")
    M, T = X.shape
    if T < 2:
        raise DataError("static_fc needs at least 2 timepoints")
    corr, ss = kernels.windowed_pcc(X, T, 1)
    _check_variance(ss[0], X)
    return corr[0]


def sliding_windows(series, cfg: WindowConfig):
    """List of (M, L) segments; segment j covers [j*S, j*S + L), trailing remainder dropped."""
    X = np.asarray(series, dtype=np.float64)
    K = cfg.count(X.shape[1])
    return [X[:, j * cfg.stride:j * cfg.stride + cfg.length] for j in range(K)]


def window_starts(T, cfg: WindowConfig):
    return [j * cfg.stride for j in range(cfg.count(T))]


def dynamic_fc(series, cfg: WindowConfig):
    """Stack of per-window PCC matrices, shape (K, M, M)."""
    X = np.asarray(series, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("dynamic_fc", X.shape, detail="expected (M, T)")
    cfg.count(X.shape[1])
    if cfg.length < 2:
        raise DataError("window length must be >= 2 to compute correlations")
    corr, ss = kernels.windowed_pcc(X, cfg.length, cfg.stride)
    for k in range(corr.shape[0]):
        seg = X[:, k * cfg.stride:k * cfg.stride + cfg.length]
        _check_variance(ss[k], seg, window=k)
    return corr


def _upper_order(values_upper, descending):
    # stable sort: ties resolved in (row, col) lexicographic order
    key = -values_upper if descending else values_upper
    return np.argsort(key, kind="stable")


def binarize_adjacency(conn, keep_ratio):
    """Binary symmetric adjacency keeping the top ``keep_ratio`` fraction of edges by |value|.

    Exactly ceil(keep_ratio * E) edges are kept among the nonzero ones, with
    ties broken by (row, col) order. Exact-zero entries are never edges.
    """
    C = np.asarray(conn, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ShapeError("binarize_adjacency", C.shape)
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    M = C.shape[0]
    iu, ju = np.triu_indices(M, 1)
    E = iu.size
    A = np.zeros((M, M))
    if E == 0:
        return A
    n_keep = math.ceil(keep_ratio * E - 1e-9)
    mag = np.abs(C[iu, ju])
    order = _upper_order(mag, descending=True)[:n_keep]
    order = order[mag[order] > 0]
    A[iu[order], ju[order]] = 1.0
    return A + A.T


def batch_dynamic_fc(series_list, cfg: WindowConfig):
    return np.stack([dynamic_fc(x, cfg) for x in series_list])


def batch_static_fc(series_list):
    return np.stack([static_fc(x) for x in series_list])
