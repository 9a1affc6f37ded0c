"""Masked edge drop: sparsify tsFC, binarize it into a mask, prune static FC with it."""
import math

import numpy as np

from . import gradcore as gc
from .errors import ShapeError


def _check_square(op, x):
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise ShapeError(op, x.shape)


def sparsify(tsfc, q):
    """Zero the floor(q*E) smallest off-diagonal |values| (ties in (row, col) order).

    Works on (..., M, M) arrays; the diagonal is left untouched and symmetry of
    the input is preserved.
    """
    X = np.array(tsfc.data if isinstance(tsfc, gc.Tensor) else tsfc, dtype=np.float64)
    _check_square("sparsify", X)
    if not 0.0 <= q < 1.0:
        raise ValueError(f"sparsify quantile must be in [0, 1), got {q}")
    M = X.shape[-1]
    iu, ju = np.triu_indices(M, 1)
    n_drop = math.floor(q * iu.size + 1e-9)
    if n_drop == 0:
        return X
    flat = X.reshape((-1, M, M))
    for mat in flat:
        mag = np.abs(mat[iu, ju])
        drop = np.argsort(mag, kind="stable")[:n_drop]
        mat[iu[drop], ju[drop]] = 0.0
        mat[ju[drop], iu[drop]] = 0.0
    return flat.reshape(X.shape)


def make_mask(tsfc_sparse):
    """1 where the sparsified tsFC is nonzero, 0 elsewhere; diagonal forced to 0."""
    X = np.asarray(tsfc_sparse.data if isinstance(tsfc_sparse, gc.Tensor) else tsfc_sparse)
    _check_square("make_mask", X)
    mask = (X != 0).astype(np.float64)
    idx = np.arange(X.shape[-1])
    mask[..., idx, idx] = 0.0
    return mask


def apply_mask(sfc, mask):
    """Hadamard product; differentiable with respect to ``sfc`` only."""
    sfc = gc.as_tensor(sfc)
    mask = np.asarray(mask, dtype=np.float64)
    if sfc.shape[-2:] != mask.shape[-2:]:
        raise ShapeError("apply_mask", sfc.shape, mask.shape)
    return gc.elementwise_multiply(sfc, mask)


def masked_edge_drop(tsfc, sfc, q):
    """Full drop step: the hard mask is recomputed from the current tsFC values."""
    mask = make_mask(sparsify(tsfc, q))
    return apply_mask(sfc, mask), mask
