"""Weighted edge aggregation: cross-convolution over the window stack, then global fusion with static FC."""
from __future__ import annotations

import warnings

import numpy as np

from . import gradcore as gc
from .errors import ShapeError

FUSION_EPS = 1e-12


def init_wea_params(params, n_layers, K, M, rng):
    for layer in range(n_layers):
        params.add(f"wea.{layer}", rng.uniform(-1.0 / M, 1.0 / M, size=(K, M, M)))


def layer_weights(params, n_layers):
    return [params[f"wea.{layer}"] for layer in range(n_layers)]


def cross_conv_preactivation(stack, weights):
    """Row-i plus column-j weighted sums per channel, before the nonlinearity."""
    stack, weights = gc.as_tensor(stack), gc.as_tensor(weights)
    if stack.ndim < 3 or weights.ndim != 3 or stack.shape[-3] != weights.shape[0]:
        raise ShapeError("cross_conv_layer", stack.shape, weights.shape,
                         detail="channel count of weights must equal K")
    return gc.cross_conv(stack, weights)


def cross_conv_layer(stack, weights):
    return gc.tanh(cross_conv_preactivation(stack, weights))


def wea_forward(stack, weights):
    """Apply one cross-convolution layer per weight tensor; no layers is the identity."""
    out = gc.as_tensor(stack)
    for w in weights:
        out = cross_conv_layer(out, w)
    return out


def _scale(x, eps):
    # mean over the matrix divided by its Frobenius norm
    norm = gc.frobenius_norm(x)
    if np.any(norm.data == 0.0):
        warnings.warn("global fusion: all-zero connectivity matrix; epsilon guard applied",
                      RuntimeWarning, stacklevel=3)
    return gc.divide(gc.mean(x, axis=(-2, -1)), gc.add_scalar(norm, eps))


def global_fusion(updated, sfc, eps=FUSION_EPS):
    """Scalar-weighted sum of the updated channels and static FC, symmetrized.

    ``updated`` is (..., K, M, M) and ``sfc`` is (..., M, M).
    """
    updated, sfc = gc.as_tensor(updated), gc.as_tensor(sfc)
    if updated.shape[-2:] != sfc.shape[-2:] or updated.shape[:-3] != sfc.shape[:-2]:
        raise ShapeError("global_fusion", updated.shape, sfc.shape)
    alpha = _scale(updated, eps)
    alpha = gc.reshape(alpha, alpha.shape + (1, 1))
    fused = gc.sum(gc.elementwise_multiply(updated, alpha), axis=-3)
    alpha_s = _scale(sfc, eps)
    alpha_s = gc.reshape(alpha_s, alpha_s.shape + (1, 1))
    fused = gc.add(fused, gc.elementwise_multiply(sfc, alpha_s))
    return gc.scalar_multiply(gc.add(fused, gc.transpose(fused)), 0.5)
