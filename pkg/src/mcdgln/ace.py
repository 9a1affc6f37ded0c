"""Attention-based connection encoder, classifier head and the composite loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .errors import DataError, ShapeError
from .layers import init_mlp, mlp

CE_EPS = 1e-12
SIM_EPS = 1e-12


def init_ace_params(params, n_edges, d, rng):
    init_mlp(params, "ace.encoder", n_edges, d, d, rng)
    init_mlp(params, "ace.classifier", 2 * d, d, 1, rng)


def encode_connections(masked_sfc, a, params):
    """y^M = MLP(a * upper-triangle(masked sFC))."""
    v = gc.upper_triangle_vectorize(masked_sfc)
    a = gc.as_tensor(a)
    if a.shape[-1] != v.shape[-1]:
        raise ShapeError("encode_connections", v.shape, a.shape,
                         detail="attention length must equal M(M-1)/2")
    return mlp(gc.elementwise_multiply(a, v), params, "ace.encoder")


def classifier_logit(y_conn, y_graph, params):
    z = gc.concat([y_conn, y_graph], axis=-1)
    logit = mlp(z, params, "ace.classifier")
    return gc.reshape(logit, logit.shape[:-1])


def fuse_and_classify(y_conn, y_graph, params):
    """Predicted probability of the case class, shape (B,)."""
    return gc.sigmoid(classifier_logit(y_conn, y_graph, params))


def _check_labels(y):
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise DataError(f"labels must be 0 or 1, got {sorted(set(y.tolist()))}")
    return y


def cross_entropy(y_hat, y, eps=CE_EPS):
    """Mean binary cross-entropy with predictions clamped to [eps, 1 - eps]."""
    y = _check_labels(y)
    p = gc.clip(gc.as_tensor(y_hat), eps, 1.0 - eps)
    pos = gc.elementwise_multiply(gc.log(p), y)
    neg = gc.elementwise_multiply(gc.log(gc.subtract(1.0, p)), 1.0 - y)
    return gc.scalar_multiply(gc.mean(gc.add(pos, neg)), -1.0)


def cosine(z1, z2, eps=SIM_EPS):
    """Row-wise cosine; defined as 0 (with zero gradient) when either norm product is below eps."""
    dot = gc.sum(gc.elementwise_multiply(z1, z2), axis=-1)
    norms = gc.elementwise_multiply(gc.frobenius_norm(z1, axis=-1), gc.frobenius_norm(z2, axis=-1))
    live = (norms.data >= eps).astype(np.float64)
    return gc.divide(gc.elementwise_multiply(dot, live), gc.clip(norms, eps, np.inf))


def sim_loss(z1, z2, eps=SIM_EPS):
    """Batch mean of 1 - cos(z1, z2): 0 when aligned, 2 when opposed."""
    z1, z2 = gc.as_tensor(z1), gc.as_tensor(z2)
    if z1.shape != z2.shape:
        raise ShapeError("sim_loss", z1.shape, z2.shape)
    return gc.mean(gc.subtract(1.0, cosine(z1, z2, eps)))


@dataclass
class LossReport:
    ce: gc.Tensor
    sim: gc.Tensor
    total: gc.Tensor
    lam: float

    def as_dict(self):
        return {"ce": self.ce.item(), "sim": self.sim.item(), "total": self.total.item(), "lam": self.lam}


def total_loss(ce, sim, lam):
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    ce, sim = gc.as_tensor(ce), gc.as_tensor(sim)
    total = gc.add(ce, gc.scalar_multiply(sim, lam))
    return LossReport(ce, sim, total, float(lam))
