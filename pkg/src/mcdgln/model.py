"""The composed network: WEA -> MED -> HGCN -> ACE -> classifier."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .ace import (classifier_logit, cross_entropy, encode_connections, init_ace_params, sim_loss,
                  total_loss)
from .errors import CheckpointError
from .hgcn import build_graph, hgcn_forward, init_hgcn_params
from .med import masked_edge_drop
from .wea import global_fusion, init_wea_params, layer_weights, wea_forward


def n_edges(M):
    return M * (M - 1) // 2


def model_meta(cfg, M, K):
    return {
        "M": int(M),
        "K": int(K),
        "wea_layers": cfg.wea_layers,
        "hgcn_blocks": cfg.hgcn_blocks,
        "hidden": cfg.hidden,
        "window_length": cfg.window_length,
        "stride": cfg.stride,
    }


def init_params(cfg, M, K, seed):
    """Fresh parameters; ``seed`` may be an int or a SeedSequence."""
    rng = np.random.default_rng(seed)
    params = gc.ParamSet()
    E = n_edges(M)
    init_wea_params(params, cfg.wea_layers, K, M, rng)
    init_hgcn_params(params, cfg.hgcn_blocks, M, cfg.hidden, E, rng)
    init_ace_params(params, E, cfg.hidden, rng)
    params.meta = {**model_meta(cfg, M, K), "config": cfg.to_dict()}
    return params


def check_compatible(params, cfg, M, K):
    expected = model_meta(cfg, M, K)
    found = {k: params.meta.get(k) for k in expected}
    if found != expected:
        diff = {k: (found[k], expected[k]) for k in expected if found[k] != expected[k]}
        raise CheckpointError(f"checkpoint does not match data/config (found, expected): {diff}")


@dataclass
class ForwardOutput:
    y_hat: gc.Tensor
    logit: gc.Tensor
    y_graph: gc.Tensor
    y_conn: gc.Tensor
    tsfc: gc.Tensor
    mask: np.ndarray
    attention: gc.Tensor


def task_fc(params, dyn, sfc, cfg):
    """tsFC for a batch: (B, K, M, M) windows and (B, M, M) static FC -> (B, M, M)."""
    if cfg.ablate == "wea":
        return gc.as_tensor(sfc)
    updated = wea_forward(dyn, layer_weights(params, cfg.wea_layers))
    return global_fusion(updated, sfc)


def forward(params, dyn, sfc, cfg):
    sfc = gc.as_tensor(sfc)
    B, M = sfc.shape[0], sfc.shape[-1]
    tsfc = task_fc(params, dyn, sfc, cfg)
    masked, mask = masked_edge_drop(tsfc, sfc, cfg.sparsify_q)

    if cfg.ablate == "hgcn":
        y_graph = gc.tensor(np.zeros((B, cfg.hidden)))
        a = gc.tensor(np.ones((B, n_edges(M))))
    else:
        y_graph, a = hgcn_forward(build_graph(tsfc, cfg.keep_ratio), params, cfg.hgcn_blocks)

    if cfg.ablate == "ace":
        y_conn = gc.tensor(np.zeros((B, cfg.hidden)))
    else:
        y_conn = encode_connections(masked, a, params)

    logit = classifier_logit(y_conn, y_graph, params)
    return ForwardOutput(gc.sigmoid(logit), logit, y_graph, y_conn, tsfc, mask, a)


def compute_loss(params, dyn, sfc, labels, cfg):
    out = forward(params, dyn, sfc, cfg)
    ce = cross_entropy(out.y_hat, labels)
    sim = sim_loss(out.y_graph, out.y_conn)
    return total_loss(ce, sim, cfg.lam), out


def predict(params, dyn, sfc, cfg, batch_size=64):
    """Case-class probabilities, evaluated without recording a tape."""
    n = len(sfc)
    out = np.empty(n)
    for lo in range(0, n, batch_size):
        hi = min(n, lo + batch_size)
        out[lo:hi] = forward(params, dyn[lo:hi], sfc[lo:hi], cfg).y_hat.data
    return out


def compute_tsfc(params, dyn, sfc, cfg, batch_size=64):
    n = len(sfc)
    chunks = [task_fc(params, dyn[lo:lo + batch_size], sfc[lo:lo + batch_size], cfg).data
              for lo in range(0, n, batch_size)]
    return np.concatenate(chunks)
