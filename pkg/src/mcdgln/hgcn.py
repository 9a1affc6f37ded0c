"""Hierarchical residual GCN with max readout and self-attention over block embeddings."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .connectivity import binarize_adjacency
from .errors import ShapeError
from .layers import BIAS_INIT, glorot, init_mlp, mlp


@dataclass
class Graph:
    adjacency: np.ndarray  # (..., M, M) binary, zero diagonal
    features: gc.Tensor  # (..., M, M), rows of tsFC


def build_graph(tsfc, keep_ratio):
    """Adjacency from the top edges of tsFC; node features are the tsFC rows."""
    X = gc.as_tensor(tsfc)
    vals = X.data
    if vals.ndim < 2 or vals.shape[-1] != vals.shape[-2]:
        raise ShapeError("build_graph", vals.shape)
    M = vals.shape[-1]
    flat = vals.reshape((-1, M, M))
    A = np.stack([binarize_adjacency(m, keep_ratio) for m in flat]).reshape(vals.shape)
    return Graph(A, X)


def normalize_adjacency(A):
    """D^-1/2 (A + I) D^-1/2 with self-loops added."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ShapeError("normalize_adjacency", A.shape)
    A_hat = A + np.eye(A.shape[-1])
    d = 1.0 / np.sqrt(A_hat.sum(axis=-1))
    return A_hat * d[..., :, None] * d[..., None, :]


def init_block_params(params, prefix, d_in, d_out, rng):
    params.add(f"{prefix}.theta", glorot(rng, d_in, d_out))
    init_mlp(params, f"{prefix}.mlp", d_in + d_out, d_out, d_out, rng)


def gcn_block(H, A_norm, params, prefix):
    """MLP(H concat ReLU(A_norm H Theta))."""
    H = gc.as_tensor(H)
    A_norm = gc.as_tensor(A_norm)
    theta = params[f"{prefix}.theta"]
    if H.shape[-1] != theta.shape[0] or A_norm.shape[-1] != H.shape[-2]:
        raise ShapeError("gcn_block", H.shape, A_norm.shape, theta.shape)
    msg = gc.relu(gc.matmul(A_norm, gc.matmul(H, theta)))
    return mlp(gc.concat([H, msg], axis=-1), params, f"{prefix}.mlp")


def readout_max(H):
    return gc.global_max(H)


def init_attention_params(params, d, n_tokens, n_edges, rng):
    for name in ("wq", "wk", "wv"):
        params.add(f"attn.{name}", glorot(rng, d, d))
    init_mlp(params, "attn.out", n_tokens * d, d, d, rng)
    params.add("attn.edge.w", glorot(rng, d, n_edges))
    params.add("attn.edge.b", np.full(n_edges, BIAS_INIT))


def attention_weights(tokens, params):
    d = tokens.shape[-1]
    q = gc.matmul(tokens, params["attn.wq"])
    k = gc.matmul(tokens, params["attn.wk"])
    scores = gc.scalar_multiply(gc.matmul(q, gc.transpose(k)), 1.0 / math.sqrt(d))
    return gc.softmax(scores)


def self_attention(tokens, params):
    """Single-head scaled dot-product attention over (B, k, d) block tokens.

    Returns the graph embedding (B, d), the edge-space attention vector
    (B, E) in (0, 1), and the (B, k, k) attention weights.
    """
    tokens = gc.as_tensor(tokens)
    if tokens.ndim != 3:
        raise ShapeError("self_attention", tokens.shape, detail="expected (batch, tokens, width)")
    B, k, d = tokens.shape
    weights = attention_weights(tokens, params)
    attended = gc.matmul(weights, gc.matmul(tokens, params["attn.wv"]))
    y_graph = mlp(gc.reshape(attended, (B, k * d)), params, "attn.out")
    pooled = gc.mean(attended, axis=-2)
    edge = gc.add(gc.matmul(pooled, params["attn.edge.w"]), params["attn.edge.b"])
    return y_graph, gc.sigmoid(edge), weights


def init_hgcn_params(params, n_blocks, M, d, n_edges, rng):
    d_in = M
    for blk in range(n_blocks):
        init_block_params(params, f"hgcn.{blk}", d_in, d, rng)
        d_in = d
    init_attention_params(params, d, n_blocks, n_edges, rng)


def block_tokens(A_norm, X, params, n_blocks):
    """Run the blocks and stack the per-block max readouts into (B, k, d)."""
    H = gc.as_tensor(X)
    tokens = []
    for blk in range(n_blocks):
        H = gcn_block(H, A_norm, params, f"hgcn.{blk}")
        h = readout_max(H)
        tokens.append(gc.reshape(h, h.shape[:-1] + (1, h.shape[-1])))
    return gc.concat(tokens, axis=-2)


def hgcn_forward(graph: Graph, params, n_blocks):
    """Graph embedding y^G and attention vector a for a batch of graphs."""
    A_norm = normalize_adjacency(graph.adjacency)
    tokens = block_tokens(A_norm, graph.features, params, n_blocks)
    y_graph, a, _ = self_attention(tokens, params)
    return y_graph, a
