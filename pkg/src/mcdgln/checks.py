"""Finite-difference gradient suite over every primitive and the composed loss."""
from __future__ import annotations

import numpy as np

from . import gradcore as gc
from .connectivity import WindowConfig, dynamic_fc, static_fc
from .dataio import RunConfig
from .model import compute_loss, init_params

GRAD_TOL = 1e-4


def _unary(fn):
    return lambda xs: gc.sum(gc.elementwise_multiply(fn(xs[0]), _probe(fn(xs[0]).shape)))


def _probe(shape):
    # fixed non-uniform weights so that sum() does not hide transposition/ordering errors
    n = int(np.prod(shape)) if shape else 1
    return np.linspace(0.3, 1.7, n).reshape(shape)


def _binary(fn):
    def f(xs):
        out = fn(xs[0], xs[1])
        return gc.sum(gc.elementwise_multiply(out, _probe(out.shape)))
    return f


def primitive_cases(rng):
    """(name, function, inputs) triples; inputs uniform in [-1, 1]."""
    u = lambda *shape: rng.uniform(-1, 1, size=shape)  # noqa: E731
    pos = lambda *shape: rng.uniform(0.5, 1.5, size=shape)  # noqa: E731
    return [
        ("add", _binary(gc.add), [u(2, 3, 4), u(3, 4)]),
        ("subtract", _binary(gc.subtract), [u(3, 4), u(2, 1, 4)]),
        ("elementwise_multiply", _binary(gc.elementwise_multiply), [u(2, 3, 4), u(3, 1)]),
        ("divide", _binary(gc.divide), [u(3, 4), pos(3, 4)]),
        ("matmul", _binary(gc.matmul), [u(2, 3, 4), u(4, 5)]),
        ("scalar_multiply", _unary(lambda x: gc.scalar_multiply(x, -1.7)), [u(3, 4)]),
        ("add_scalar", _unary(lambda x: gc.add_scalar(x, 0.25)), [u(3, 4)]),
        ("clip", _unary(lambda x: gc.clip(x, -0.5, 0.5)), [u(3, 4)]),
        ("transpose", _unary(gc.transpose), [u(2, 3, 4)]),
        ("concat", lambda xs: gc.sum(gc.elementwise_multiply(gc.concat([xs[0], xs[1]], axis=-1),
                                                             _probe((2, 7)))), [u(2, 3), u(2, 4)]),
        ("reshape", _unary(lambda x: gc.reshape(x, (4, 6))), [u(2, 3, 4)]),
        ("sum", _unary(lambda x: gc.sum(x, axis=1)), [u(2, 3, 4)]),
        ("mean", _unary(lambda x: gc.mean(x, axis=(-2, -1))), [u(2, 3, 4)]),
        ("row_max", _unary(gc.row_max), [u(3, 5)]),
        ("global_max", _unary(gc.global_max), [u(2, 5, 3)]),
        ("relu", _unary(gc.relu), [u(3, 4)]),
        ("tanh", _unary(gc.tanh), [u(3, 4)]),
        ("sigmoid", _unary(gc.sigmoid), [u(3, 4)]),
        ("softmax", _unary(gc.softmax), [u(3, 4)]),
        ("log", _unary(gc.log), [pos(3, 4)]),
        ("frobenius_norm", _unary(gc.frobenius_norm), [u(2, 3, 4)]),
        ("upper_triangle_vectorize", _unary(gc.upper_triangle_vectorize), [u(2, 4, 4)]),
        ("cross_conv", _binary(gc.cross_conv), [u(2, 3, 4, 4), u(3, 4, 4)]),
    ]


def toy_problem(seed=0):
    """4 ROIs, 2 windows, 2 subjects (one per class)."""
    rng = np.random.default_rng(seed)
    cfg = RunConfig(window_length=12, stride=8, wea_layers=2, hgcn_blocks=2, hidden=3,
                    keep_ratio=0.5, sparsify_q=0.5, lam=0.1, seed=seed)
    wcfg = WindowConfig(cfg.window_length, cfg.stride)
    series = [rng.standard_normal((4, 20)) for _ in range(2)]
    dyn = np.stack([dynamic_fc(x, wcfg) for x in series])
    sfc = np.stack([static_fc(x) for x in series])
    labels = np.array([0, 1])
    params = init_params(cfg, 4, dyn.shape[1], seed)
    return cfg, params, dyn, sfc, labels


def composed_loss_error(seed=0, eps=1e-6):
    cfg, params, dyn, sfc, labels = toy_problem(seed)
    names = params.names()

    def f(leaves):
        ps = gc.ParamSet.from_tensors(names, leaves, params.meta)
        report, _ = compute_loss(ps, dyn, sfc, labels, cfg)
        return report.total

    return gc.grad_check(f, [params.values(n) for n in names], eps=eps)


def run_suite(seed=0, eps=1e-6):
    """Dict of max relative error per check, including the composed loss."""
    rng = np.random.default_rng(seed)
    out = {name: gc.grad_check(fn, xs, eps=eps) for name, fn, xs in primitive_cases(rng)}
    out["composed_loss"] = composed_loss_error(seed, eps)
    return out
