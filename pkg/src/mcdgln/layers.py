"""Parameter initializers and the two-layer perceptron shared by the model branches."""
import numpy as np

from . import gradcore as gc

# small positive bias keeps ReLU units off their kink when an input row is exactly zero
BIAS_INIT = 0.01


def glorot(rng, n_in, n_out):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def init_linear(params, prefix, n_in, n_out, rng):
    params.add(f"{prefix}.w", glorot(rng, n_in, n_out))
    params.add(f"{prefix}.b", np.full(n_out, BIAS_INIT))


def init_mlp(params, prefix, n_in, n_hidden, n_out, rng):
    init_linear(params, f"{prefix}.0", n_in, n_hidden, rng)
    init_linear(params, f"{prefix}.1", n_hidden, n_out, rng)


def linear(x, params, prefix):
    return gc.add(gc.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def mlp(x, params, prefix):
    """linear -> ReLU -> linear over the last axis."""
    return linear(gc.relu(linear(x, params, f"{prefix}.0")), params, f"{prefix}.1")
