import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcdgln import gradcore as gc
from mcdgln.errors import ShapeError
from mcdgln.med import apply_mask, make_mask, masked_edge_drop, sparsify


def sym(rng, M):
    X = rng.normal(size=(M, M))
    return X + X.T


def upper(X):
    return X[np.triu_indices(X.shape[-1], 1)]


def test_q_zero_unchanged(rng):
    X = sym(rng, 5)
    np.testing.assert_array_equal(sparsify(X, 0.0), X)


def test_smallest_half_zeroed():
    # upper-triangle |values| 1..6 in row-major order; floor(0.5 * 6) = 3 smallest go
    X = np.zeros((4, 4))
    X[np.triu_indices(4, 1)] = [-6, 5, 1, -2, 4, 3]
    X = X + X.T
    out = sparsify(X, 0.5)
    np.testing.assert_array_equal(upper(out), [-6, 5, 0, 0, 4, 0])
    np.testing.assert_array_equal(out, out.T)


def test_ties_lexicographic():
    out = sparsify(np.full((4, 4), 0.5), 0.5)
    np.testing.assert_array_equal(upper(out), [0, 0, 0, 0.5, 0.5, 0.5])


def test_batch_matches_single(rng):
    X = np.stack([sym(rng, 5) for _ in range(3)])
    out = sparsify(X, 0.4)
    for b in range(3):
        np.testing.assert_array_equal(out[b], sparsify(X[b], 0.4))


def test_mask_values():
    T = np.array([[0.2, 0.7, 0.0], [0.7, 0.1, -0.3], [0.0, -0.3, 0.4]])
    np.testing.assert_array_equal(make_mask(T), [[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    assert not make_mask(np.zeros((3, 3))).any()


def test_apply_mask_examples(rng):
    s = np.corrcoef(rng.normal(size=(4, 20)))
    np.testing.assert_array_equal(apply_mask(s, 1 - np.eye(4)).data, s - np.diag(np.diag(s)))
    assert not apply_mask(s, np.zeros((4, 4))).data.any()
    with pytest.raises(ShapeError):
        apply_mask(s, np.zeros((3, 3)))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 9), st.floats(0.0, 0.99), st.integers(0, 2**31))
def test_mask_properties(M, q, seed):
    rng = np.random.default_rng(seed)
    T, S = sym(rng, M), sym(rng, M)
    sp = sparsify(T, q)
    E = M * (M - 1) // 2
    assert np.count_nonzero(upper(sp) == 0) == math.floor(q * E + 1e-9)
    mask = make_mask(sp)
    assert set(np.unique(mask)) <= {0.0, 1.0}
    assert np.array_equal(mask, mask.T)
    assert np.all(np.diag(mask) == 0)
    once = apply_mask(S, mask).data
    assert np.array_equal(apply_mask(once, mask).data, once)


def test_zero_gradient_through_masked_entries(rng):
    S0, T = sym(rng, 5), sym(rng, 5)
    params = gc.ParamSet()
    S = params.add("s", S0)
    with gc.Tape():
        masked, mask = masked_edge_drop(T, S, 0.5)
        loss = gc.sum(gc.tanh(masked))
    g = gc.backward(loss, params)["s"]
    assert np.all(g[mask == 0] == 0.0)
    assert np.all(g[mask == 1] != 0.0)
