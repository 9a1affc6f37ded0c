import warnings

import numpy as np
import pytest

from mcdgln import gradcore as gc
from mcdgln.errors import ShapeError
from mcdgln.wea import cross_conv_layer, cross_conv_preactivation, global_fusion, wea_forward


def quad_loop(E, W):
    K, M, _ = E.shape
    out = np.zeros_like(E)
    for c in range(K):
        for i in range(M):
            for j in range(M):
                acc = 0.0
                for m in range(M):
                    acc += E[c, i, m] * W[c, i, m]
                for n in range(M):
                    acc += E[c, n, j] * W[c, n, j]
                out[c, i, j] = acc
    return out


def test_unit_weight_example():
    E = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    pre = cross_conv_preactivation(E, np.ones((1, 2, 2))).data
    assert pre[0, 0, 0] == 7.0
    np.testing.assert_array_equal(pre[0], E[0].sum(1)[:, None] + E[0].sum(0)[None, :])


def test_zero_weights():
    E = np.random.default_rng(0).normal(size=(2, 3, 3))
    assert not cross_conv_preactivation(E, np.zeros((2, 3, 3))).data.any()
    assert not cross_conv_layer(E, np.zeros((2, 3, 3))).data.any()


def test_quadruple_loop_oracle(rng):
    for _ in range(20):
        K = int(rng.integers(1, 4))
        E, W = rng.normal(size=(K, 5, 5)), rng.normal(size=(K, 5, 5))
        np.testing.assert_allclose(cross_conv_preactivation(E, W).data, quad_loop(E, W), atol=1e-12, rtol=0)


def test_linearity(rng):
    E1, E2, W = rng.normal(size=(3, 5, 5)), rng.normal(size=(3, 5, 5)), rng.normal(size=(3, 5, 5))
    a, b = 0.7, -1.3
    lhs = cross_conv_preactivation(a * E1 + b * E2, W).data
    rhs = a * cross_conv_preactivation(E1, W).data + b * cross_conv_preactivation(E2, W).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12, rtol=0)


def test_symmetry(rng):
    E, W = rng.normal(size=(3, 5, 5)), rng.normal(size=(3, 5, 5))
    E, W = E + E.transpose(0, 2, 1), W + W.transpose(0, 2, 1)
    out = cross_conv_layer(E, W).data
    np.testing.assert_allclose(out, out.transpose(0, 2, 1), atol=1e-12, rtol=0)


def test_channel_mismatch():
    with pytest.raises(ShapeError, match="cross_conv_layer"):
        cross_conv_layer(np.zeros((2, 3, 3)), np.zeros((3, 3, 3)))


def test_wea_depth(rng):
    E = rng.normal(size=(2, 4, 4))
    np.testing.assert_array_equal(wea_forward(E, []).data, E)
    W = rng.normal(size=(2, 4, 4))
    np.testing.assert_array_equal(wea_forward(E, [W]).data, cross_conv_layer(E, W).data)


def test_gradient_flows_through_weights(rng):
    E = rng.normal(size=(2, 3, 3))
    err = gc.grad_check(lambda xs: gc.sum(gc.tanh(wea_forward(xs[0], [xs[1], xs[1]]))),
                        [E, rng.normal(size=(2, 3, 3)) * 0.3])
    assert err < 1e-6


class TestFusion:
    def test_ones_alone(self):
        c = np.ones((1, 2, 2))
        with pytest.warns(RuntimeWarning):
            out = global_fusion(c, np.zeros((2, 2))).data
        np.testing.assert_allclose(out, 0.5 * c[0], atol=1e-12)

    def test_all_zero(self):
        with pytest.warns(RuntimeWarning, match="epsilon"):
            out = global_fusion(np.zeros((3, 2, 2)), np.zeros((2, 2))).data
        assert not out.any()

    def test_channel_equal_to_static(self, rng):
        s = np.corrcoef(rng.normal(size=(4, 20)))
        alpha = s.mean() / np.linalg.norm(s)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            out = global_fusion(s[None], s).data
        np.testing.assert_allclose(out, 2 * alpha * s, atol=1e-12)

    def test_symmetric_output(self, rng):
        out = global_fusion(rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 4, 4))).data
        np.testing.assert_allclose(out, out.transpose(0, 2, 1), atol=0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            global_fusion(np.ones((2, 3, 3)), np.ones((4, 4)))
