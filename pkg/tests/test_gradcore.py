import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mcdgln import gradcore as gc
from mcdgln.checks import GRAD_TOL, primitive_cases
from mcdgln.errors import CheckpointError, NumericalError, ShapeError, TapeError


def central_diff(f, x, eps=1e-6):
    """Plain finite-difference gradient of a numpy -> float function."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g


class TestForward:
    def test_matmul_identity(self):
        A = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(gc.matmul(np.eye(3), A).data, A)

    def test_relu(self):
        np.testing.assert_array_equal(gc.relu([-1.0, 0.0, 2.0]).data, [0, 0, 2])

    def test_frobenius_345(self):
        assert gc.frobenius_norm([[3.0, 4.0], [0.0, 0.0]]).item() == 5.0

    def test_upper_triangle_row_major(self):
        A = np.arange(16.0).reshape(4, 4)
        np.testing.assert_array_equal(gc.upper_triangle_vectorize(A).data, [1, 2, 3, 6, 7, 11])

    def test_softmax_rows_sum_to_one(self):
        x = np.random.default_rng(0).normal(size=(5, 7)) * 10
        np.testing.assert_allclose(gc.softmax(x).data.sum(-1), 1.0, atol=1e-12)

    def test_global_max_is_columnwise(self):
        np.testing.assert_array_equal(gc.global_max([[1.0, 5.0], [3.0, 2.0]]).data, [3, 5])

    def test_row_max(self):
        np.testing.assert_array_equal(gc.row_max([[1.0, 5.0], [3.0, 2.0]]).data, [5, 3])

    def test_cross_conv_matches_loop(self):
        rng = np.random.default_rng(1)
        E, W = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3))
        out = gc.cross_conv(E, W).data
        for c in range(2):
            for i in range(3):
                for j in range(3):
                    ref = sum(E[c, i, m] * W[c, i, m] for m in range(3)) + \
                        sum(E[c, n, j] * W[c, n, j] for n in range(3))
                    assert abs(out[c, i, j] - ref) < 1e-12

    def test_nan_rejected_at_creation(self):
        with pytest.raises(NumericalError):
            gc.tensor([1.0, np.nan])
        with pytest.raises(NumericalError):
            gc.tensor([np.inf])

    @pytest.mark.filterwarnings("ignore:divide by zero")
    def test_nonfinite_intermediate_names_op(self):
        with pytest.raises(NumericalError, match="divide"):
            gc.divide([1.0], [0.0])

    def test_tensors_are_immutable(self):
        t = gc.tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 3.0


class TestShapeErrors:
    @pytest.mark.parametrize("op,a,b", [
        (gc.add, (2, 3), (4, 3)),
        (gc.elementwise_multiply, (2, 3), (3, 2)),
        (gc.matmul, (2, 3), (2, 3)),
        (gc.concat, (2, 3), (3, 3)),
    ])
    def test_names_op_and_shapes(self, op, a, b):
        x, y = np.zeros(a), np.zeros(b)
        with pytest.raises(ShapeError) as info:
            op([x, y], axis=-1) if op is gc.concat else op(x, y)
        msg = str(info.value)
        assert op.__name__ in msg
        assert str(a) in msg and str(b) in msg

    def test_reshape_mismatch(self):
        with pytest.raises(ShapeError, match="reshape"):
            gc.reshape(np.zeros((2, 3)), (4, 2))


class TestBackward:
    def test_sum_gives_ones(self):
        x = gc.tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
        with gc.Tape():
            loss = gc.sum(x)
        g = gc.backward(loss)
        np.testing.assert_array_equal(g[x], np.ones((3, 4)))

    def test_tanh_at_zero(self):
        x = gc.tensor(np.zeros(5), requires_grad=True)
        with gc.Tape():
            loss = gc.sum(gc.tanh(x))
        np.testing.assert_array_equal(gc.backward(loss)[x], np.ones(5))

    def test_matmul_weight_gradient_matches_fd(self):
        rng = np.random.default_rng(2)
        W0, x = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        params = gc.ParamSet()
        W = params.add("W", W0)
        with gc.Tape():
            loss = gc.sum(gc.matmul(W, x))
        g = gc.backward(loss, params)["W"]
        fd = central_diff(lambda w: (w @ x).sum(), W0)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)
        # closed form: row-constant outer structure, dL/dW_ij = sum_k x_jk
        np.testing.assert_allclose(g, np.tile(x.sum(axis=1), (3, 1)), atol=1e-12)

    def test_non_scalar_loss(self):
        x = gc.tensor(np.ones(3), requires_grad=True)
        with gc.Tape():
            y = gc.tanh(x)
        with pytest.raises(TapeError, match="scalar"):
            gc.backward(y)

    def test_second_backward_rejected(self):
        x = gc.tensor(np.ones(3), requires_grad=True)
        with gc.Tape():
            loss = gc.sum(x)
        gc.backward(loss)
        with pytest.raises(TapeError, match="already"):
            gc.backward(loss)

    def test_empty_tape_rejected(self):
        with pytest.raises(TapeError):
            gc.backward(gc.sum(gc.tensor([1.0, 2.0])))

    def test_unreachable_param_zero_grad(self):
        params = gc.ParamSet()
        a = params.add("a", [1.0, 2.0])
        params.add("unused", np.ones((2, 2)))
        with gc.Tape():
            loss = gc.sum(gc.elementwise_multiply(a, a))
        g = gc.backward(loss, params)
        np.testing.assert_array_equal(g["a"], [2.0, 4.0])
        np.testing.assert_array_equal(g["unused"], np.zeros((2, 2)))

    def test_grads_accumulate_until_zeroed(self):
        params = gc.ParamSet()
        a = params.add("a", [1.0])
        for _ in range(2):
            with gc.Tape():
                loss = gc.sum(gc.scalar_multiply(a, 3.0))
            gc.backward(loss, params)
        assert params.grads["a"][0] == 6.0
        params.zero_grad()
        assert params.grads["a"][0] == 0.0

    def test_row_max_tie_routes_to_first(self):
        x = gc.tensor([[2.0, 2.0, 1.0]], requires_grad=True)
        with gc.Tape():
            loss = gc.sum(gc.row_max(x))
        np.testing.assert_array_equal(gc.backward(loss)[x], [[1.0, 0.0, 0.0]])

    def test_global_max_tie_routes_to_first(self):
        x = gc.tensor([[1.0, 4.0], [1.0, 3.0]], requires_grad=True)
        with gc.Tape():
            loss = gc.sum(gc.global_max(x))
        np.testing.assert_array_equal(gc.backward(loss)[x], [[1.0, 1.0], [0.0, 0.0]])


class TestGradCheck:
    def test_square(self):
        err = gc.grad_check(lambda xs: gc.sum(gc.elementwise_multiply(xs[0], xs[0])), [[1.0, 2.0]])
        assert err < 1e-6

    def test_constant(self):
        assert gc.grad_check(lambda xs: gc.sum(gc.tensor([1.0, 2.0])), [[1.0, 2.0]]) == 0.0

    def test_nonfinite_input(self):
        with pytest.raises(NumericalError):
            gc.grad_check(lambda xs: gc.sum(xs[0]), [[np.nan]])

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_every_primitive(self, seed):
        for name, fn, xs in primitive_cases(np.random.default_rng(seed)):
            err = gc.grad_check(fn, xs)
            assert err < GRAD_TOL, f"{name}: {err}"

    def test_detects_wrong_gradient(self):
        # a deliberately broken op must be caught
        def bad_square(a):
            return gc._apply("bad", [a], lambda x: x * x, lambda g, x: (g * x,))

        err = gc.grad_check(lambda xs: gc.sum(bad_square(xs[0])), [[1.0, 2.0, 3.0]])
        assert err > 0.1


class TestTapeProperties:
    def test_gradient_linearity(self):
        rng = np.random.default_rng(3)
        X0, W0 = rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, (3, 2))

        def f(W):
            return gc.sum(gc.tanh(gc.matmul(X0, W)))

        def g(W):
            return gc.sum(gc.sigmoid(gc.matmul(X0, W)))

        def grad(build):
            ps = gc.ParamSet()
            W = ps.add("W", W0)
            with gc.Tape():
                loss = build(W)
            return gc.backward(loss, ps)["W"]

        both = grad(lambda W: gc.add(f(W), g(W)))
        np.testing.assert_allclose(both, grad(f) + grad(g), rtol=0, atol=1e-12)

    def test_replay_is_bitwise_identical(self):
        rng = np.random.default_rng(4)
        x = gc.tensor(rng.normal(size=(3, 3)), requires_grad=True)
        with gc.Tape() as tape:
            y = gc.softmax(gc.matmul(gc.tanh(x), gc.transpose(x)))
            gc.sum(gc.frobenius_norm(y, axis=-1))
        first = tape.replay()
        second = tape.replay()
        assert len(first) == len(tape)
        for a, b, rec in zip(first, second, tape.records):
            assert np.array_equal(a, b)
            assert np.array_equal(a, rec.out.data)

    def test_no_tape_no_recording(self):
        x = gc.tensor([1.0], requires_grad=True)
        y = gc.tanh(x)
        assert not y.requires_grad

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 4)),
                  elements=st.floats(-1, 1)),
           st.sampled_from([(1,), (1, 1)]))
    def test_broadcast_gradient_shapes(self, x, extra):
        a = gc.tensor(x, requires_grad=True)
        b = gc.tensor(np.ones(extra + x.shape[-1:]), requires_grad=True)
        with gc.Tape():
            loss = gc.sum(gc.elementwise_multiply(gc.add(a, b), a))
        g = gc.backward(loss)
        assert g[a].shape == a.shape
        assert g[b].shape == b.shape


class TestParamSet:
    def test_checkpoint_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        ps = gc.ParamSet()
        ps.add("w", rng.normal(size=(3, 4)))
        ps.add("b", rng.normal(size=4))
        ps.add("s", 1.0 / 3.0)
        ps.meta = {"M": 4}
        path = tmp_path / "p.ckpt"
        ps.save(path)
        assert path.read_text().splitlines()[0] == gc.CHECKPOINT_MAGIC
        back = gc.ParamSet.load(path)
        assert back.names() == ["w", "b", "s"]
        assert back.meta == {"M": 4}
        for n in ps:
            assert np.array_equal(back.values(n), ps.values(n))

    def test_bad_header(self, tmp_path):
        path = tmp_path / "p.ckpt"
        path.write_text("MCDGLN-CKPT-0\n")
        with pytest.raises(CheckpointError, match="MCDGLN-CKPT-1"):
            gc.ParamSet.load(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "p.ckpt"
        path.write_text("MCDGLN-CKPT-1\nparam w 2 2 2\n1 2 3\n")
        with pytest.raises(CheckpointError, match="3 values"):
            gc.ParamSet.load(path)

    def test_set_checks_shape(self):
        ps = gc.ParamSet()
        ps.add("w", np.zeros(3))
        with pytest.raises(ShapeError):
            ps.set("w", np.zeros(4))

    def test_duplicate_name(self):
        ps = gc.ParamSet()
        ps.add("w", [1.0])
        with pytest.raises(KeyError):
            ps.add("w", [2.0])
