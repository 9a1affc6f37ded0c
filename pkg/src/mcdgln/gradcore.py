"""Small reverse-mode differentiation engine over dense float64 arrays.

Operations executed while a :class:`Tape` is active are recorded on it;
:func:`backward` walks the record in reverse to produce gradients for a
:class:`ParamSet`. Outside a tape the same operations simply compute values,
which is what inference and finite differences use.

Arrays may carry leading batch axes. Binary elementwise operations follow
numpy broadcasting, and gradients are reduced back to the operand shapes.
"""
from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import CheckpointError, NumericalError, ShapeError, TapeError

CHECKPOINT_MAGIC = "MCDGLN-CKPT-1"

_state = threading.local()


def _active_tape():
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Immutable float64 array with an optional link to the tape that made it."""

    __slots__ = ("data", "requires_grad", "name", "_tape")
    __array_priority__ = 100

    def __init__(self, values, requires_grad=False, name=None, _tape=None, _owned=False):
        if _owned and isinstance(values, np.ndarray) and values.dtype == np.float64:
            data = values
        else:
            data = np.array(values, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NumericalError(f"non-finite value in tensor{' ' + name if name else ''}")
        data.flags.writeable = False
        self.data = data
        self.requires_grad = requires_grad
        self.name = name
        self._tape = _tape

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_multiply(self, other)
        return elementwise_multiply(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        return divide(self, other)

    def __neg__(self):
        return scalar_multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def tensor(values, requires_grad=False, name=None):
    return Tensor(values, requires_grad=requires_grad, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    op: str
    inputs: tuple
    out: Tensor
    forward: Callable
    vjp: Callable


class Tape:
    """Ordered record of executed primitives.

    Use as a context manager; nested tapes are allowed and the innermost one
    records. Each tape supports a single backward pass.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, op, inputs, out, forward, vjp):
        self.records.append(_Record(op, tuple(inputs), out, forward, vjp))

    def replay(self):
        """Re-execute every record from the leaf values; returns the output arrays in order."""
        env = {}
        outs = []
        for rec in self.records:
            args = [env.get(id(t), t.data) for t in rec.inputs]
            val = rec.forward(*args)
            env[id(rec.out)] = val
            outs.append(val)
        return outs


def _apply(op, inputs, forward, vjp):
    """Run ``forward`` on input arrays; record on the active tape if any input needs a gradient."""
    inputs = [as_tensor(x) for x in inputs]
    value = forward(*[t.data for t in inputs])
    if isinstance(value, np.ndarray) and not value.flags.owndata:
        value = value.copy()
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    try:
        out = Tensor(value, requires_grad=needs, _tape=tape if needs else None, _owned=True)
    except NumericalError as exc:
        raise NumericalError(f"{op}: {exc}") from None
    if needs:
        tape.record(op, inputs, out, forward, vjp)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _swap(x):
    return np.swapaxes(x, -1, -2)


# ---------------------------------------------------------------- primitives

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _apply("add", [a, b], np.add,
                  lambda g, x, y: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def subtract(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("subtract", a, b)
    sa, sb = a.shape, b.shape
    return _apply("subtract", [a, b], np.subtract,
                  lambda g, x, y: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def elementwise_multiply(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("elementwise_multiply", a, b)
    sa, sb = a.shape, b.shape
    return _apply("elementwise_multiply", [a, b], np.multiply,
                  lambda g, x, y: (_unbroadcast(g * y, sa), _unbroadcast(g * x, sb)))


def divide(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("divide", a, b)
    sa, sb = a.shape, b.shape
    return _apply("divide", [a, b], np.divide,
                  lambda g, x, y: (_unbroadcast(g / y, sa), _unbroadcast(-g * x / (y * y), sb)))


def scalar_multiply(a, c):
    c = float(c)
    return _apply("scalar_multiply", [a], lambda x: x * c, lambda g, x: (g * c,))


def add_scalar(a, c):
    c = float(c)
    return _apply("add_scalar", [a], lambda x: x + c, lambda g, x: (g,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch axes") from None
    sa, sb = a.shape, b.shape
    return _apply("matmul", [a, b], np.matmul,
                  lambda g, x, y: (_unbroadcast(g @ _swap(y), sa), _unbroadcast(_swap(x) @ g, sb)))


def transpose(a):
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("transpose", a.shape, detail="needs at least 2 axes")
    return _apply("transpose", [a], _swap, lambda g, x: (_swap(g),))


def concat(tensors: Sequence, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError("concat", ref, t.shape, detail=f"axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def vjp(g, *xs):
        return tuple(np.split(g, splits, axis=ax))

    return _apply("concat", tensors, lambda *xs: np.concatenate(xs, axis=ax), vjp)


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    src = a.shape
    try:
        a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, shape) from None
    return _apply("reshape", [a], lambda x: x.reshape(shape), lambda g, x: (g.reshape(src),))


def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)) if not keepdims else g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = sorted(a % len(shape) for a in axes)
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims=False):  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    return _apply("sum", [a], lambda x: np.sum(x, axis=axis, keepdims=keepdims),
                  lambda g, x: (np.array(_expand(g, shape, axis, keepdims)),))


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([shape[ax] for ax in axes]))
    return _apply("mean", [a], lambda x: np.mean(x, axis=axis, keepdims=keepdims),
                  lambda g, x: (np.array(_expand(g, shape, axis, keepdims)) / n,))


def _max_along(op, a, axis):
    a = as_tensor(a)
    if a.ndim < 1 or a.shape[axis] < 1:
        raise ShapeError(op, a.shape)

    def vjp(g, x):
        # np.argmax picks the first maximal index on ties
        idx = np.expand_dims(np.argmax(x, axis=axis), axis)
        out = np.zeros_like(x)
        np.put_along_axis(out, idx, np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _apply(op, [a], lambda x: np.max(x, axis=axis), vjp)


def row_max(a):
    """Maximum over the last axis."""
    return _max_along("row_max", a, -1)


def global_max(a):
    """Maximum over the node axis (second to last): entrywise readout of an (..., M, d) array."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("global_max", a.shape, detail="needs (..., nodes, features)")
    return _max_along("global_max", a, -2)


def relu(a):
    return _apply("relu", [a], lambda x: np.maximum(x, 0.0), lambda g, x: (g * (x > 0),))


def tanh(a):
    def vjp(g, x):
        t = np.tanh(x)
        return (g * (1.0 - t * t),)

    return _apply("tanh", [a], np.tanh, vjp)


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    def vjp(g, x):
        s = _sigmoid(x)
        return (g * s * (1.0 - s),)

    return _apply("sigmoid", [a], _sigmoid, vjp)


def _softmax(x):
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax(a):
    """Softmax over the last axis."""
    def vjp(g, x):
        s = _softmax(x)
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _apply("softmax", [a], _softmax, vjp)


def log(a):
    def forward(x):
        if np.any(x <= 0):
            raise NumericalError("log of non-positive value")
        return np.log(x)

    return _apply("log", [a], forward, lambda g, x: (g / x,))


def clip(a, lo, hi):
    return _apply("clip", [a], lambda x: np.clip(x, lo, hi),
                  lambda g, x: (g * ((x >= lo) & (x <= hi)),))


def frobenius_norm(a, axis=(-2, -1)):
    """Euclidean norm over ``axis`` (default: the trailing matrix axes)."""
    a = as_tensor(a)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    if a.ndim < len(axes):
        raise ShapeError("frobenius_norm", a.shape, detail=f"axes {axes}")

    def forward(x):
        return np.sqrt(np.sum(x * x, axis=axes))

    def vjp(g, x):
        n = np.sqrt(np.sum(x * x, axis=axes, keepdims=True))
        safe = np.where(n > 0, n, 1.0)
        ge = np.expand_dims(g, tuple(ax % x.ndim for ax in axes))
        # zero subgradient at the origin
        return (np.where(n > 0, ge * x / safe, 0.0),)

    return _apply("frobenius_norm", [a], forward, vjp)


def upper_triangle_vectorize(a):
    """Strict upper triangle of the trailing square axes, row-major, as (..., M(M-1)/2)."""
    a = as_tensor(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError("upper_triangle_vectorize", a.shape, detail="needs square trailing axes")
    m = a.shape[-1]
    iu = np.triu_indices(m, 1)

    def vjp(g, x):
        out = np.zeros(x.shape)
        out[..., iu[0], iu[1]] = g
        return (out,)

    return _apply("upper_triangle_vectorize", [a], lambda x: x[..., iu[0], iu[1]], vjp)


def cross_conv(stack, weights):
    """Fused row-plus-column weighted aggregation over (..., K, M, M) with per-channel (K, M, M) weights.

    out[c, i, j] = sum_m E[c,i,m] W[c,i,m] + sum_n E[c,n,j] W[c,n,j]
    """
    stack, weights = as_tensor(stack), as_tensor(weights)
    if weights.ndim != 3 or stack.ndim < 3 or stack.shape[-3:] != weights.shape:
        raise ShapeError("cross_conv", stack.shape, weights.shape)
    return _apply("cross_conv", [stack, weights], kernels.cross_conv_forward,
                  lambda g, e, w: kernels.cross_conv_backward(np.ascontiguousarray(g), e, w))


# ---------------------------------------------------------------- parameters

class ParamSet:
    """Named, ordered trainable tensors with gradient accumulators."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self.grads: dict[str, np.ndarray] = {}
        self.meta: dict = {}

    def add(self, name, values):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(values, requires_grad=True, name=name)
        self._params[name] = t
        self.grads[name] = np.zeros(t.shape)
        return t

    @classmethod
    def from_tensors(cls, names, tensors, meta=None):
        """Wrap existing tensors (e.g. grad-check leaves) without copying."""
        out = cls()
        for name, t in zip(names, tensors):
            out._params[name] = t
            out.grads[name] = np.zeros(t.shape)
        out.meta = dict(meta or {})
        return out

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def values(self, name):
        return self._params[name].data

    def set(self, name, values):
        old = self._params[name]
        values = np.asarray(values, dtype=np.float64)
        if values.shape != old.shape:
            raise ShapeError("ParamSet.set", old.shape, values.shape)
        self._params[name] = Tensor(values, requires_grad=True, name=name)

    def zero_grad(self):
        for name, t in self._params.items():
            self.grads[name] = np.zeros(t.shape)

    def copy(self):
        out = ParamSet()
        for name, t in self._params.items():
            out.add(name, t.data)
        out.meta = dict(self.meta)
        return out

    def num_values(self):
        return int(np.sum([t.size for t in self._params.values()]))

    def save(self, path):
        import json

        with open(path, "w") as fh:
            fh.write(CHECKPOINT_MAGIC + "\n")
            fh.write("meta " + json.dumps(self.meta, sort_keys=True) + "\n")
            for name, t in self._params.items():
                dims = " ".join(str(d) for d in t.shape)
                fh.write(f"param {name} {t.ndim} {dims}".rstrip() + "\n")
                fh.write(" ".join(repr(float(v)) for v in t.data.reshape(-1)) + "\n")

    @classmethod
    def load(cls, path):
        import json

        try:
            with open(path) as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
        if not lines or lines[0] != CHECKPOINT_MAGIC:
            found = lines[0][:40] if lines else "<empty>"
            raise CheckpointError(f"{path}: expected header {CHECKPOINT_MAGIC!r}, found {found!r}")
        out = cls()
        i = 1
        if i < len(lines) and lines[i].startswith("meta "):
            out.meta = json.loads(lines[i][5:])
            i += 1
        while i < len(lines):
            head = lines[i].split()
            if len(head) < 3 or head[0] != "param":
                raise CheckpointError(f"{path}: malformed record at line {i + 1}")
            name, ndim = head[1], int(head[2])
            shape = tuple(int(d) for d in head[3:3 + ndim])
            if i + 1 >= len(lines):
                raise CheckpointError(f"{path}: missing values for {name}")
            vals = np.array([float(v) for v in lines[i + 1].split()], dtype=np.float64)
            if vals.size != int(np.prod(shape)):
                raise CheckpointError(f"{path}: {name} has {vals.size} values for shape {shape}")
            out.add(name, vals.reshape(shape))
            i += 2
        return out


# ---------------------------------------------------------------- backward

def backward(loss: Tensor, params: ParamSet | None = None, tape: Tape | None = None):
    """Reverse pass from a scalar ``loss``.

    Returns a dict from parameter name to gradient (zeros for parameters the
    loss does not reach) and accumulates into ``params.grads``. When
    ``params`` is None, returns gradients keyed by tensor for every leaf that
    requires a gradient.
    """
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape or loss._tape
    if tape is None or not tape.records:
        raise TapeError("backward on an empty tape (was the forward pass recorded?)")
    if tape.consumed:
        raise TapeError("tape already used for a backward pass")
    tape.consumed = True

    grads = {id(loss): np.ones(loss.shape)}
    leaves = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        parts = rec.vjp(g, *[t.data for t in rec.inputs])
        for t, gi in zip(rec.inputs, parts):
            if not t.requires_grad or gi is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi, dtype=np.float64)
                leaves[key] = t

    if params is None:
        return {leaves[k]: g for k, g in grads.items() if k in leaves}
    out = {}
    for name, t in params.items():
        g = grads.get(id(t))
        g = np.zeros(t.shape) if g is None else np.array(g).reshape(t.shape)
        params.grads[name] = params.grads[name] + g
        out[name] = g
    return out


# ---------------------------------------------------------------- checking

def grad_check(f, inputs, eps=1e-6):
    """Max relative error between tape gradients and central finite differences.

    ``f`` maps a list of Tensors to a scalar Tensor; ``inputs`` is a list of
    arrays. Relative error per entry is |a - n| / max(1, |a|, |n|).
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    for x in arrays:
        if not np.all(np.isfinite(x)):
            raise NumericalError("grad_check: non-finite input")
    leaves = [Tensor(x, requires_grad=True) for x in arrays]
    with Tape() as tape:
        out = f(leaves)
    if out.size != 1:
        raise TapeError(f"grad_check needs a scalar function, got shape {out.shape}")
    if len(tape) == 0:
        analytic = [np.zeros(x.shape) for x in arrays]
    else:
        g = backward(out, tape=tape)
        analytic = [np.array(g.get(t, np.zeros(t.shape))).reshape(t.shape) for t in leaves]

    worst = 0.0
    for idx, x in enumerate(arrays):
        flat = x.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = _eval_scalar(f, arrays)
            flat[j] = orig - eps
            fm = _eval_scalar(f, arrays)
            flat[j] = orig
            num = (fp - fm) / (2 * eps)
            ana = analytic[idx].reshape(-1)[j]
            err = abs(ana - num) / max(1.0, abs(ana), abs(num))
            worst = max(worst, err)
    return worst


def _eval_scalar(f, arrays):
    val = f([Tensor(x) for x in arrays]).item()
    if not math.isfinite(val):
        raise NumericalError("grad_check: non-finite function value")
    return val
