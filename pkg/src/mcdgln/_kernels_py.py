"""Numpy/pure-Python reference kernels.

Same signatures as the compiled module ``_kernels_c``. These are always
importable and are used whenever the extension is missing or disabled.
"""
import math

import numpy as np


def cross_conv_forward(E, W):
    """out[b,c,i,j] = sum_m E*W [b,c,i,m] + sum_n E*W [b,c,n,j]."""
    P = E * W
    return P.sum(axis=-1)[..., :, None] + P.sum(axis=-2)[..., None, :]


def cross_conv_backward(G, E, W):
    # the row+column sum operator is self-adjoint
    GP = G.sum(axis=-1)[..., :, None] + G.sum(axis=-2)[..., None, :]
    gE = GP * W
    gW = (GP * E).reshape((-1,) + W.shape).sum(axis=0)
    return gE, gW


def windowed_pcc(X, L, S):
    """Pearson correlation per window.

    Returns ``(corr, ss)`` with corr of shape (K, M, M) and ss the centered
    sum of squares per window and ROI, shape (K, M).
    """
    M, T = X.shape
    K = (T - L) // S + 1
    corr = np.empty((K, M, M))
    ss = np.empty((K, M))
    for k in range(K):
        seg = X[:, k * S:k * S + L]
        dev = seg - seg.mean(axis=1, keepdims=True)
        # norms from the same Gram matrix, so duplicated rows correlate to exactly 1
        gram = dev @ dev.T
        s = np.diag(gram).copy()
        ss[k] = s
        with np.errstate(divide="ignore", invalid="ignore"):
            c = gram / np.sqrt(np.outer(s, s))
        c = np.clip(c, -1.0, 1.0)
        c = np.triu(c, 1)
        corr[k] = c + c.T
        np.fill_diagonal(corr[k], 1.0)
    return corr, ss


_FPMIN = 1e-300
_CF_EPS = 1e-16
_CF_MAXIT = 500


def _betacf(a, b, x):
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_scalar(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if not (a > 0 and b > 0):
        raise ValueError("betainc requires a > 0 and b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    lbt = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
           + a * math.log(x) + b * math.log1p(-x))
    bt = math.exp(lbt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def betainc(a, b, x):
    a, b, x = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.asarray(x, float))
    out = np.empty(a.shape)
    flat = out.reshape(-1)
    for i, (ai, bi, xi) in enumerate(zip(a.reshape(-1), b.reshape(-1), x.reshape(-1))):
        flat[i] = betainc_scalar(float(ai), float(bi), float(xi))
    return out
