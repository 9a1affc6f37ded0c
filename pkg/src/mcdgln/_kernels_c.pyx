# cython: language_level=3
"""Compiled kernels; see _kernels_py for the reference semantics."""
import numpy as np
from libc.math cimport sqrt, fabs, exp, log, log1p, lgamma



def cross_conv_forward(E, W):
    cdef const double[:, :, :, ::1] ev = np.ascontiguousarray(E, dtype=np.float64).reshape((-1,) + np.shape(W))
    cdef const double[:, :, ::1] wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t B = ev.shape[0], K = ev.shape[1], M = ev.shape[2], N = ev.shape[3]
    out = np.empty((B, K, M, N))
    rows = np.empty(M)
    cols = np.empty(N)
    cdef double[:, :, :, ::1] ov = out
    cdef double[::1] rv = rows
    cdef double[::1] cv = cols
    cdef Py_ssize_t b, c, i, j
    cdef double p
    with nogil:
        for b in range(B):
            for c in range(K):
                for j in range(N):
                    cv[j] = 0.0
                for i in range(M):
                    rv[i] = 0.0
                    for j in range(N):
                        p = ev[b, c, i, j] * wv[c, i, j]
                        rv[i] += p
                        cv[j] += p
                for i in range(M):
                    for j in range(N):
                        ov[b, c, i, j] = rv[i] + cv[j]
    return out.reshape(np.shape(E))


def cross_conv_backward(G, E, W):
    cdef const double[:, :, :, ::1] gv = np.ascontiguousarray(G, dtype=np.float64).reshape((-1,) + np.shape(W))
    cdef const double[:, :, :, ::1] ev = np.ascontiguousarray(E, dtype=np.float64).reshape((-1,) + np.shape(W))
    cdef const double[:, :, ::1] wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t B = ev.shape[0], K = ev.shape[1], M = ev.shape[2], N = ev.shape[3]
    gE = np.empty((B, K, M, N))
    gW = np.zeros((K, M, N))
    rows = np.empty(M)
    cols = np.empty(N)
    cdef double[:, :, :, ::1] gev = gE
    cdef double[:, :, ::1] gwv = gW
    cdef double[::1] rv = rows
    cdef double[::1] cv = cols
    cdef Py_ssize_t b, c, i, j
    cdef double gp
    with nogil:
        for b in range(B):
            for c in range(K):
                for j in range(N):
                    cv[j] = 0.0
                for i in range(M):
                    rv[i] = 0.0
                    for j in range(N):
                        rv[i] += gv[b, c, i, j]
                        cv[j] += gv[b, c, i, j]
                for i in range(M):
                    for j in range(N):
                        gp = rv[i] + cv[j]
                        gev[b, c, i, j] = gp * wv[c, i, j]
                        gwv[c, i, j] += gp * ev[b, c, i, j]
    return gE.reshape(np.shape(E)), gW


def windowed_pcc(X, Py_ssize_t L, Py_ssize_t S):
    cdef const double[:, ::1] xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t M = xv.shape[0], T = xv.shape[1]
    cdef Py_ssize_t K = (T - L) // S + 1
    corr = np.empty((K, M, M))
    ss = np.empty((K, M))
    dev = np.empty((M, L))
    cdef double[:, :, ::1] cv = corr
    cdef double[:, ::1] sv = ss
    cdef double[:, ::1] dv = dev
    cdef Py_ssize_t k, u, w, t, t0
    cdef double mu, acc, r, den
    with nogil:
        for k in range(K):
            t0 = k * S
            for u in range(M):
                mu = 0.0
                for t in range(L):
                    mu += xv[u, t0 + t]
                mu = mu / L
                acc = 0.0
                for t in range(L):
                    dv[u, t] = xv[u, t0 + t] - mu
                    acc += dv[u, t] * dv[u, t]
                sv[k, u] = acc
            for u in range(M):
                cv[k, u, u] = 1.0
                for w in range(u + 1, M):
                    acc = 0.0
                    for t in range(L):
                        acc += dv[u, t] * dv[w, t]
                    den = sqrt(sv[k, u] * sv[k, w])
                    if den > 0.0:
                        r = acc / den
                        if r > 1.0:
                            r = 1.0
                        elif r < -1.0:
                            r = -1.0
                    else:
                        r = 0.0
                    cv[k, u, w] = r
                    cv[k, w, u] = r
    return corr, ss


cdef double FPMIN = 1e-300
cdef double CF_EPS = 1e-16
cdef int CF_MAXIT = 500


cdef double _betacf(double a, double b, double x) nogil:
    cdef double qab = a + b, qap = a + 1.0, qam = a - 1.0
    cdef double c = 1.0, d, h, aa, delta
    cdef int m, m2
    d = 1.0 - qab * x / qap
    if fabs(d) < FPMIN:
        d = FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, CF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if fabs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if fabs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if fabs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if fabs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if fabs(delta - 1.0) < CF_EPS:
            return h
    return -1.0


cdef double _betainc(double a, double b, double x) nogil:
    cdef double bt, cf
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    bt = exp(lgamma(a + b) - lgamma(a) - lgamma(b) + a * log(x) + b * log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        cf = _betacf(a, b, x)
        if cf < 0.0:
            return -1.0
        return bt * cf / a
    cf = _betacf(b, a, 1.0 - x)
    if cf < 0.0:
        return -1.0
    return 1.0 - bt * cf / b


def betainc(a, b, x):
    A, B_, X = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.asarray(x, float))
    if np.any(A <= 0) or np.any(B_ <= 0):
        raise ValueError("betainc requires a > 0 and b > 0")
    cdef const double[::1] a_ = np.ascontiguousarray(A).reshape(-1)
    cdef const double[::1] b_ = np.ascontiguousarray(B_).reshape(-1)
    cdef const double[::1] x_ = np.ascontiguousarray(X).reshape(-1)
    cdef Py_ssize_t n = a_.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    cdef bint failed = False
    with nogil:
        for i in range(n):
            o[i] = _betainc(a_[i], b_[i], x_[i])
            if o[i] < 0.0:
                failed = True
    if failed:
        raise ArithmeticError("incomplete beta continued fraction did not converge")
    return out.reshape(A.shape)
