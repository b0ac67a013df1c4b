# cython: language_level=3
# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled forward/backward kernels.

Same call signatures and semantics as the numpy fallback; explicit typed
loops instead of vectorised BLAS calls, so summation order differs and
results agree to floating-point tolerance rather than bit-for-bit.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, tanh

cnp.import_array()

BACKEND = "cython"


cdef void _softmax_row(double* row, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    cdef double m = row[0]
    cdef double s = 0.0
    for j in range(1, n):
        if row[j] > m:
            m = row[j]
    for j in range(n):
        row[j] = exp(row[j] - m)
        s += row[j]
    for j in range(n):
        row[j] /= s


def logistic_logits(W, b, X):
    cdef double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], d = Xv.shape[1], c = Wv.shape[0]
    out = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, k
    cdef double acc
    with nogil:
        for i in range(n):
            for j in range(c):
                acc = bv[j]
                for k in range(d):
                    acc += Wv[j, k] * Xv[i, k]
                ov[i, j] = acc
    return out


def logistic_forward_backward(W, b, X, y):
    cdef double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.int64_t[::1] yv = np.ascontiguousarray(y, dtype=np.int64)
    cdef Py_ssize_t n = Xv.shape[0], d = Xv.shape[1], c = Wv.shape[0]
    gW = np.zeros((c, d), dtype=np.float64)
    gb = np.zeros(c, dtype=np.float64)
    probs = np.empty(c, dtype=np.float64)
    cdef double[:, ::1] gWv = gW
    cdef double[::1] gbv = gb
    cdef double[::1] pv = probs
    cdef Py_ssize_t i, j, k
    cdef double acc, loss = 0.0, delta, inv_n = 1.0 / n
    with nogil:
        for i in range(n):
            for j in range(c):
                acc = bv[j]
                for k in range(d):
                    acc += Wv[j, k] * Xv[i, k]
                pv[j] = acc
            _softmax_row(&pv[0], c)
            loss -= log(pv[yv[i]] + 1e-300)
            for j in range(c):
                delta = pv[j] * inv_n
                if j == yv[i]:
                    delta -= inv_n
                gbv[j] += delta
                for k in range(d):
                    gWv[j, k] += delta * Xv[i, k]
    return loss / n, gW, gb


def mlp_logits(W1, b1, W2, b2, X):
    cdef double[:, ::1] W1v = np.ascontiguousarray(W1, dtype=np.float64)
    cdef double[::1] b1v = np.ascontiguousarray(b1, dtype=np.float64)
    cdef double[:, ::1] W2v = np.ascontiguousarray(W2, dtype=np.float64)
    cdef double[::1] b2v = np.ascontiguousarray(b2, dtype=np.float64)
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], d = Xv.shape[1]
    cdef Py_ssize_t h = W1v.shape[0], c = W2v.shape[0]
    out = np.empty((n, c), dtype=np.float64)
    hid = np.empty(h, dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double[::1] hv = hid
    cdef Py_ssize_t i, j, k
    cdef double acc
    with nogil:
        for i in range(n):
            for j in range(h):
                acc = b1v[j]
                for k in range(d):
                    acc += W1v[j, k] * Xv[i, k]
                hv[j] = tanh(acc)
            for j in range(c):
                acc = b2v[j]
                for k in range(h):
                    acc += W2v[j, k] * hv[k]
                ov[i, j] = acc
    return out


def mlp_forward_backward(W1, b1, W2, b2, X, y):
    cdef double[:, ::1] W1v = np.ascontiguousarray(W1, dtype=np.float64)
    cdef double[::1] b1v = np.ascontiguousarray(b1, dtype=np.float64)
    cdef double[:, ::1] W2v = np.ascontiguousarray(W2, dtype=np.float64)
    cdef double[::1] b2v = np.ascontiguousarray(b2, dtype=np.float64)
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.int64_t[::1] yv = np.ascontiguousarray(y, dtype=np.int64)
    cdef Py_ssize_t n = Xv.shape[0], d = Xv.shape[1]
    cdef Py_ssize_t h = W1v.shape[0], c = W2v.shape[0]
    gW1 = np.zeros((h, d), dtype=np.float64)
    gb1 = np.zeros(h, dtype=np.float64)
    gW2 = np.zeros((c, h), dtype=np.float64)
    gb2 = np.zeros(c, dtype=np.float64)
    hid = np.empty(h, dtype=np.float64)
    probs = np.empty(c, dtype=np.float64)
    dh = np.empty(h, dtype=np.float64)
    cdef double[:, ::1] gW1v = gW1
    cdef double[::1] gb1v = gb1
    cdef double[:, ::1] gW2v = gW2
    cdef double[::1] gb2v = gb2
    cdef double[::1] hv = hid
    cdef double[::1] pv = probs
    cdef double[::1] dhv = dh
    cdef Py_ssize_t i, j, k
    cdef double acc, loss = 0.0, delta, inv_n = 1.0 / n
    with nogil:
        for i in range(n):
            for j in range(h):
                acc = b1v[j]
                for k in range(d):
                    acc += W1v[j, k] * Xv[i, k]
                hv[j] = tanh(acc)
            for j in range(c):
                acc = b2v[j]
                for k in range(h):
                    acc += W2v[j, k] * hv[k]
                pv[j] = acc
            _softmax_row(&pv[0], c)
            loss -= log(pv[yv[i]] + 1e-300)
            for j in range(h):
                dhv[j] = 0.0
            for j in range(c):
                delta = pv[j] * inv_n
                if j == yv[i]:
                    delta -= inv_n
                gb2v[j] += delta
                for k in range(h):
                    gW2v[j, k] += delta * hv[k]
                    dhv[k] += delta * W2v[j, k]
            for j in range(h):
                delta = dhv[j] * (1.0 - hv[j] * hv[j])
                gb1v[j] += delta
                for k in range(d):
                    gW1v[j, k] += delta * Xv[i, k]
    return loss / n, gW1, gb1, gW2, gb2
