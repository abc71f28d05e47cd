# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled conv kernels: direct loops, no im2col materialization.

Single-threaded on purpose: training results must be bitwise reproducible
for a fixed seed regardless of machine load.
"""

import numpy as np

cimport cython


ctypedef fused floating:
    float
    double


def conv1d_forward(floating[:, :, ::1] x, floating[:, :, ::1] w,
                   floating[::1] b, int stride, int pad):
    cdef Py_ssize_t B = x.shape[0], Cin = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t Cout = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t Lout = (L + 2 * pad - K) // stride + 1
    if floating is float:
        out_arr = np.empty((B, Cout, Lout), dtype=np.float32)
    else:
        out_arr = np.empty((B, Cout, Lout), dtype=np.float64)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, oc, ic, kk, t, t0, t1, base
    cdef floating wv
    with nogil:
        for bi in range(B):
            for oc in range(Cout):
                for t in range(Lout):
                    out[bi, oc, t] = b[oc]
            for oc in range(Cout):
                for ic in range(Cin):
                    for kk in range(K):
                        wv = w[oc, ic, kk]
                        base = kk - pad
                        # valid t where 0 <= t*stride + base < L
                        t0 = 0
                        if base < 0:
                            t0 = (-base + stride - 1) // stride
                        t1 = Lout
                        if (Lout - 1) * stride + base >= L:
                            t1 = (L - base + stride - 1) // stride
                        for t in range(t0, t1):
                            out[bi, oc, t] += wv * x[bi, ic, t * stride + base]
    return out_arr


def conv1d_backward(floating[:, :, ::1] x, floating[:, :, ::1] w,
                    floating[:, :, ::1] dy, int stride, int pad):
    cdef Py_ssize_t B = x.shape[0], Cin = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t Cout = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t Lout = dy.shape[2]
    if floating is float:
        dx_arr = np.zeros((B, Cin, L), dtype=np.float32)
        dw_arr = np.zeros((Cout, Cin, K), dtype=np.float32)
        db_arr = np.zeros(Cout, dtype=np.float32)
    else:
        dx_arr = np.zeros((B, Cin, L), dtype=np.float64)
        dw_arr = np.zeros((Cout, Cin, K), dtype=np.float64)
        db_arr = np.zeros(Cout, dtype=np.float64)
    cdef floating[:, :, ::1] dx = dx_arr
    cdef floating[:, :, ::1] dw = dw_arr
    cdef floating[::1] db = db_arr
    cdef Py_ssize_t bi, oc, ic, kk, t, t0, t1, base
    cdef floating wv, acc
    with nogil:
        for bi in range(B):
            for oc in range(Cout):
                acc = 0
                for t in range(Lout):
                    acc += dy[bi, oc, t]
                db[oc] += acc
            for oc in range(Cout):
                for ic in range(Cin):
                    for kk in range(K):
                        base = kk - pad
                        t0 = 0
                        if base < 0:
                            t0 = (-base + stride - 1) // stride
                        t1 = Lout
                        if (Lout - 1) * stride + base >= L:
                            t1 = (L - base + stride - 1) // stride
                        wv = w[oc, ic, kk]
                        acc = 0
                        for t in range(t0, t1):
                            acc += dy[bi, oc, t] * x[bi, ic, t * stride + base]
                            dx[bi, ic, t * stride + base] += wv * dy[bi, oc, t]
                        dw[oc, ic, kk] += acc
    return dx_arr, dw_arr, db_arr
