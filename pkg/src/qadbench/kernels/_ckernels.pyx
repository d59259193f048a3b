# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the numpy kernel fallback.

Direct loops, no intermediate materialization; signatures and numerical
conventions match `numpy_impl` (tests pin the equivalence).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin

cnp.import_array()

NAME = "cython"


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w, double[::1] b):
    cdef Py_ssize_t bs = x.shape[0], ch = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t nf = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = h - kh + 1, ow = wd - kw + 1
    y_arr = np.empty((bs, nf, oh, ow))
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t n, f, c, p, q, i, j
    cdef double wv
    cdef double* yrow
    cdef const double* xrow
    # shift-accumulate: stride-1 row loops vectorize; the y and x planes
    # touched per (n, f, c) stay cache-resident
    with nogil:
        for n in range(bs):
            for f in range(nf):
                for i in range(oh):
                    for j in range(ow):
                        y[n, f, i, j] = b[f]
                for c in range(ch):
                    for p in range(kh):
                        for q in range(kw):
                            wv = w[f, c, p, q]
                            for i in range(oh):
                                yrow = &y[n, f, i, 0]
                                xrow = &x[n, c, i + p, q]
                                for j in range(ow):
                                    yrow[j] += wv * xrow[j]
    return y_arr


def conv2d_backward_input(double[:, :, :, ::1] w, double[:, :, :, ::1] gy):
    cdef Py_ssize_t nf = w.shape[0], ch = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t bs = gy.shape[0], oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t h = oh + kh - 1, wd = ow + kw - 1
    gx_arr = np.zeros((bs, ch, h, wd))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, f, c, p, q, i, j
    cdef double wv
    cdef double* gxrow
    cdef const double* gyrow
    with nogil:
        for n in range(bs):
            for f in range(nf):
                for c in range(ch):
                    for p in range(kh):
                        for q in range(kw):
                            wv = w[f, c, p, q]
                            for i in range(oh):
                                gxrow = &gx[n, c, i + p, q]
                                gyrow = &gy[n, f, i, 0]
                                for j in range(ow):
                                    gxrow[j] += wv * gyrow[j]
    return gx_arr


def conv2d_backward_kernels(double[:, :, :, ::1] x, double[:, :, :, ::1] gy,
                            Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t bs = x.shape[0], ch = x.shape[1]
    cdef Py_ssize_t nf = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    gw_arr = np.zeros((nf, ch, kh, kw))
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t n, f, c, p, q, i, j
    cdef double acc
    cdef const double* xrow
    cdef const double* gyrow
    with nogil:
        for f in range(nf):
            for c in range(ch):
                for p in range(kh):
                    for q in range(kw):
                        acc = 0.0
                        for n in range(bs):
                            for i in range(oh):
                                xrow = &x[n, c, i + p, q]
                                gyrow = &gy[n, f, i, 0]
                                for j in range(ow):
                                    acc += xrow[j] * gyrow[j]
                        gw[f, c, p, q] = acc
    return gw_arr


def maxpool2_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t bs = x.shape[0], ch = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t oh = h // 2, ow = wd // 2
    y_arr = np.empty((bs, ch, oh, ow))
    arg_arr = np.empty((bs, ch, oh, ow), dtype=np.int64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef long long[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t n, c, i, j, k
    cdef double best, v
    cdef long long best_k
    with nogil:
        for n in range(bs):
            for c in range(ch):
                for i in range(oh):
                    for j in range(ow):
                        best = x[n, c, 2 * i, 2 * j]
                        best_k = 0
                        v = x[n, c, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v; best_k = 1
                        v = x[n, c, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v; best_k = 2
                        v = x[n, c, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v; best_k = 3
                        y[n, c, i, j] = best
                        arg[n, c, i, j] = best_k
    return y_arr, arg_arr


def maxpool2_backward(double[:, :, :, ::1] gy, long long[:, :, :, ::1] arg,
                      Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t bs = gy.shape[0], ch = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    gx_arr = np.zeros((bs, ch, h, w))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, c, i, j
    cdef long long k
    with nogil:
        for n in range(bs):
            for c in range(ch):
                for i in range(oh):
                    for j in range(ow):
                        k = arg[n, c, i, j]
                        gx[n, c, 2 * i + k // 2, 2 * j + k % 2] = gy[n, c, i, j]
    return gx_arr


def ry_rows(double complex[:, ::1] amps, Py_ssize_t qubit, double[::1] half_angles):
    cdef Py_ssize_t bs = amps.shape[0], dim = amps.shape[1]
    cdef Py_ssize_t stride = 1 << qubit
    cdef Py_ssize_t r, base, off, i0, i1
    cdef double c, s
    cdef double complex a0, a1
    with nogil:
        for r in range(bs):
            c = cos(half_angles[r])
            s = sin(half_angles[r])
            base = 0
            while base < dim:
                for off in range(stride):
                    i0 = base + off
                    i1 = i0 + stride
                    a0 = amps[r, i0]
                    a1 = amps[r, i1]
                    amps[r, i0] = c * a0 - s * a1
                    amps[r, i1] = s * a0 + c * a1
                base += 2 * stride
    return None


def cnot_rows(double complex[:, ::1] amps, Py_ssize_t control, Py_ssize_t target):
    cdef Py_ssize_t bs = amps.shape[0], dim = amps.shape[1]
    cdef Py_ssize_t cbit = 1 << control, tbit = 1 << target
    cdef Py_ssize_t r, idx
    cdef double complex tmp
    with nogil:
        for r in range(bs):
            for idx in range(dim):
                if (idx & cbit) != 0 and (idx & tbit) == 0:
                    tmp = amps[r, idx]
                    amps[r, idx] = amps[r, idx | tbit]
                    amps[r, idx | tbit] = tmp
    return None


def z_expectations_rows(double complex[:, ::1] amps, Py_ssize_t n_qubits):
    cdef Py_ssize_t bs = amps.shape[0], dim = amps.shape[1]
    out_arr = np.zeros((bs, n_qubits))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, idx, q
    cdef double p
    with nogil:
        for r in range(bs):
            for idx in range(dim):
                p = amps[r, idx].real * amps[r, idx].real + amps[r, idx].imag * amps[r, idx].imag
                for q in range(n_qubits):
                    if (idx >> q) & 1:
                        out[r, q] -= p
                    else:
                        out[r, q] += p
    return out_arr
