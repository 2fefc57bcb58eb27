# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels: direct loops over contiguous float64 views.

Single-threaded on purpose; summation order is fixed so results are
reproducible run to run.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


def _pad(x, Py_ssize_t ph, Py_ssize_t pw):
    if ph == 0 and pw == 0:
        return np.ascontiguousarray(x)
    return np.pad(
        x, ((0, 0), (0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2))
    )


def conv2d_forward(x, kernels, Py_ssize_t stride, Py_ssize_t ph, Py_ssize_t pw):
    xp = _pad(np.asarray(x, dtype=np.float64), ph, pw)
    k = np.ascontiguousarray(kernels, dtype=np.float64)
    cdef double[:, :, :, ::1] xv = xp
    cdef double[:, :, :, ::1] kv = k
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], hp = xv.shape[2], wp = xv.shape[3]
    cdef Py_ssize_t f = kv.shape[0], kh = kv.shape[2], kw = kv.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t i, j, oi, oj, ci, ki, kj
    cdef double acc
    for i in range(n):
        for j in range(f):
            for oi in range(ho):
                for oj in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += (
                                    xv[i, ci, oi * stride + ki, oj * stride + kj]
                                    * kv[j, ci, ki, kj]
                                )
                    ov[i, j, oi, oj] = acc
    return out


def conv2d_backward_input(gout, kernels, in_hw, Py_ssize_t stride, Py_ssize_t ph, Py_ssize_t pw):
    g = np.ascontiguousarray(gout, dtype=np.float64)
    k = np.ascontiguousarray(kernels, dtype=np.float64)
    cdef double[:, :, :, ::1] gv = g
    cdef double[:, :, :, ::1] kv = k
    cdef Py_ssize_t n = gv.shape[0], f = gv.shape[1], ho = gv.shape[2], wo = gv.shape[3]
    cdef Py_ssize_t c = kv.shape[1], kh = kv.shape[2], kw = kv.shape[3]
    cdef Py_ssize_t h = in_hw[0], w = in_hw[1]
    cdef Py_ssize_t hp = h + ph, wp = w + pw
    gpad = np.zeros((n, c, hp, wp))
    cdef double[:, :, :, ::1] pv = gpad
    cdef Py_ssize_t i, j, oi, oj, ci, ki, kj
    cdef double gval
    for i in range(n):
        for j in range(f):
            for oi in range(ho):
                for oj in range(wo):
                    gval = gv[i, j, oi, oj]
                    for ci in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                pv[i, ci, oi * stride + ki, oj * stride + kj] += (
                                    gval * kv[j, ci, ki, kj]
                                )
    cdef Py_ssize_t top = ph // 2, left = pw // 2
    return np.ascontiguousarray(gpad[:, :, top : top + h, left : left + w])


def conv2d_backward_kernels(gout, x, kern_shape, Py_ssize_t stride, Py_ssize_t ph, Py_ssize_t pw):
    g = np.ascontiguousarray(gout, dtype=np.float64)
    xp = _pad(np.asarray(x, dtype=np.float64), ph, pw)
    cdef double[:, :, :, ::1] gv = g
    cdef double[:, :, :, ::1] xv = xp
    cdef Py_ssize_t n = gv.shape[0], f = gv.shape[1], ho = gv.shape[2], wo = gv.shape[3]
    cdef Py_ssize_t c = xv.shape[1]
    cdef Py_ssize_t kh = kern_shape[2], kw = kern_shape[3]
    gw = np.zeros((f, c, kh, kw))
    cdef double[:, :, :, ::1] wv = gw
    cdef Py_ssize_t i, j, oi, oj, ci, ki, kj
    cdef double gval
    for i in range(n):
        for j in range(f):
            for oi in range(ho):
                for oj in range(wo):
                    gval = gv[i, j, oi, oj]
                    for ci in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                wv[j, ci, ki, kj] += (
                                    gval * xv[i, ci, oi * stride + ki, oj * stride + kj]
                                )
    return gw
