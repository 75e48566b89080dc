# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels (hot path of the training loop).

Same three entry points and semantics as kernels_py; see that module
for the contract. Selected automatically by mmkdda.backend.
"""

import numpy as np


def conv_forward(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] w, int stride):
    cdef Py_ssize_t n_b = xp.shape[0], c_in = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t c_out = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    out_arr = np.zeros((n_b, c_out, ho, wo))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, o, c, y, x, i, j, ys, xs
    cdef double acc
    for n in range(n_b):
        for o in range(c_out):
            for y in range(ho):
                ys = y * stride
                for x in range(wo):
                    xs = x * stride
                    acc = 0.0
                    for c in range(c_in):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[n, c, ys + i, xs + j] * w[o, c, i, j]
                    out[n, o, y, x] = acc
    return out_arr


def conv_grad_weight(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] g,
                     int kh, int kw, int stride):
    cdef Py_ssize_t n_b = g.shape[0], c_out = g.shape[1]
    cdef Py_ssize_t ho = g.shape[2], wo = g.shape[3]
    cdef Py_ssize_t c_in = xp.shape[1]
    dw_arr = np.zeros((c_out, c_in, kh, kw))
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t n, o, c, y, x, i, j, ys, xs
    cdef double gv
    for n in range(n_b):
        for o in range(c_out):
            for y in range(ho):
                ys = y * stride
                for x in range(wo):
                    xs = x * stride
                    gv = g[n, o, y, x]
                    for c in range(c_in):
                        for i in range(kh):
                            for j in range(kw):
                                dw[o, c, i, j] += gv * xp[n, c, ys + i, xs + j]
    return dw_arr


def conv_grad_input(const double[:, :, :, ::1] g, const double[:, :, :, ::1] w,
                    int stride, Py_ssize_t hp, Py_ssize_t wp):
    cdef Py_ssize_t n_b = g.shape[0], c_out = g.shape[1]
    cdef Py_ssize_t ho = g.shape[2], wo = g.shape[3]
    cdef Py_ssize_t c_in = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    dxp_arr = np.zeros((n_b, c_in, hp, wp))
    cdef double[:, :, :, ::1] dxp = dxp_arr
    cdef Py_ssize_t n, o, c, y, x, i, j, ys, xs
    cdef double gv
    for n in range(n_b):
        for o in range(c_out):
            for y in range(ho):
                ys = y * stride
                for x in range(wo):
                    xs = x * stride
                    gv = g[n, o, y, x]
                    for c in range(c_in):
                        for i in range(kh):
                            for j in range(kw):
                                dxp[n, c, ys + i, xs + j] += gv * w[o, c, i, j]
    return dxp_arr
