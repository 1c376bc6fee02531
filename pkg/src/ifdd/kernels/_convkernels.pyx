# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 3x3 convolution kernels (preferred backend).

Direct loops over C-contiguous (T, H, W, C) arrays; float32 and float64 via
a fused type. Semantics match kernels._ref exactly (padding = dilation,
output extent ceil(in/stride)).
"""

import numpy as np

cimport cython

ctypedef fused real:
    float
    double


def conv2d_forward(x, w, int stride, int dilation):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    t, h, wd, cin = x.shape
    cout = w.shape[3]
    oh = (h - 1) // stride + 1
    ow = (wd - 1) // stride + 1
    y = np.zeros((t, oh, ow, cout), dtype=x.dtype)
    if x.dtype == np.float64:
        _forward[double](x, w, y, stride, dilation)
    else:
        _forward[float](x, w, y, stride, dilation)
    return y


def conv2d_backward(x, w, gy, int stride, int dilation,
                    bint need_gx=True, bint need_gw=True):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    gy = np.ascontiguousarray(gy)
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    if x.dtype == np.float64:
        _backward[double](x, w, gy, gx, gw, stride, dilation, need_gx, need_gw)
    else:
        _backward[float](x, w, gy, gx, gw, stride, dilation, need_gx, need_gw)
    return (gx if need_gx else None), gw


cdef void _forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                   real[:, :, :, ::1] y, int stride, int dilation) noexcept nogil:
    cdef Py_ssize_t t = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cin = x.shape[3], cout = w.shape[3]
    cdef Py_ssize_t oh = y.shape[1], ow = y.shape[2]
    cdef Py_ssize_t n, oy, ox, ky, kx, iy, ix, ci, co
    cdef real xv
    for n in range(t):
        for oy in range(oh):
            for ox in range(ow):
                for ky in range(3):
                    iy = oy * stride + (ky - 1) * dilation
                    if iy < 0 or iy >= h:
                        continue
                    for kx in range(3):
                        ix = ox * stride + (kx - 1) * dilation
                        if ix < 0 or ix >= wd:
                            continue
                        for ci in range(cin):
                            xv = x[n, iy, ix, ci]
                            for co in range(cout):
                                y[n, oy, ox, co] += xv * w[ky, kx, ci, co]


cdef void _backward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                    real[:, :, :, ::1] gy, real[:, :, :, ::1] gx,
                    real[:, :, :, ::1] gw, int stride, int dilation,
                    bint need_gx, bint need_gw) noexcept nogil:
    cdef Py_ssize_t t = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cin = x.shape[3], cout = w.shape[3]
    cdef Py_ssize_t oh = gy.shape[1], ow = gy.shape[2]
    cdef Py_ssize_t n, oy, ox, ky, kx, iy, ix, ci, co
    cdef real gv, acc, xv
    for n in range(t):
        for oy in range(oh):
            for ox in range(ow):
                for ky in range(3):
                    iy = oy * stride + (ky - 1) * dilation
                    if iy < 0 or iy >= h:
                        continue
                    for kx in range(3):
                        ix = ox * stride + (kx - 1) * dilation
                        if ix < 0 or ix >= wd:
                            continue
                        if need_gx and need_gw:
                            for ci in range(cin):
                                xv = x[n, iy, ix, ci]
                                acc = 0
                                for co in range(cout):
                                    gv = gy[n, oy, ox, co]
                                    gw[ky, kx, ci, co] += xv * gv
                                    acc += w[ky, kx, ci, co] * gv
                                gx[n, iy, ix, ci] += acc
                        elif need_gw:
                            for ci in range(cin):
                                xv = x[n, iy, ix, ci]
                                for co in range(cout):
                                    gw[ky, kx, ci, co] += xv * gy[n, oy, ox, co]
                        else:
                            for ci in range(cin):
                                acc = 0
                                for co in range(cout):
                                    acc += w[ky, kx, ci, co] * gy[n, oy, ox, co]
                                gx[n, iy, ix, ci] += acc
