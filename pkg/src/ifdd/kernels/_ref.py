"""Pure-numpy convolution kernels (fallback backend).

Implemented as 9 shifted-slice GEMMs per pass: for each of the 3x3 kernel
taps, the padded input is sliced at that tap's offset and multiplied against
the tap's (Cin, Cout) weight block. Output spatial extent is ceil(in/stride)
because padding equals dilation.
"""

import numpy as np


def _out_extent(n, stride):
    return (n - 1) // stride + 1


def conv2d_forward(x, w, stride, dilation):
    t, h, wd, cin = x.shape
    cout = w.shape[3]
    pad = dilation
    oh, ow = _out_extent(h, stride), _out_extent(wd, stride)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    y = np.zeros((t, oh, ow, cout), dtype=x.dtype)
    yf = y.reshape(-1, cout)
    for ky in range(3):
        for kx in range(3):
            sl = xp[
                :,
                ky * dilation : ky * dilation + (oh - 1) * stride + 1 : stride,
                kx * dilation : kx * dilation + (ow - 1) * stride + 1 : stride,
                :,
            ]
            yf += sl.reshape(-1, cin) @ w[ky, kx]
    return y


def conv2d_backward(x, w, gy, stride, dilation, need_gx=True, need_gw=True):
    t, h, wd, cin = x.shape
    cout = w.shape[3]
    pad = dilation
    oh, ow = gy.shape[1], gy.shape[2]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    gxp = np.zeros_like(xp) if need_gx else None
    gw = np.zeros_like(w)
    gyf = gy.reshape(-1, cout)
    for ky in range(3):
        for kx in range(3):
            ys = slice(ky * dilation, ky * dilation + (oh - 1) * stride + 1, stride)
            xs = slice(kx * dilation, kx * dilation + (ow - 1) * stride + 1, stride)
            if need_gw:
                gw[ky, kx] = xp[:, ys, xs, :].reshape(-1, cin).T @ gyf
            if need_gx:
                gxp[:, ys, xs, :] += (gyf @ w[ky, kx].T).reshape(t, oh, ow, cin)
    gx = None
    if need_gx:
        gx = np.ascontiguousarray(gxp[:, pad : pad + h, pad : pad + wd, :])
    return gx, gw
