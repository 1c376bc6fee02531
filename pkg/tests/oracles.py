"""Independent brute-force oracles used by the test suite.

These are deliberately naive (nested loops, direct counting) and share no
code with the library paths they check.
"""

import numpy as np


def conv2d_naive(x, w, stride=1, dilation=1):
    """Direct 6-loop 3x3 convolution; padding = dilation."""
    t, h, wd, cin = x.shape
    cout = w.shape[3]
    oh = (h - 1) // stride + 1
    ow = (wd - 1) // stride + 1
    y = np.zeros((t, oh, ow, cout), dtype=x.dtype)
    for n in range(t):
        for oy in range(oh):
            for ox in range(ow):
                for ky in range(3):
                    for kx in range(3):
                        iy = oy * stride + (ky - 1) * dilation
                        ix = ox * stride + (kx - 1) * dilation
                        if 0 <= iy < h and 0 <= ix < wd:
                            for co in range(cout):
                                y[n, oy, ox, co] += x[n, iy, ix, :] @ w[ky, kx, :, co]
    return y


def metrics_naive(predictions, labels, n_classes):
    """Direct counting of WAR, UAR, per-class recall and the confusion matrix."""
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for p, y in zip(predictions, labels):
        confusion[y, p] += 1
    correct = sum(1 for p, y in zip(predictions, labels) if p == y)
    war = correct / len(labels)
    recalls = []
    per_class = []
    for c in range(n_classes):
        total = sum(1 for y in labels if y == c)
        hit = sum(1 for p, y in zip(predictions, labels) if y == c and p == y)
        if total:
            per_class.append(hit / total)
            recalls.append(hit / total)
        else:
            per_class.append(0.0)
    uar = sum(recalls) / len(recalls)
    return war, uar, per_class, confusion


def huber_scalar(v, delta):
    a = abs(v)
    if a <= delta:
        return 0.5 * v * v
    return delta * (a - 0.5 * delta)


def lift_loss_naive(y_s, x, delta):
    """Loop version of the global-context loss in spatial-mean (TC) mode.

    y_s: (T2, H, W, C) already reshaped; x: (T, H, W, C) with T = 2*T2.
    """
    t2, h, w, c = y_s.shape
    total = 0.0
    for i in range(t2):
        for ch in range(c):
            m1 = 0.0
            m2 = 0.0
            for yy in range(h):
                for xx in range(w):
                    m1 += y_s[i, yy, xx, ch]
                    m2 += 0.5 * (x[2 * i, yy, xx, ch] + x[2 * i + 1, yy, xx, ch])
            m1 /= h * w
            m2 /= h * w
            total += huber_scalar(m1 - m2, delta)
    return total


def temporal_mix_naive(x, m):
    """Dense temporal mixing: out[i] = sum_t m[t, i] * x[t]."""
    t = x.shape[0]
    t2 = m.shape[1]
    out = np.zeros((t2,) + x.shape[1:], dtype=x.dtype)
    for i in range(t2):
        for tt in range(t):
            out[i] += m[tt, i] * x[tt]
    return out
