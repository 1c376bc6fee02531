"""Dense-tensor reverse-mode autodiff engine.

A deliberately small operation set: exactly what the lifting pipeline needs,
no broadcasting engine. Tensors wrap a numpy array (float64 or float32);
each op returns a new Tensor carrying a closure that accumulates gradients
into its parents. `Tensor.backward()` topologically sorts the graph and runs
the closures in reverse.

Shapes follow the (T, H, W, C) video-feature convention where relevant;
flattening is always row-major (C order).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_FLOAT_DTYPES = (np.float32, np.float64)

# Names of every differentiable op in this module; tests enumerate this to
# guarantee per-op gradient coverage.
ALL_OPS = [
    "add",
    "sub",
    "mul",
    "scale",
    "add_bias",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "take_rows",
    "softmax",
    "tanh",
    "gelu",
    "layer_norm",
    "channel_norm",
    "huber",
    "cross_entropy",
    "avg_pool_spatial",
    "avg_pool_temporal",
    "conv2d",
    "interp_gather",
    "clip_values",
    "sum_all",
    "mean_axes",
]


class Tensor:
    """Dense N-d array with optional gradient tracking.

    `requires_grad` is set explicitly on leaves (parameters); interior nodes
    inherit it from their parents. `grad` stays None until backward reaches
    the node.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw", "_backward_ran")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._bw = None
        self._backward_ran = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode sweep from a scalar loss.

        Errors on non-scalar tensors, on non-finite loss values, and on a
        second call without a fresh forward pass.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if self._backward_ran:
            raise RuntimeError("backward called twice on the same tape; rerun the forward pass")
        if not np.isfinite(self.data).all():
            raise FloatingPointError(f"non-finite loss value {self.data.reshape(())}")
        self._backward_ran = True

        # Iterative DFS topological order over the grad-relevant subgraph.
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bw is not None:
                node._bw(node.grad)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self):
        return transpose(self)

    def sum(self):
        return sum_all(self)


_grad_enabled = True


class no_grad:
    """Context manager: ops inside build no backward closures (inference)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _result(data, parents, bw):
    """Wrap an op result; the backward closure is kept only if needed."""
    out = Tensor(data)
    if _grad_enabled:
        parents = tuple(p for p in parents if isinstance(p, Tensor))
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._bw = bw
    return out


def _accum(t, g):
    # grad arrays are never mutated in place (only rebound), so storing a
    # view or a shared array here is safe
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _check_same_shape(a, b, opname):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{opname}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b):
    _check_same_shape(a, b, "add")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b):
    _check_same_shape(a, b, "sub")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b):
    _check_same_shape(a, b, "mul")

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(a.data * b.data, (a, b), bw)


def scale(a, c):
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _result(a.data * c, (a,), bw)


def add_bias(m, b):
    """Row-broadcast add: (N, d) + (d,)."""
    if m.data.ndim != 2 or b.data.shape != (m.data.shape[1],):
        raise ValueError(f"add_bias: expected (N, d) + (d,), got {m.data.shape} + {b.data.shape}")

    def bw(g):
        _accum(m, g)
        _accum(b, g.sum(axis=0))

    return _result(m.data + b.data, (m, b), bw)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), bw)


def transpose(a):
    if a.data.ndim != 2:
        raise ValueError("transpose: 2-D only")

    def bw(g):
        _accum(a, g.T)

    return _result(a.data.T.copy(), (a,), bw)


def reshape(a, shape):
    old = a.data.shape

    def bw(g):
        _accum(a, g.reshape(old))

    return _result(a.data.reshape(shape), (a,), bw)


def concat(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def take_rows(a, indices):
    """Integer gather along axis 0; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)

    def bw(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            _accum(a, ga)

    return _result(a.data[idx], (a,), bw)


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------

def softmax(a, axis=-1):
    """Max-shifted softmax; slices along `axis` sum to 1."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(a, (g - dot) * y)

    return _result(y, (a,), bw)


def tanh(a):
    y = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - y * y))

    return _result(y, (a,), bw)


# python floats: numpy scalars would silently promote float32 inputs
_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def gelu(a):
    """Exact erf-based GELU (the tanh approximation would skew grad checks)."""
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    y = x * phi

    def bw(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        _accum(a, g * (phi + x * pdf))

    return _result(y, (a,), bw)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale/shift: y = norm(x) * gamma + beta."""
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ValueError("layer_norm: gamma/beta must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data

    def bw(g):
        _accum(beta, g.reshape(-1, d).sum(axis=0))
        _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx_hat = g * gamma.data
            # d/dx of (x - mu) * inv with mu, var functions of x
            t1 = gx_hat - gx_hat.mean(axis=-1, keepdims=True)
            t2 = xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, (t1 - t2) * inv)

    return _result(y, (x, gamma, beta), bw)


def channel_norm(x, gamma, beta, eps=1e-5):
    """Normalize each channel over all leading axes, then scale/shift.

    For (T, H, W, C) feature maps this is BatchNorm-style statistics over
    space-time: per-position intensity deviations survive (unlike a
    per-position LayerNorm), only the per-channel scale is fixed.
    """
    if eps <= 0:
        raise ValueError("channel_norm: eps must be positive")
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ValueError("channel_norm: gamma/beta must match the last axis")
    axes = tuple(range(x.data.ndim - 1))
    mu = x.data.mean(axis=axes)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data

    def bw(g):
        _accum(beta, g.sum(axis=axes))
        _accum(gamma, (g * xhat).sum(axis=axes))
        if x.requires_grad:
            gx_hat = g * gamma.data
            t1 = gx_hat - gx_hat.mean(axis=axes)
            t2 = xhat * (gx_hat * xhat).mean(axis=axes)
            _accum(x, (t1 - t2) * inv)

    return _result(y, (x, gamma, beta), bw)


def huber(a, delta=1.0):
    """Elementwise Huber: x^2/2 inside |x| <= delta, delta*(|x| - delta/2) outside."""
    if delta <= 0:
        raise ValueError("huber: delta must be positive")
    x = a.data
    absx = np.abs(x)
    inside = absx <= delta
    y = np.where(inside, 0.5 * x * x, delta * (absx - 0.5 * delta))

    def bw(g):
        _accum(a, g * np.where(inside, x, delta * np.sign(x)))

    return _result(y, (a,), bw)


def cross_entropy(logits, label):
    """Softmax cross-entropy of a single logit vector at integer `label`."""
    if logits.data.ndim != 1:
        raise ValueError("cross_entropy: logits must be a vector")
    n = logits.data.shape[0]
    label = int(label)
    if not 0 <= label < n:
        raise ValueError(f"cross_entropy: label {label} out of range [0, {n})")
    z = logits.data
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    y = lse - z[label]

    def bw(g):
        p = np.exp(z - lse)
        p[label] -= 1.0
        _accum(logits, g.reshape(()) * p)

    return _result(np.asarray(y, dtype=z.dtype), (logits,), bw)


# ---------------------------------------------------------------------------
# pooling, convolution, interpolation
# ---------------------------------------------------------------------------

def avg_pool_spatial(x, factor=2):
    """Mean over factor x factor windows of a (T, H, W, C) tensor."""
    t, h, w, c = x.data.shape
    if h % factor or w % factor:
        raise ValueError(f"avg_pool_spatial: extents ({h}, {w}) not divisible by {factor}")
    v = x.data.reshape(t, h // factor, factor, w // factor, factor, c)
    y = v.mean(axis=(2, 4))

    def bw(g):
        if x.requires_grad:
            gx = np.broadcast_to(
                g[:, :, None, :, None, :] / (factor * factor),
                (t, h // factor, factor, w // factor, factor, c),
            ).reshape(t, h, w, c)
            _accum(x, gx)

    return _result(y, (x,), bw)


def avg_pool_temporal(x, factor=2):
    """Mean over groups of `factor` consecutive frames (leading axis)."""
    t = x.data.shape[0]
    if t % factor:
        raise ValueError(f"avg_pool_temporal: extent {t} not divisible by {factor}")
    rest = x.data.shape[1:]
    v = x.data.reshape((t // factor, factor) + rest)
    y = v.mean(axis=1)

    def bw(g):
        if x.requires_grad:
            gx = np.broadcast_to(
                np.expand_dims(g / factor, 1), (t // factor, factor) + rest
            ).reshape((t,) + rest)
            _accum(x, gx)

    return _result(y, (x,), bw)


def conv2d(x, w, b=None, stride=1, dilation=1):
    """Per-frame 3x3 convolution of (T, H, W, Cin) with kernel (3, 3, Cin, Cout).

    Padding equals the dilation, so output spatial extents are ceil(H/stride):
    same-size at stride 1. No temporal mixing. Dispatches to the compiled
    kernel backend when available.
    """
    from . import kernels

    if w.data.shape[:2] != (3, 3):
        raise ValueError(f"conv2d: kernel extent must be 3, got {w.data.shape[:2]}")
    if x.data.ndim != 4 or x.data.shape[3] != w.data.shape[2]:
        raise ValueError(f"conv2d: channel mismatch, input {x.data.shape} vs kernel {w.data.shape}")
    y = kernels.conv2d_forward(x.data, w.data, stride, dilation)
    if b is not None:
        if b.data.shape != (w.data.shape[3],):
            raise ValueError("conv2d: bias must have one entry per output channel")
        y = y + b.data

    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g = np.ascontiguousarray(g)
        if b is not None:
            _accum(b, g.sum(axis=(0, 1, 2)))
        if x.requires_grad or w.requires_grad:
            gx, gw = kernels.conv2d_backward(
                x.data, w.data, g, stride, dilation,
                need_gx=x.requires_grad, need_gw=w.requires_grad,
            )
            if x.requires_grad:
                _accum(x, gx)
            if w.requires_grad:
                _accum(w, gw)

    return _result(y, parents, bw)


def interp_gather(x, idx):
    """Fractional gather along axis 0: out[i] = frac*x[lo+1] + (1-frac)*x[lo].

    lo = floor(idx[i]); the upper neighbor is clipped at the last frame, so
    integer indices reproduce frames exactly and d(out)/d(idx) = x[lo+1] - x[lo]
    vanishes at idx = T-1. Index gradients flow only through the fractional
    weights (floor itself is treated as piecewise constant).
    """
    t = x.data.shape[0]
    iv = idx.data
    if iv.ndim != 1:
        raise ValueError("interp_gather: idx must be a vector")
    if iv.min() < 0 or iv.max() > t - 1:
        raise ValueError(f"interp_gather: indices outside [0, {t - 1}]")
    lo = np.floor(iv).astype(np.intp)
    lo = np.minimum(lo, t - 1)
    hi = np.minimum(lo + 1, t - 1)
    frac = (iv - lo).astype(x.data.dtype)
    fshape = (-1,) + (1,) * (x.data.ndim - 1)
    f = frac.reshape(fshape)
    y = (1.0 - f) * x.data[lo] + f * x.data[hi]

    def bw(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, lo, (1.0 - f) * g)
            np.add.at(gx, hi, f * g)
            _accum(x, gx)
        if idx.requires_grad:
            diff = x.data[hi] - x.data[lo]
            _accum(idx, (g * diff).reshape(len(iv), -1).sum(axis=1))

    return _result(y, (x, idx), bw)


def clip_values(a, lo, hi):
    """Hard clamp; gradient is zero for saturated entries."""
    y = np.clip(a.data, lo, hi)
    passthrough = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        _accum(a, g * passthrough)

    return _result(y, (a,), bw)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(a):
    def bw(g):
        _accum(a, np.full_like(a.data, g.reshape(())))

    return _result(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), bw)


def mean_axes(a, axes):
    """Mean over the given axes (kept explicit: no broadcasting elsewhere)."""
    axes = tuple(sorted(ax % a.data.ndim for ax in axes))
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    y = a.data.mean(axis=axes)

    def bw(g):
        if a.requires_grad:
            ge = g
            for ax in axes:
                ge = np.expand_dims(ge, ax)
            _accum(a, np.broadcast_to(ge / count, a.data.shape).copy())

    return _result(y, (a,), bw)


# ---------------------------------------------------------------------------
# gradient oracle
# ---------------------------------------------------------------------------

def finite_diff_check(f, params, step=1e-5, entries_per_param=None, rng=None):
    """Compare analytic gradients of scalar `f()` against central differences.

    `f` re-runs the forward pass from the current parameter values. Every
    tensor in `params` is covered; with `entries_per_param` set, at most that
    many entries per tensor are perturbed (chosen by `rng`), which keeps the
    check tractable for large parameter tensors. Returns the max over checked
    entries of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if isinstance(params, dict):
        params = list(params.values())
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("finite_diff_check requires double precision parameters")
        p.zero_grad()
    loss = f()
    loss.backward()
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        n = flat.size
        if entries_per_param is not None and n > entries_per_param:
            which = rng.choice(n, size=entries_per_param, replace=False)
        else:
            which = np.arange(n)
        gflat = g.reshape(-1)
        for i in which:
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("non-finite evaluation during finite differences")
            numeric = (fp - fm) / (2.0 * step)
            analytic = gflat[i]
            err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            worst = max(worst, err)
    return worst
