"""Inter-frame static/dynamic splitting.

Generates two length-T/2 fractional index vectors from the temporal
correlation of frame tokens and splits the latent features (T, H, W, C)
into a global-context group and a dynamic group by linear interpolation.
With the offset heads zero-initialized the split starts as exact even/odd
frame sampling.

Two ablation variants are provided: index generation from the entire
spatiotemporal token sequence via self-attention, and dense temporal
weighting in place of interpolation.
"""

import numpy as np

from . import nn
from . import tensor as T


def resolve_range(range_l, t):
    """Allowable offset range: 'T/4', 'T/2', or a literal value."""
    if isinstance(range_l, str):
        key = range_l.strip().upper().replace(" ", "")
        if key == "T/4":
            return t / 4.0
        if key == "T/2":
            return t / 2.0
        return float(range_l)
    return float(range_l)


def initial_indices(t, init_mode):
    """Even/odd bases (0,2,4,... and 1,3,5,...) or both anchored at T/2."""
    half = t // 2
    if init_mode == "even_odd":
        return np.arange(0, t, 2, dtype=np.float64), np.arange(1, t, 2, dtype=np.float64)
    if init_mode == "midpoint":
        mid = np.full(half, t / 2.0)
        return mid, mid.copy()
    raise ValueError(f"unknown init_mode {init_mode!r}")


class ISSM:
    def __init__(self, rng, t, h, w, c, d_t=16, dc=1, range_l="T/2",
                 init_mode="even_odd", dtype=np.float64):
        if t % 2:
            raise ValueError(f"temporal extent {t} must be even")
        if h % 2 or w % 2:
            raise ValueError(f"spatial extents ({h}, {w}) must be even")
        if c % dc:
            raise ValueError(f"channel count {c} not divisible by compression {dc}")
        self.t, self.h, self.w, self.c = t, h, w, c
        self.d_t = int(d_t)
        self.dc = int(dc)
        self.range_l = resolve_range(range_l, t)
        self.init_mode = init_mode

        c_emb = c // self.dc
        self.conv_w = nn.conv_kernel(rng, c, c_emb, dtype)
        self.conv_b = nn.zeros((c_emb,), dtype)
        flat = (h // 2) * (w // 2) * c_emb
        self.w_t = nn.dense(rng, flat, self.d_t, dtype)
        self.b_t = nn.zeros((t, self.d_t), dtype)  # per-frame bias: position-aware
        self.ln_gamma = nn.ones((self.d_t,), dtype)
        self.ln_beta = nn.zeros((self.d_t,), dtype)
        # offset heads start at zero so the split starts at exact even/odd
        half = t // 2
        self.w_s = nn.zeros((t * t, half), dtype)
        self.b_s = nn.zeros((half,), dtype)
        self.w_d = nn.zeros((t * t, half), dtype)
        self.b_d = nn.zeros((half,), dtype)

        base_s, base_d = initial_indices(t, init_mode)
        self._base_s = T.Tensor(base_s.astype(dtype))
        self._base_d = T.Tensor(base_d.astype(dtype))

    def params(self):
        return {
            "conv.w": self.conv_w, "conv.b": self.conv_b,
            "w_t": self.w_t, "b_t": self.b_t,
            "ln.gamma": self.ln_gamma, "ln.beta": self.ln_beta,
            "w_s": self.w_s, "b_s": self.b_s,
            "w_d": self.w_d, "b_d": self.b_d,
        }

    def temporal_tokens(self, x):
        """X (T, H, W, C) -> Z (T, d_T): pool, conv, flatten, project, LayerNorm."""
        pooled = T.avg_pool_spatial(x, 2)
        emb = T.conv2d(pooled, self.conv_w, self.conv_b)
        t = x.shape[0]
        flat = T.reshape(emb, (t, (self.h // 2) * (self.w // 2) * (self.c // self.dc)))
        z = T.add(T.matmul(flat, self.w_t), self.b_t)
        return T.layer_norm(z, self.ln_gamma, self.ln_beta)

    def correlation_softmaxes(self, z):
        """Row-wise softmax of Z Z^T / sqrt(d_T) and of its negation."""
        corr = T.scale(T.matmul(z, T.transpose(z)), 1.0 / np.sqrt(self.d_t))
        return T.softmax(corr, axis=-1), T.softmax(T.scale(corr, -1.0), axis=-1)

    def offset_scales(self, z):
        """Two tanh-bounded offset-scale vectors of length T/2."""
        s_pos, s_neg = self.correlation_softmaxes(z)
        t = self.t
        flat_pos = T.reshape(s_pos, (1, t * t))
        flat_neg = T.reshape(s_neg, (1, t * t))
        a_s = T.tanh(T.add_bias(T.matmul(flat_pos, self.w_s), self.b_s))
        a_d = T.tanh(T.add_bias(T.matmul(flat_neg, self.w_d), self.b_d))
        return T.reshape(a_s, (t // 2,)), T.reshape(a_d, (t // 2,))

    def generate_indices(self, a_s, a_d):
        """Index vectors: base + offset_scale * L, clamped to [0, T-1]."""
        i_s = T.clip_values(T.add(self._base_s, T.scale(a_s, self.range_l)), 0.0, self.t - 1.0)
        i_d = T.clip_values(T.add(self._base_d, T.scale(a_d, self.range_l)), 0.0, self.t - 1.0)
        return i_s, i_d

    def split_interpolate(self, x, i_s, i_d):
        return T.interp_gather(x, i_s), T.interp_gather(x, i_d)

    def forward(self, x):
        """Full pass: returns (x_s, x_d, i_s, i_d)."""
        z = self.temporal_tokens(x)
        a_s, a_d = self.offset_scales(z)
        i_s, i_d = self.generate_indices(a_s, a_d)
        x_s, x_d = self.split_interpolate(x, i_s, i_d)
        return x_s, x_d, i_s, i_d


class EvenOddSplitter:
    """Classical fixed split by frame parity (the no-ISSM ablation)."""

    def __init__(self, t):
        if t % 2:
            raise ValueError(f"temporal extent {t} must be even")
        self.t = t

    def params(self):
        return {}

    def forward(self, x):
        even = np.arange(0, self.t, 2)
        odd = np.arange(1, self.t, 2)
        i_s = T.Tensor(even.astype(x.dtype))
        i_d = T.Tensor(odd.astype(x.dtype))
        return T.take_rows(x, even), T.take_rows(x, odd), i_s, i_d


class EntireFeaturesSplitter:
    """Ablation: learn indices from the whole spatiotemporal token sequence.

    A learnable global token is prepended to the T*H*W token sequence,
    single-head self-attention is applied, and the post-attention global
    token is projected to two offset-scale vectors (then the usual base +
    offset, clamp machinery applies). Zero-initialized final projection
    means even/odd indices at the start.
    """

    def __init__(self, rng, t, h, w, c, range_l="T/2", init_mode="even_odd",
                 dtype=np.float64):
        self.t, self.h, self.w, self.c = t, h, w, c
        self.range_l = resolve_range(range_l, t)
        self.global_token = T.Tensor(
            rng.uniform(-0.1, 0.1, size=(1, c)).astype(dtype), requires_grad=True
        )
        self.wq = nn.dense(rng, c, c, dtype)
        self.wk = nn.dense(rng, c, c, dtype)
        self.wv = nn.dense(rng, c, c, dtype)
        self.mlp_w1 = nn.dense(rng, c, c, dtype)
        self.mlp_b1 = nn.zeros((c,), dtype)
        self.mlp_w2 = nn.zeros((c, t), dtype)
        self.mlp_b2 = nn.zeros((t,), dtype)
        base_s, base_d = initial_indices(t, init_mode)
        self._base_s = T.Tensor(base_s.astype(dtype))
        self._base_d = T.Tensor(base_d.astype(dtype))

    def params(self):
        return {
            "global_token": self.global_token,
            "wq": self.wq, "wk": self.wk, "wv": self.wv,
            "mlp.w1": self.mlp_w1, "mlp.b1": self.mlp_b1,
            "mlp.w2": self.mlp_w2, "mlp.b2": self.mlp_b2,
        }

    def generate_indices(self, x):
        t, h, w, c = x.shape
        tokens = T.concat([self.global_token, T.reshape(x, (t * h * w, c))], axis=0)
        q = T.scale(T.matmul(tokens, self.wq), 1.0 / np.sqrt(c))
        k = T.matmul(tokens, self.wk)
        v = T.matmul(tokens, self.wv)
        att = T.matmul(T.softmax(T.matmul(q, T.transpose(k)), axis=-1), v)
        g = T.take_rows(att, [0])  # (1, C)
        hidden = T.gelu(T.add_bias(T.matmul(g, self.mlp_w1), self.mlp_b1))
        offsets = T.add_bias(T.matmul(hidden, self.mlp_w2), self.mlp_b2)
        a = T.tanh(T.reshape(offsets, (t,)))
        a_s = T.take_rows(a, np.arange(0, t // 2))
        a_d = T.take_rows(a, np.arange(t // 2, t))
        i_s = T.clip_values(T.add(self._base_s, T.scale(a_s, self.range_l)), 0.0, t - 1.0)
        i_d = T.clip_values(T.add(self._base_d, T.scale(a_d, self.range_l)), 0.0, t - 1.0)
        return i_s, i_d

    def forward(self, x):
        i_s, i_d = self.generate_indices(x)
        return T.interp_gather(x, i_s), T.interp_gather(x, i_d), i_s, i_d


class WeightingSplitter:
    """Ablation: dense temporal mixing instead of interpolation.

    Two learned T x T/2 matrices weight the frames of X along the temporal
    axis. The matrices are parameterized as an even/odd selector plus a
    zero-initialized residual projected from the correlation softmaxes, so
    the split also starts at even/odd.
    """

    def __init__(self, rng, t, dtype=np.float64):
        del rng  # residual heads are zero-initialized
        self.t = t
        half = t // 2
        self.w_mix_s = nn.zeros((t * t, t * half), dtype)
        self.w_mix_d = nn.zeros((t * t, t * half), dtype)
        sel_s = np.zeros((t, half))
        sel_d = np.zeros((t, half))
        for i in range(half):
            sel_s[2 * i, i] = 1.0
            sel_d[2 * i + 1, i] = 1.0
        self._sel_s = T.Tensor(sel_s.astype(dtype))
        self._sel_d = T.Tensor(sel_d.astype(dtype))

    def params(self):
        return {"w_mix_s": self.w_mix_s, "w_mix_d": self.w_mix_d}

    def mixing_matrices(self, s_pos, s_neg):
        t, half = self.t, self.t // 2
        flat_pos = T.reshape(s_pos, (1, t * t))
        flat_neg = T.reshape(s_neg, (1, t * t))
        m_s = T.add(self._sel_s, T.reshape(T.matmul(flat_pos, self.w_mix_s), (t, half)))
        m_d = T.add(self._sel_d, T.reshape(T.matmul(flat_neg, self.w_mix_d), (t, half)))
        return m_s, m_d

    @staticmethod
    def mix(x, m):
        """Apply a T x T/2 mixing matrix along the temporal axis of X."""
        t, h, w, c = x.shape
        flat = T.reshape(x, (t, h * w * c))
        return T.reshape(T.matmul(T.transpose(m), flat), (m.shape[1], h, w, c))

    def forward(self, x, s_pos, s_neg):
        m_s, m_d = self.mixing_matrices(s_pos, s_neg)
        return self.mix(x, m_s), self.mix(x, m_d)
