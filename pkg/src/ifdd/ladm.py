"""Lifting-based aggregation and disentanglement.

Cross-attention updater and predictor over the flattened split groups
(N, C) with N = (T/2)*H*W. The updater refines the global context:
Y_S = Vec(X_S) + U(X_D | X_S); the predictor strips context from the
dynamic group: Y_D = Vec(X_D) - P(Y_S | X_D). Queries are scaled by
1/sqrt(C) at projection time. Each sub-network is attention followed by a
two-layer MLP (GELU between) and a LayerNorm; the final MLP layers are
zero-initialized so lifting starts as an exact pass-through.
"""

import numpy as np

from . import nn
from . import tensor as T


class CrossAttentionLift:
    """One lifting operator (updater or predictor)."""

    def __init__(self, rng, c, mlp_hidden=None, dtype=np.float64):
        hidden = c if mlp_hidden is None else int(mlp_hidden)
        self.c = c
        self.wq = nn.dense(rng, c, c, dtype)
        self.wk = nn.dense(rng, c, c, dtype)
        self.wv = nn.dense(rng, c, c, dtype)
        self.mlp_w1 = nn.dense(rng, c, hidden, dtype)
        self.mlp_b1 = nn.zeros((hidden,), dtype)
        self.mlp_w2 = nn.zeros((hidden, c), dtype)  # zero: pass-through start
        self.mlp_b2 = nn.zeros((c,), dtype)
        self.ln_gamma = nn.ones((c,), dtype)
        self.ln_beta = nn.zeros((c,), dtype)

    def params(self):
        return {
            "wq": self.wq, "wk": self.wk, "wv": self.wv,
            "mlp.w1": self.mlp_w1, "mlp.b1": self.mlp_b1,
            "mlp.w2": self.mlp_w2, "mlp.b2": self.mlp_b2,
            "ln.gamma": self.ln_gamma, "ln.beta": self.ln_beta,
        }

    def __call__(self, query_tokens, context_tokens):
        """Attend from query_tokens into context_tokens; both (N, C)."""
        if query_tokens.shape[1] != context_tokens.shape[1]:
            raise ValueError(
                f"channel mismatch {query_tokens.shape} vs {context_tokens.shape}"
            )
        q = T.scale(T.matmul(query_tokens, self.wq), 1.0 / np.sqrt(self.c))
        k = T.matmul(context_tokens, self.wk)
        v = T.matmul(context_tokens, self.wv)
        att = T.matmul(T.softmax(T.matmul(q, T.transpose(k)), axis=-1), v)
        h = T.gelu(T.add_bias(T.matmul(att, self.mlp_w1), self.mlp_b1))
        out = T.add_bias(T.matmul(h, self.mlp_w2), self.mlp_b2)
        return T.layer_norm(out, self.ln_gamma, self.ln_beta)


class LADM:
    def __init__(self, rng, c, mlp_hidden=None, order="updater_first", dtype=np.float64):
        if order not in ("updater_first", "predictor_first"):
            raise ValueError(f"unknown lifting order {order!r}")
        self.order = order
        self.updater_net = CrossAttentionLift(rng, c, mlp_hidden, dtype)
        self.predictor_net = CrossAttentionLift(rng, c, mlp_hidden, dtype)

    def params(self):
        p = {}
        for name, t in self.updater_net.params().items():
            p[f"updater.{name}"] = t
        for name, t in self.predictor_net.params().items():
            p[f"predictor.{name}"] = t
        return p

    def updater(self, x_d_tokens, x_s_tokens):
        """U(X_D | X_S): queries from the static group, keys/values dynamic."""
        return self.updater_net(x_s_tokens, x_d_tokens)

    def predictor(self, y_s_tokens, x_d_tokens):
        """P(Y_S | X_D): queries from the dynamic group, keys/values context."""
        return self.predictor_net(x_d_tokens, y_s_tokens)

    def lift(self, x_s, x_d):
        """SplitPair (T/2, H, W, C) x2 -> token pair (Y_S, Y_D), each (N, C)."""
        t2, h, w, c = x_s.shape
        n = t2 * h * w
        xs_tok = T.reshape(x_s, (n, c))
        xd_tok = T.reshape(x_d, (n, c))
        if self.order == "updater_first":
            y_s = T.add(xs_tok, self.updater(xd_tok, xs_tok))
            y_d = T.sub(xd_tok, self.predictor(y_s, xd_tok))
        else:
            y_d = T.sub(xd_tok, self.predictor(xs_tok, xd_tok))
            y_s = T.add(xs_tok, self.updater(y_d, xs_tok))
        return y_s, y_d
