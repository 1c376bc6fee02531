import numpy as np
import pytest

from ifdd import tensor as T
from ifdd.ladm import LADM, CrossAttentionLift
from ifdd.tensor import Tensor, finite_diff_check


def split_pair(rng, t2=2, h=2, w=2, c=4):
    return (
        Tensor(rng.standard_normal((t2, h, w, c))),
        Tensor(rng.standard_normal((t2, h, w, c))),
    )


def randomize(net, rng, scale=0.3):
    for p in net.params().values():
        p.data[:] = rng.normal(0, scale, p.shape)
    # keep LayerNorm in a sane regime
    for name, p in net.params().items():
        if name.endswith("ln.gamma"):
            p.data[:] = 1.0 + rng.normal(0, 0.05, p.shape)
    return net


class TestUpdater:
    def test_zero_init_output_is_zero(self, rng):
        m = LADM(rng, c=4)
        x_s, x_d = split_pair(rng)
        xs_tok = T.reshape(x_s, (8, 4))
        xd_tok = T.reshape(x_d, (8, 4))
        out = m.updater(xd_tok, xs_tok)
        assert np.array_equal(out.data, np.zeros((8, 4)))
        y_s, _ = m.lift(x_s, x_d)
        assert np.array_equal(y_s.data, x_s.data.reshape(8, 4))

    def test_attention_rows_sum_to_one(self, rng):
        m = randomize(LADM(rng, c=4), rng)
        x_s, x_d = split_pair(rng)
        xs_tok = T.reshape(x_s, (8, 4))
        xd_tok = T.reshape(x_d, (8, 4))
        net = m.updater_net
        q = T.scale(T.matmul(xs_tok, net.wq), 0.5)
        k = T.matmul(xd_tok, net.wk)
        att = T.softmax(T.matmul(q, T.transpose(k)), axis=-1)
        assert np.abs(att.data.sum(axis=-1) - 1.0).max() < 1e-12

    def test_single_token_degenerate_softmax(self, rng):
        net = randomize(CrossAttentionLift(rng, c=3), rng)
        q_tok = Tensor(rng.standard_normal((1, 3)))
        ctx = Tensor(rng.standard_normal((1, 3)))
        out = net(q_tok, ctx)
        # attention weight is exactly 1, so the output is LN(MLP(V))
        v = ctx.data @ net.wv.data
        h = v @ net.mlp_w1.data + net.mlp_b1.data
        from scipy.special import erf

        h = h * 0.5 * (1 + erf(h / np.sqrt(2)))
        o = h @ net.mlp_w2.data + net.mlp_b2.data
        mu, var = o.mean(), o.var()
        expect = (o - mu) / np.sqrt(var + 1e-5) * net.ln_gamma.data + net.ln_beta.data
        assert np.allclose(out.data, expect, atol=1e-12)

    def test_channel_mismatch(self, rng):
        net = CrossAttentionLift(rng, c=4)
        with pytest.raises(ValueError):
            net(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


class TestPredictor:
    def test_zero_init_identity(self, rng):
        m = LADM(rng, c=4)
        x_s, x_d = split_pair(rng)
        _, y_d = m.lift(x_s, x_d)
        assert np.array_equal(y_d.data, x_d.data.reshape(8, 4))

    def test_constant_context_rows(self, rng):
        # constant K/V rows: attention output is that constant row for any Q
        m = randomize(LADM(rng, c=4), rng)
        row = rng.standard_normal(4)
        y_s = Tensor(np.tile(row, (8, 1)))
        x_d1 = Tensor(rng.standard_normal((8, 4)))
        x_d2 = Tensor(rng.standard_normal((8, 4)))
        p1 = m.predictor(y_s, x_d1)
        p2 = m.predictor(y_s, x_d2)
        assert np.allclose(p1.data, p1.data[0])
        assert np.allclose(p1.data, p2.data, atol=1e-10)

    def test_grad_through_both_stages(self, rng):
        m = randomize(LADM(rng, c=3), rng)
        x_s, x_d = split_pair(rng, t2=2, h=1, w=2, c=3)

        def f():
            y_s, y_d = m.lift(x_s, x_d)
            return T.add(T.sum_all(T.mul(y_s, y_s)), T.sum_all(T.mul(y_d, y_d)))

        assert finite_diff_check(f, m.params(), entries_per_param=4) <= 1e-4


class TestLift:
    def test_zero_init_pass_through_pair(self, rng):
        m = LADM(rng, c=5)
        x_s, x_d = split_pair(rng, c=5)
        y_s, y_d = m.lift(x_s, x_d)
        assert np.array_equal(y_s.data, x_s.data.reshape(8, 5))
        assert np.array_equal(y_d.data, x_d.data.reshape(8, 5))

    def test_toy_shapes(self, rng):
        m = LADM(rng, c=32)
        x_s, x_d = split_pair(rng, t2=4, h=4, w=4, c=32)
        y_s, y_d = m.lift(x_s, x_d)
        assert y_s.shape == (64, 32)
        assert y_d.shape == (64, 32)

    def test_additive_lifting_identity(self, rng):
        m = randomize(LADM(rng, c=4), rng)
        x_s, x_d = split_pair(rng)
        y_s, y_d = m.lift(x_s, x_d)
        xs_tok = T.reshape(x_s, (8, 4))
        xd_tok = T.reshape(x_d, (8, 4))
        upd = m.updater(xd_tok, xs_tok)
        assert np.array_equal(y_s.data, xs_tok.data + upd.data)
        pred = m.predictor(Tensor(y_s.data), xd_tok)
        assert np.allclose(xd_tok.data - y_d.data, pred.data, atol=1e-14)

    def test_order_changes_outputs(self, rng):
        m1 = randomize(LADM(rng, c=4, order="updater_first"), np.random.default_rng(7))
        m2 = LADM(np.random.default_rng(0), c=4, order="predictor_first")
        for p1, p2 in zip(m1.params().values(), m2.params().values()):
            p2.data[:] = p1.data
        x_s, x_d = split_pair(rng)
        y1 = m1.lift(x_s, x_d)
        y2 = m2.lift(x_s, x_d)
        assert not np.allclose(y1[0].data, y2[0].data)
        assert not np.allclose(y1[1].data, y2[1].data)

    def test_bad_order_rejected(self, rng):
        with pytest.raises(ValueError):
            LADM(rng, c=4, order="sideways")
