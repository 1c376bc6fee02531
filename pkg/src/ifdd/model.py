"""Assembled disentanglement model: backbone -> split -> lift -> head.

Variant flags cover the ablation grid: the splitting stage can be the
learned correlation-based splitter, fixed even/odd sampling, the
entire-features attention variant, or dense temporal weighting; the lifting
stage can be disabled (dynamic tokens classified directly); and the input
can be replaced by adjacent-frame differences (the explicit-guidance
baseline).
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import ToyBackbone
from .issm import ISSM, EntireFeaturesSplitter, EvenOddSplitter, WeightingSplitter
from .ladm import LADM
from .losses import ClassifierHead, loss_cls, loss_lift, total_loss

SPLIT_VARIANTS = ("issm", "even_odd", "entire_features", "weighting")


def frame_difference(clip):
    """Adjacent-frame pairwise differences mapped back into [0, 1]."""
    d = clip[1::2] - clip[0::2]
    return (d + 1.0) * 0.5


@dataclass
class ForwardResult:
    x: object
    x_s: object
    x_d: object
    y_s: object  # None when lifting is disabled
    y_d: object
    logits: object
    i_s: object = None  # numpy vectors when the variant emits indices
    i_d: object = None
    extras: dict = field(default_factory=dict)


class IFDDModel:
    def __init__(self, config, seed, dtype=np.float64):
        self.config = config
        self.seed = int(seed)
        self.dtype = np.dtype(dtype).type
        rng = np.random.default_rng(self.seed)

        data = config["data"]
        mc = config["model"]
        self.frame_diff = bool(mc.get("frame_diff", False))
        self.t0 = int(data["t0"])
        t0_eff = self.t0 // 2 if self.frame_diff else self.t0
        if t0_eff % 4:
            raise ValueError(f"effective clip length {t0_eff} must divide 4")

        bb = config["backbone"]
        channels = tuple(bb["channels"])
        if int(bb.get("stages", len(channels))) != len(channels):
            raise ValueError("backbone.stages must match len(backbone.channels)")
        self.backbone = ToyBackbone(
            rng,
            stage_channels=channels,
            fuse_channels=bb["fuse_channels"],
            dilation=bb["dilation"],
            dtype=dtype,
        )
        s = len(channels)
        self.t = t0_eff // 2
        self.h = int(data["h0"]) >> (s + 1)
        self.w = int(data["w0"]) >> (s + 1)
        self.c = int(bb["fuse_channels"])
        if self.h < 2 or self.w < 2:
            raise ValueError(f"latent spatial extent ({self.h}, {self.w}) too small")

        ic = config["issm"]
        self.variant = ic.get("variant", "issm")
        if self.variant not in SPLIT_VARIANTS:
            raise ValueError(f"unknown issm.variant {self.variant!r}")
        self.issm = None
        self.splitter = None
        if self.variant in ("issm", "weighting"):
            self.issm = ISSM(
                rng, self.t, self.h, self.w, self.c,
                d_t=ic["d_t"], dc=ic["dc"], range_l=ic["range_l"],
                init_mode=ic["init_mode"], dtype=dtype,
            )
            if self.variant == "weighting":
                self.splitter = WeightingSplitter(rng, self.t, dtype=dtype)
        elif self.variant == "entire_features":
            self.splitter = EntireFeaturesSplitter(
                rng, self.t, self.h, self.w, self.c,
                range_l=ic["range_l"], init_mode=ic["init_mode"], dtype=dtype,
            )
        else:
            self.splitter = EvenOddSplitter(self.t)

        lc = config["ladm"]
        self.use_ladm = bool(lc.get("enabled", True))
        self.ladm = None
        if self.use_ladm:
            self.ladm = LADM(
                rng, self.c, mlp_hidden=lc["mlp_hidden"], order=lc["order"], dtype=dtype
            )

        n_tokens = (self.t // 2) * self.h * self.w
        self.head = ClassifierHead(
            rng, n_tokens, self.c, data["classes"], hidden=config["head"]["hidden"], dtype=dtype
        )
        self.loss_cfg = config["loss"]

    # ------------------------------------------------------------------
    def params(self):
        """Stable name -> Tensor registry over every trainable parameter."""
        out = {}

        def absorb(prefix, sub):
            for name, t in sub.items():
                out[f"{prefix}.{name}"] = t

        absorb("backbone", self.backbone.params())
        if self.variant == "issm":
            absorb("issm", self.issm.params())
        elif self.variant == "weighting":
            # the weighting variant reuses the token embedding but not the
            # offset heads
            token_names = ("conv.w", "conv.b", "w_t", "b_t", "ln.gamma", "ln.beta")
            absorb("issm", {k: v for k, v in self.issm.params().items() if k in token_names})
            absorb("split", self.splitter.params())
        elif self.variant == "entire_features":
            absorb("split", self.splitter.params())
        if self.use_ladm:
            absorb("ladm", self.ladm.params())
        absorb("head", self.head.params())
        return out

    # ------------------------------------------------------------------
    def forward(self, clip):
        """Clip array (T0, H0, W0, 3) -> ForwardResult."""
        clip = np.asarray(clip, dtype=self.dtype)
        if clip.shape[0] != self.t0:
            raise ValueError(f"expected {self.t0} frames, got {clip.shape[0]}")
        if self.frame_diff:
            clip = frame_difference(clip)
        x = self.backbone.forward(T.Tensor(clip))

        i_s = i_d = None
        if self.variant == "issm":
            x_s, x_d, is_t, id_t = self.issm.forward(x)
            i_s, i_d = is_t.data.copy(), id_t.data.copy()
        elif self.variant == "weighting":
            z = self.issm.temporal_tokens(x)
            s_pos, s_neg = self.issm.correlation_softmaxes(z)
            x_s, x_d = self.splitter.forward(x, s_pos, s_neg)
        else:
            x_s, x_d, is_t, id_t = self.splitter.forward(x)
            i_s, i_d = is_t.data.copy(), id_t.data.copy()

        t2, h, w, c = x_s.shape
        n = t2 * h * w
        if self.use_ladm:
            y_s, y_d = self.ladm.lift(x_s, x_d)
        else:
            y_s = None
            y_d = T.reshape(x_d, (n, c))

        logits = self.head.classify(y_d)
        return ForwardResult(x=x, x_s=x_s, x_d=x_d, y_s=y_s, y_d=y_d,
                             logits=logits, i_s=i_s, i_d=i_d)

    def loss(self, fwd, label):
        """Per-sample decoupling loss -> (total, cls, lift) scalar tensors."""
        cls_term = loss_cls(fwd.logits, label)
        if fwd.y_s is not None:
            lift_term = loss_lift(
                fwd.y_s, fwd.x,
                constrained_dims=self.loss_cfg["constrained_dims"],
                delta=self.loss_cfg["huber_delta"],
            )
        else:
            lift_term = T.Tensor(np.zeros((), dtype=self.dtype))
        return total_loss(cls_term, lift_term, self.loss_cfg.get("lift_weight", 1.0)), cls_term, lift_term

    def predict(self, clip):
        """Inference: (predicted class, softmax confidence vector)."""
        with T.no_grad():
            fwd = self.forward(clip)
        z = fwd.logits.data
        e = np.exp(z - z.max())
        conf = e / e.sum()
        return int(np.argmax(z)), conf
