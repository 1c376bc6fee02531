"""Configurable toy multiscale backbone with pyramid aggregation.

Turns a raw clip (T0, H0, W0, 3) into single-scale latent features
(T0/2, H0/2^(S+1), W0/2^(S+1), C). The input stage halves the temporal
extent by stacking adjacent frame pairs on channels (a temporal kernel-2
stride-2 convolution) and quarters the spatial extents with two stride-2
convolutions. Stage 1 emits at the input-stage resolution; each later stage
halves the spatial extents again. Pyramid aggregation compresses every stage
to the smallest stage's size with strided dilated convolutions, concatenates
on channels, and fuses with a 1x1 projection.

Every convolution is followed by a per-channel normalization over
space-time before the GELU: stacked conv+GELU layers otherwise attenuate
activations by roughly half per layer, which starves the downstream
modules of signal at this depth.
"""

import numpy as np

from . import nn
from . import tensor as T


class _ConvBlock:
    """3x3 conv -> channel norm -> GELU.

    No conv bias: a per-channel constant is cancelled exactly by the
    normalization (beta carries the shift), and the redundant direction
    would only add gradient-check noise.
    """

    def __init__(self, rng, c_in, c_out, stride=1, dtype=np.float64):
        self.stride = stride
        self.w = nn.conv_kernel(rng, c_in, c_out, dtype)
        self.gamma = nn.ones((c_out,), dtype)
        self.beta = nn.zeros((c_out,), dtype)

    def params(self):
        return {"w": self.w, "gamma": self.gamma, "beta": self.beta}

    def __call__(self, x):
        y = T.conv2d(x, self.w, stride=self.stride)
        return T.gelu(T.channel_norm(y, self.gamma, self.beta))


class ToyBackbone:
    def __init__(self, rng, stage_channels=(16, 32), fuse_channels=32, dilation=2,
                 frame_channels=3, dtype=np.float64):
        if len(stage_channels) < 1:
            raise ValueError("backbone needs at least one stage")
        self.stage_channels = tuple(int(c) for c in stage_channels)
        self.fuse_channels = int(fuse_channels)
        self.dilation = int(dilation)
        self.frame_channels = int(frame_channels)

        # first halving is an average pool: cheap spatial denoising before
        # the convs see the frames (same output shape as a stride-2 conv)
        c1 = self.stage_channels[0]
        self.in_block1 = _ConvBlock(rng, 2 * frame_channels, c1, stride=1, dtype=dtype)
        self.in_block2 = _ConvBlock(rng, c1, c1, stride=2, dtype=dtype)

        self.stage_blocks = []
        prev = c1
        for j, cj in enumerate(self.stage_channels):
            block_a = _ConvBlock(rng, prev, cj, stride=1 if j == 0 else 2, dtype=dtype)
            block_b = _ConvBlock(rng, cj, cj, dtype=dtype)
            self.stage_blocks.append((block_a, block_b))
            prev = cj

        # compress/fuse biases would likewise cancel through the fuse norm
        self.compress_convs = [nn.conv_kernel(rng, cj, cj, dtype) for cj in self.stage_channels]
        concat_width = sum(self.stage_channels)
        self.fuse_w = nn.dense(rng, concat_width, self.fuse_channels, dtype)
        self.fuse_gamma = nn.ones((self.fuse_channels,), dtype)
        self.fuse_beta = nn.zeros((self.fuse_channels,), dtype)

    def params(self):
        p = {}
        for prefix, block in (("in1", self.in_block1), ("in2", self.in_block2)):
            for name, t in block.params().items():
                p[f"{prefix}.{name}"] = t
        for j, (block_a, block_b) in enumerate(self.stage_blocks, start=1):
            for tag, block in (("conv_a", block_a), ("conv_b", block_b)):
                for name, t in block.params().items():
                    p[f"stage{j}.{tag}.{name}"] = t
        for j, w in enumerate(self.compress_convs, start=1):
            p[f"compress{j}.w"] = w
        p["fuse.w"] = self.fuse_w
        p["fuse.gamma"] = self.fuse_gamma
        p["fuse.beta"] = self.fuse_beta
        return p

    def embed_clip(self, clip):
        """Clip (T0, H0, W0, 3) -> list of S stage tensors (T0/2, H0/2^(j+1), ..., C_j)."""
        t0, h0, w0, ch = clip.shape
        s = len(self.stage_channels)
        if t0 % 2 or t0 < 4:
            raise ValueError(f"clip temporal extent {t0} must be even and >= 4")
        if h0 % (1 << (s + 1)) or w0 % (1 << (s + 1)):
            raise ValueError(f"clip spatial extents ({h0}, {w0}) must divide 2^{s + 1}")
        if ch != self.frame_channels:
            raise ValueError(f"expected {self.frame_channels} frame channels, got {ch}")

        even = T.take_rows(clip, np.arange(0, t0, 2))
        odd = T.take_rows(clip, np.arange(1, t0, 2))
        x = T.concat([even, odd], axis=-1)  # (T0/2, H0, W0, 2*ch)
        x = T.avg_pool_spatial(x, 2)
        x = self.in_block2(self.in_block1(x))

        stages = []
        for block_a, block_b in self.stage_blocks:
            x = block_b(block_a(x))
            stages.append(x)
        return stages

    def pyramid_aggregate(self, stages):
        """Compress all stages to the smallest spatial size, concat, fuse 1x1."""
        th, tw = stages[-1].shape[1], stages[-1].shape[2]
        compressed = []
        for stage, w in zip(stages, self.compress_convs):
            sh, sw = stage.shape[1], stage.shape[2]
            if sh % th or sw % tw or sh // th != sw // tw:
                raise ValueError(
                    f"stage size ({sh}, {sw}) not reducible to target ({th}, {tw})"
                )
            stride = sh // th
            compressed.append(T.conv2d(stage, w, stride=stride, dilation=self.dilation))
        cat = T.concat(compressed, axis=-1)
        t, h, w_, cc = cat.shape
        fused = T.matmul(T.reshape(cat, (t * h * w_, cc)), self.fuse_w)
        fused = T.reshape(fused, (t, h, w_, self.fuse_channels))
        return T.channel_norm(fused, self.fuse_gamma, self.fuse_beta)

    def forward(self, clip):
        return self.pyramid_aggregate(self.embed_clip(clip))
