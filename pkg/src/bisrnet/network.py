"""The U-shaped reconstruction network and its Params/OPs accounting.

Layout (channels, with C the base width and 2 downsample stages):

    input concat(H, M) [2*n_wavelengths]
      -> embedding: conv1x1 -> conv block          (C, always full precision)
      -> encoder:   block(C) -> down -> block(2C) -> down
      -> bottleneck: block(4C)
      -> decoder:   up -> skip concat -> fuse -> block(2C)
                    up -> skip concat -> fuse -> block(C)
      -> + shallow feature (global residual)
      -> mapping: conv1x1                          (n_wavelengths, full precision)

The encoder/bottleneck/decoder can each be swapped for binarized
counterparts independently; the embedding and mapping stages always stay
full precision. In the full-precision decoder the upsample keeps its
channel count and the skip-fusion conv1x1 does the reduction (6C->2C,
3C->C); the binarized upsample halves channels itself, so its skip fusion
reduces 4C->2C and 2C->C.

Cost accounting follows the 1-bit convention: one multiply-accumulate is
one OP, binarized parts count params/32 and OPs/64 (rounded to nearest),
and only convolution MACs are counted.
"""

from dataclasses import dataclass, field

import numpy as np

from .binarize import STE_KINDS
from .errors import ConfigError, DimensionError, StateError
from .layers import (
    BinDownsample,
    BinFusionDown,
    BinUpsample,
    BiSRConv,
    Chain,
    Conv2dFP,
    ConvBlock,
    FPUp,
    NormalDown,
    NormalFuse,
    NormalUp,
    VanillaBinConv,
)
from .tensor import concat_channels, split_channels

PARAMS_DIVISOR = 32
OPS_DIVISOR = 64
PART_NAMES = ("embedding", "encoder", "bottleneck", "decoder", "mapping")


@dataclass
class NetworkConfig:
    """Build-time switches.

    ste: backward surrogate for the binarized parts; "quad" selects the
    bounded polynomial (the unbounded variant exists in
    :mod:`bisrnet.binarize` for analysis only). module_style "normal"
    swaps in the ablation-baseline modules without identity paths.
    """

    base_channels: int = 28
    n_wavelengths: int = 28
    binarize_encoder: bool = True
    binarize_bottleneck: bool = True
    binarize_decoder: bool = True
    ste: str = "tanh"
    module_style: str = "binarized"
    redistribution: bool = True

    def __post_init__(self):
        if self.base_channels < 4 or self.base_channels % 4:
            raise ConfigError(
                f"base_channels must be a multiple of 4 (two halvings), got {self.base_channels}"
            )
        if self.n_wavelengths < 1:
            raise ConfigError("n_wavelengths must be positive")
        if self.ste not in ("clip", "quad", "tanh"):
            raise ConfigError(f"ste must be clip, quad or tanh, got {self.ste!r}")
        if self.module_style not in ("binarized", "normal"):
            raise ConfigError(f"module_style must be binarized or normal, got {self.module_style!r}")

    @property
    def layer_ste(self):
        # The practical quadratic surrogate is the bounded polynomial.
        return "quad_bounded" if self.ste == "quad" else self.ste

    @classmethod
    def bisrnet(cls, **kw):
        return cls(**kw)

    @classmethod
    def base_model(cls, **kw):
        kw.setdefault("binarize_encoder", False)
        kw.setdefault("binarize_bottleneck", False)
        kw.setdefault("binarize_decoder", False)
        return cls(**kw)

    @property
    def binarize_flags(self):
        return {
            "encoder": self.binarize_encoder,
            "bottleneck": self.binarize_bottleneck,
            "decoder": self.binarize_decoder,
        }


@dataclass
class PartCount:
    name: str
    binarized: bool
    params_f: int
    ops_f: int

    @property
    def params_b(self):
        return int(round(self.params_f / PARAMS_DIVISOR)) if self.binarized else self.params_f

    @property
    def ops_b(self):
        return int(round(self.ops_f / OPS_DIVISOR)) if self.binarized else self.ops_f


@dataclass
class Accounting:
    parts: list = field(default_factory=list)

    @property
    def total_params(self):
        return sum(p.params_b for p in self.parts)

    @property
    def total_ops(self):
        return sum(p.ops_b for p in self.parts)

    @property
    def total_params_f(self):
        return sum(p.params_f for p in self.parts)

    @property
    def total_ops_f(self):
        return sum(p.ops_f for p in self.parts)

    def rows(self):
        out = [(p.name, p.params_f, p.params_b, p.ops_f, p.ops_b) for p in self.parts]
        out.append(("total", self.total_params_f, self.total_params, self.total_ops_f, self.total_ops))
        return out


class Network:
    """Owns the five parts, the skip wiring, and the parameter registry."""

    def __init__(self, cfg, seed=0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        C = cfg.base_channels
        NL = cfg.n_wavelengths
        ste = cfg.layer_ste
        sr = cfg.redistribution

        def block(channels, binarized, name):
            if not binarized:
                return ConvBlock(channels, rng, dtype, name)
            if cfg.module_style == "binarized":
                return Chain(
                    [
                        BiSRConv(channels, rng, dtype, ste, sr, name=f"{name}.conv1"),
                        BiSRConv(channels, rng, dtype, ste, sr, name=f"{name}.conv2"),
                    ],
                    name,
                )
            return Chain(
                [
                    VanillaBinConv(channels, channels, 3, 1, 1, rng, dtype, ste, f"{name}.conv1"),
                    VanillaBinConv(channels, channels, 3, 1, 1, rng, dtype, ste, f"{name}.conv2"),
                ],
                name,
            )

        def down(channels, binarized, name):
            if not binarized:
                return Conv2dFP(channels, 2 * channels, 4, 2, 1, rng, dtype, name)
            if cfg.module_style == "binarized":
                return BinDownsample(channels, rng, dtype, ste, sr, name)
            return NormalDown(channels, rng, dtype, ste, name)

        def up(c_in, binarized, name):
            if not binarized:
                return FPUp(c_in, rng, dtype, name)
            if cfg.module_style == "binarized":
                return BinUpsample(c_in, rng, dtype, ste, sr, name)
            return NormalUp(c_in, rng, dtype, ste, name)

        def fuse(c_skip_in, c_out, binarized, name):
            # c_skip_in: channels after concatenating the upsampled feature
            # with the skip feature.
            if not binarized:
                return Conv2dFP(c_skip_in, c_out, 1, 1, 0, rng, dtype, name)
            if cfg.module_style == "binarized":
                return BinFusionDown(c_skip_in, rng, dtype, ste, sr, name)
            return NormalFuse(c_skip_in, c_out, rng, dtype, ste, name)

        be, bb, bd = cfg.binarize_encoder, cfg.binarize_bottleneck, cfg.binarize_decoder

        self.embedding = Chain(
            [
                Conv2dFP(2 * NL, C, 1, 1, 0, rng, dtype, "embedding.proj"),
                ConvBlock(C, rng, dtype, "embedding.refine"),
            ],
            "embedding",
        )
        self.enc_block1 = block(C, be, "encoder.block1")
        self.enc_down1 = down(C, be, "encoder.down1")
        self.enc_block2 = block(2 * C, be, "encoder.block2")
        self.enc_down2 = down(2 * C, be, "encoder.down2")
        self.bottleneck = block(4 * C, bb, "bottleneck.block")
        # The fp upsample keeps channels (4C), the binarized ones halve (2C);
        # the fusion input is that plus the 2C / C skip.
        up1_out = 2 * C if bd else 4 * C
        up2_out = C if bd else 2 * C
        self.dec_up1 = up(4 * C, bd, "decoder.up1")
        self.dec_fuse1 = fuse(up1_out + 2 * C, 2 * C, bd, "decoder.fuse1")
        self.dec_block1 = block(2 * C, bd, "decoder.block1")
        self.dec_up2 = up(2 * C, bd, "decoder.up2")
        self.dec_fuse2 = fuse(up2_out + C, C, bd, "decoder.fuse2")
        self.dec_block2 = block(C, bd, "decoder.block2")
        self.mapping = Conv2dFP(C, NL, 1, 1, 0, rng, dtype, "mapping.proj")

        self._up1_out = up1_out
        self._up2_out = up2_out
        self._done_forward = False

    def part_layers(self, part):
        return {
            "embedding": [self.embedding],
            "encoder": [self.enc_block1, self.enc_down1, self.enc_block2, self.enc_down2],
            "bottleneck": [self.bottleneck],
            "decoder": [
                self.dec_up1,
                self.dec_fuse1,
                self.dec_block1,
                self.dec_up2,
                self.dec_fuse2,
                self.dec_block2,
            ],
            "mapping": [self.mapping],
        }[part]

    def params(self):
        out = []
        for part in PART_NAMES:
            for layer in self.part_layers(part):
                out.extend(layer.params())
        return out

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()

    def forward(self, h_shifted, m_shifted, surrogate=False):
        h_shifted = np.asarray(h_shifted)
        m_shifted = np.asarray(m_shifted)
        NL = self.cfg.n_wavelengths
        if h_shifted.shape != m_shifted.shape:
            raise DimensionError(
                f"data {h_shifted.shape} and mask {m_shifted.shape} inputs must align"
            )
        if h_shifted.ndim != 4 or h_shifted.shape[1] != NL:
            raise DimensionError(
                f"expected (n, {NL}, h, w) inputs, got {h_shifted.shape}"
            )
        if h_shifted.shape[2] % 4 or h_shifted.shape[3] % 4:
            raise DimensionError("spatial dims must be divisible by 4 (two downsamples)")

        s = surrogate
        x = concat_channels(h_shifted, m_shifted)
        xs = self.embedding.forward(x, surrogate=s)
        f1 = self.enc_block1.forward(xs, surrogate=s)
        d1 = self.enc_down1.forward(f1, surrogate=s)
        f2 = self.enc_block2.forward(d1, surrogate=s)
        d2 = self.enc_down2.forward(f2, surrogate=s)
        bt = self.bottleneck.forward(d2, surrogate=s)
        u1 = self.dec_up1.forward(bt, surrogate=s)
        g1 = self.dec_fuse1.forward(concat_channels(u1, f2), surrogate=s)
        g1 = self.dec_block1.forward(g1, surrogate=s)
        u2 = self.dec_up2.forward(g1, surrogate=s)
        g2 = self.dec_fuse2.forward(concat_channels(u2, f1), surrogate=s)
        xd = self.dec_block2.forward(g2, surrogate=s)
        out = self.mapping.forward(xs + xd, surrogate=s)
        self._done_forward = True
        return out

    def backward(self, grad_out):
        if not self._done_forward:
            raise StateError("backward() before forward()")
        self._done_forward = False
        gsum = self.mapping.backward(grad_out)  # grad wrt xs + xd
        g = self.dec_block2.backward(gsum)
        gc2 = self.dec_fuse2.backward(g)
        gu2, gskip1 = split_channels(gc2, self._up2_out)
        g = self.dec_up2.backward(gu2)
        g = self.dec_block1.backward(g)
        gc1 = self.dec_fuse1.backward(g)
        gu1, gskip2 = split_channels(gc1, self._up1_out)
        gbt = self.dec_up1.backward(gu1)
        gd2 = self.bottleneck.backward(gbt)
        gf2 = self.enc_down2.backward(gd2) + gskip2
        gd1 = self.enc_block2.backward(gf2)
        gf1 = self.enc_down1.backward(gd1) + gskip1
        gxs = self.enc_block1.backward(gf1) + gsum
        gx = self.embedding.backward(gxs)
        return split_channels(gx, self.cfg.n_wavelengths)

    def count(self, input_h=256, input_w=256):
        """Per-part parameter and conv-MAC accounting at a given input size."""
        flags = {
            "embedding": False,
            "encoder": self.cfg.binarize_encoder,
            "bottleneck": self.cfg.binarize_bottleneck,
            "decoder": self.cfg.binarize_decoder,
            "mapping": False,
        }
        acc = Accounting()
        h, w = input_h, input_w
        for part in PART_NAMES:
            params_f = 0
            ops_f = 0
            for layer in self.part_layers(part):
                params_f += layer.param_count()
                m, h, w = layer.count_macs(h, w)
                ops_f += m
            acc.parts.append(PartCount(part, flags[part], params_f, ops_f))
        return acc


def build(cfg, seed=0, dtype=np.float32):
    """Construct a network; identical (cfg, seed, dtype) gives identical weights."""
    return Network(cfg, seed=seed, dtype=dtype)
