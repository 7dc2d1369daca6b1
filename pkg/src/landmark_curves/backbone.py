"""Small trainable CNN encoder/decoder producing the four-level feature pyramid.

Stands in for the multi-modal extractor: RGB-D input (depth is the fourth
channel), an encoder whose block outputs sit at strides 4/8/16/32, a decoder
with skip connections, per-level segmentation heads for deep supervision, and
a 1x1 fusion of encoder and decoder features at every level.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .autograd import Conv2d, Module, Tensor
from .autograd import tensor as T
from .config import Config, ConfigError


@dataclass
class FeaturePyramid:
    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor

    def level(self, i: int) -> Tensor:
        return (self.f1, self.f2, self.f3, self.f4)[i - 1]

    def __iter__(self):
        return iter((self.f1, self.f2, self.f3, self.f4))


@dataclass
class SegmentationOutputs:
    """Per-level foreground probabilities ``[M,H,W]`` at input resolution (level 1 finest)."""

    levels: list[Tensor]

    def __iter__(self):
        return iter(self.levels)


class AuxiliaryFeatureProvider(Protocol):
    """Hook for an external (e.g. frozen foundation-model) feature source.

    Returns one map per pyramid level, ``[C_aux, H/2^(l+1), W/2^(l+1)]`` for l = 1..4,
    or ``None`` to contribute nothing.
    """

    channels: int

    def __call__(self, image: Tensor) -> Sequence[Tensor] | None: ...


class NoAuxiliaryFeatures:
    channels = 0

    def __call__(self, image: Tensor) -> None:
        return None


class Backbone(Module):
    def __init__(self, rng: np.random.Generator, config: Config,
                 aux: AuxiliaryFeatureProvider | None = None):
        widths = config.encoder_widths
        c = config.channels
        m = config.num_categories
        self.aux = aux or NoAuxiliaryFeatures()
        self.stem = Conv2d(rng, 4, widths[0], 3, stride=2)
        self.blocks = []
        c_prev = widths[0]
        for w in widths:
            self.blocks.append([Conv2d(rng, c_prev, w), Conv2d(rng, w, w), Conv2d(rng, w, w, stride=2)])
            c_prev = w
        self.dec = []
        for level in (4, 3, 2, 1):
            c_in = widths[level - 1] + (c if level < 4 else 0)
            self.dec.append(Conv2d(rng, c_in, c))
        self.seg_heads = [Conv2d(rng, c, m, kernel=1) for _ in range(4)]
        aux_c = self.aux.channels
        self.fuse = [Conv2d(rng, widths[i] + c + aux_c, c, kernel=1) for i in range(4)]

    def __call__(self, image: Tensor) -> tuple[FeaturePyramid, SegmentationOutputs]:
        return self.extract_features(image)

    def extract_features(self, image: Tensor) -> tuple[FeaturePyramid, SegmentationOutputs]:
        image = T.as_tensor(image)
        if image.ndim != 3 or image.shape[0] != 4:
            raise ConfigError(f"expected a [4,H,W] RGB-D image, got {image.shape}")
        h, w = image.shape[1:]
        if h % 32 or w % 32:
            raise ConfigError(f"image size {h}x{w} must be divisible by 32")
        x = T.relu(self.stem(image))
        enc = []
        for conv_a, conv_b, down in self.blocks:
            x = T.relu(conv_a(x))
            x = T.relu(conv_b(x))
            x = T.relu(down(x))
            enc.append(x)
        # decoder runs coarse to fine; dec_feats indexed by level 1..4
        dec_feats: dict[int, Tensor] = {}
        d = None
        for conv, level in zip(self.dec, (4, 3, 2, 1)):
            e = enc[level - 1]
            inp = e if d is None else T.concat([e, T.upsample_nearest(d, 2)], axis=0)
            d = T.relu(conv(inp))
            dec_feats[level] = d
        aux_feats = self.aux(image)
        fused, seg = [], []
        for level in (1, 2, 3, 4):
            parts = [enc[level - 1], dec_feats[level]]
            if aux_feats is not None:
                parts.append(T.as_tensor(aux_feats[level - 1]))
            fused.append(self.fuse[level - 1](T.concat(parts, axis=0)))
            logits = self.seg_heads[level - 1](dec_feats[level])
            seg.append(T.sigmoid(T.upsample_nearest(logits, 2 ** (level + 1))))
        return FeaturePyramid(*fused), SegmentationOutputs(seg)
