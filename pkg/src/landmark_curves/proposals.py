"""Dense per-pixel curve proposals from the coarsest feature map and top-K selection."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import geometry
from .autograd import Conv2d, Module, Tensor
from .autograd import tensor as T
from .config import Config, ConfigError


@dataclass
class ControlPointMap:
    """``b[M,H,W,12]`` control points (x1,y1,...,x6,y6) per pixel and ``s_init[M,H,W]`` scores."""

    b: Tensor
    s_init: Tensor


@dataclass
class ProposalSet:
    """K curves per category with confidences; ``origin`` is the stage index (0 = initial)."""

    curves: Tensor  # [M,K,6,2]
    scores: Tensor  # [M,K]
    origin: int = 0
    pixels: np.ndarray | None = None  # [M,K] flat pixel index the proposal came from

    @property
    def num_categories(self) -> int:
        return self.curves.shape[0]

    @property
    def k(self) -> int:
        return self.curves.shape[1]

    def detached(self) -> "ProposalSet":
        return ProposalSet(self.curves.detach(), self.scores.detach(), self.origin, self.pixels)


def build_coord_map(h: int, w: int) -> np.ndarray:
    """Normalized pixel-center coordinates, ``[H,W,2]`` with (x, y) = ((c+0.5)/W, (r+0.5)/H)."""
    xs = (np.arange(w) + 0.5) / w
    ys = (np.arange(h) + 0.5) / h
    grid = np.empty((h, w, 2))
    grid[..., 0] = xs[None, :]
    grid[..., 1] = ys[:, None]
    return grid


def decode_control_points(offsets, coord_map: np.ndarray, scores=None) -> ControlPointMap:
    """Control point j of pixel i is sigmoid(offset_ij + logit(c_i)), per coordinate."""
    offsets = T.as_tensor(offsets)
    coord_map = np.asarray(coord_map, dtype=np.float64)
    if np.any(coord_map <= 0) or np.any(coord_map >= 1):
        raise geometry.GeometryError("coordinate map must lie strictly inside (0, 1)")
    if offsets.shape[-1] != 12 or offsets.shape[-3:-1] != coord_map.shape[:2]:
        raise T.ShapeError(f"offsets {offsets.shape} do not match coordinate map {coord_map.shape}")
    prior = np.tile(np.log(coord_map) - np.log1p(-coord_map), 6)  # [H,W,12], x/y interleaved
    b = T.sigmoid(offsets + prior)
    if scores is None:
        scores = Tensor(np.full(offsets.shape[:-1], 0.5))
    return ControlPointMap(b, T.as_tensor(scores))


def select_topk(cpmap: ControlPointMap, pool_size: int = 256, k: int = 10) -> ProposalSet:
    """Per category, the K best-scoring pixels (ties go to the smaller row-major index).

    The candidate pool is the ``pool_size`` best pixels (capped at the map size); top-K
    is then taken inside the pool, sorted by descending score. Selection is a hard
    index operation: gradients reach only the gathered entries.
    """
    m, h, w, _ = cpmap.b.shape
    n_pix = h * w
    if k > n_pix:
        raise ConfigError(f"K={k} exceeds the {n_pix} available pixels")
    if pool_size < k:
        raise ConfigError("pool_size must be >= K")
    pool = min(pool_size, n_pix)
    flat_scores = cpmap.s_init.data.reshape(m, n_pix)
    order = np.argsort(-flat_scores, axis=1, kind="stable")
    pool_idx = order[:, :pool]
    # re-ranking inside the pool is the identity: the pool is already sorted
    idx = pool_idx[:, :k]
    rows = np.arange(m)[:, None]
    curves = T.reshape(cpmap.b, (m, n_pix, 6, 2))[rows, idx]
    scores = T.reshape(cpmap.s_init, (m, n_pix))[rows, idx]
    return ProposalSet(curves, scores, origin=0, pixels=idx)


def build_induction_map(polylines_per_category: Sequence[Sequence], h: int, w: int) -> np.ndarray:
    """Binary ``[M,H,W]`` map with a 1 at the pixel holding each GT polyline's arc-length midpoint."""
    out = np.zeros((len(polylines_per_category), h, w))
    for m, polylines in enumerate(polylines_per_category):
        for poly in polylines:
            mid = geometry.arc_length_point(poly, 0.5)
            r, c = geometry.to_pixel(mid, h, w)
            out[m, r, c] = 1.0
    return out


class ProposalHead(Module):
    """Two independent 3x3 conv stacks over f4: control-point offsets and scores per category."""

    def __init__(self, rng: np.random.Generator, config: Config):
        c, m = config.channels, config.num_categories
        self.m = m
        self.offset_convs = [Conv2d(rng, c, c), Conv2d(rng, c, m * 12)]
        self.score_convs = [Conv2d(rng, c, c), Conv2d(rng, c, m)]

    def __call__(self, f4: Tensor) -> ControlPointMap:
        _, h, w = f4.shape
        off = self.offset_convs[1](T.relu(self.offset_convs[0](f4)))
        off = T.transpose(T.reshape(off, (self.m, 12, h, w)), (0, 2, 3, 1))
        score = T.sigmoid(self.score_convs[1](T.relu(self.score_convs[0](f4))))
        return decode_control_points(off, build_coord_map(h, w), score)
