"""Three-stage curve refinement with deformable cross-attention over feature-pyramid pairs.

Each stage samples reference points on the current curves, builds queries from
their positional encoding plus learned semantic queries, aggregates features
around the points, mixes queries along the point, proposal and category axes,
then predicts per-point offsets and scores and refits the curves.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .autograd import MLP, LayerNorm, Linear, Module, Tensor
from .autograd import tensor as T
from .backbone import FeaturePyramid
from .config import Config, ConfigError
from .proposals import ProposalSet

# pyramid levels read by stages 1..3, coarse to fine
STAGE_LEVELS = {1: (3, 4), 2: (2, 3), 3: (1, 2)}


@dataclass
class StageOutput:
    proposals: ProposalSet
    refined_points: Tensor  # [M,K,N-1,2]


def reference_matrix(n: int) -> np.ndarray:
    """Bernstein rows for N-1 uniform parameters k/(N-2) followed by the midpoint t = 0.5."""
    ts = np.concatenate([np.arange(n - 1) / (n - 2), [0.5]])
    return geometry.bernstein_matrix(ts)


def sample_reference_points(curves, n: int) -> Tensor:
    """``[M,K,6,2]`` curves -> ``[M,K,N,2]`` points: N-1 uniform samples then the midpoint."""
    if n < 3:
        raise ConfigError(f"need N >= 3 reference points, got {n}")
    curves = curves.curves if isinstance(curves, ProposalSet) else T.as_tensor(curves)
    return T.matmul(reference_matrix(n), curves)


class DeformableCrossAttention(Module):
    """Multi-head, multi-level deformable attention with a few sampling points per head."""

    def __init__(self, rng: np.random.Generator, dim: int, feat_channels: int, heads: int = 8,
                 levels: int = 2, points: int = 4):
        if dim % heads:
            raise ConfigError("hidden dim must be divisible by the number of heads")
        self.dim, self.heads, self.levels, self.points = dim, heads, levels, points
        self.value_proj = Linear(rng, feat_channels, dim)
        self.sampling_offsets = Linear(rng, dim, heads * levels * points * 2)
        self.attention_weights = Linear(rng, dim, heads * levels * points)
        # start from a fixed ring of sampling points and uniform attention
        theta = 2.0 * np.pi * np.arange(heads) / heads
        ring = np.stack([np.cos(theta), np.sin(theta)], -1)
        ring = ring / np.abs(ring).max(-1, keepdims=True)
        grid = ring[:, None, None, :] * np.arange(1, points + 1)[None, None, :, None]
        self.sampling_offsets.weight.data[:] = 0.0
        self.sampling_offsets.bias.data[:] = np.broadcast_to(grid, (heads, levels, points, 2)).reshape(-1)
        self.attention_weights.weight.data[:] = 0.0
        self.attention_weights.bias.data[:] = 0.0
        self.output_proj = Linear(rng, dim, dim)

    def __call__(self, queries: Tensor, features: list[Tensor], ref_points) -> Tensor:
        if len(features) != self.levels:
            raise T.ShapeError(f"expected {self.levels} feature levels, got {len(features)}")
        if len({f.shape[0] for f in features}) != 1:
            raise T.ShapeError("feature levels must share a channel count")
        lead = queries.shape[:-1]
        nh, nl, npt, dh = self.heads, self.levels, self.points, self.dim // self.heads
        q = T.reshape(queries, (-1, self.dim))
        nq = q.shape[0]
        ref = T.reshape(T.as_tensor(ref_points), (nq, 1, 1, 1, 2))
        off = T.reshape(self.sampling_offsets(q), (nq, nh, nl, npt, 2))
        norm = np.array([[f.shape[2], f.shape[1]] for f in features], dtype=np.float64)  # (W, H)
        loc = ref + off / norm[None, None, :, None, :]
        attn = T.softmax(T.reshape(self.attention_weights(q), (nq, nh, nl * npt)), axis=-1)
        attn = T.reshape(attn, (nq, nh, nl, npt))
        out = None
        for lvl, fmap in enumerate(features):
            c, h, w = fmap.shape
            value = self.value_proj(T.transpose(T.reshape(fmap, (c, h * w)), (1, 0)))  # [HW,D]
            value = T.transpose(T.reshape(value, (h, w, nh, dh)), (2, 3, 0, 1))  # [nh,dh,H,W]
            loc_l = T.transpose(loc[:, :, lvl], (1, 0, 2, 3))  # [nh,nq,npt,2]
            sampled = T.bilinear_sample_batched(value, T.reshape(loc_l, (nh, nq * npt, 2)))
            sampled = T.reshape(sampled, (nh, nq, npt, dh))
            w_l = T.reshape(T.transpose(attn[:, :, lvl], (1, 0, 2)), (nh, nq, npt, 1))
            part = T.tsum(sampled * w_l, axis=2)  # [nh,nq,dh]
            out = part if out is None else out + part
        out = T.reshape(T.transpose(out, (1, 0, 2)), (nq, self.dim))
        return T.reshape(self.output_proj(out), lead + (self.dim,))


class MultiHeadSelfAttention(Module):
    def __init__(self, rng: np.random.Generator, dim: int, heads: int):
        if dim % heads:
            raise ConfigError("hidden dim must be divisible by the number of heads")
        self.dim, self.heads = dim, heads
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.out = Linear(rng, dim, dim)

    def __call__(self, x: Tensor) -> Tensor:
        """``x[B,L,D]`` -> ``[B,L,D]``; attention over L independently per batch row."""
        b, n, d = x.shape
        nh, dh = self.heads, d // self.heads

        def split(t):
            return T.transpose(T.reshape(t, (b, n, nh, dh)), (0, 2, 1, 3))

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
        ctx = T.matmul(T.softmax(scores, axis=-1), v)
        return self.out(T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, n, d)))


class StructuredSelfAttention(Module):
    """Self-attention along N (intra-curve), then K (inter-curve), then M (inter-category)."""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int):
        self.intra_curve = MultiHeadSelfAttention(rng, dim, heads)
        self.norm_curve = LayerNorm(dim)
        self.inter_curve = MultiHeadSelfAttention(rng, dim, heads)
        self.norm_proposal = LayerNorm(dim)
        self.inter_category = MultiHeadSelfAttention(rng, dim, heads)
        self.norm_category = LayerNorm(dim)

    @staticmethod
    def _along(attn, norm, x: Tensor, axis: int) -> Tensor:
        # move ``axis`` next to the feature axis, fold the rest into the batch
        perm = [a for a in range(3) if a != axis] + [axis, 3]
        xt = T.transpose(x, tuple(perm))
        shape = xt.shape
        y = T.reshape(attn(T.reshape(xt, (-1, shape[2], shape[3]))), shape)
        y = norm(xt + y)
        return T.transpose(y, tuple(np.argsort(perm)))

    def __call__(self, x: Tensor) -> Tensor:
        x = self._along(self.intra_curve, self.norm_curve, x, 2)
        x = self._along(self.inter_curve, self.norm_proposal, x, 1)
        return self._along(self.inter_category, self.norm_category, x, 0)


class RefineStage(Module):
    def __init__(self, rng: np.random.Generator, config: Config, stage_idx: int,
                 own_query: bool = True):
        if stage_idx not in STAGE_LEVELS:
            raise ConfigError(f"stage index must be 1, 2 or 3, got {stage_idx}")
        d, n, m = config.hidden_dim, config.num_ref_points, config.num_categories
        self.stage_idx = stage_idx
        self.detach = config.detach_stage_inputs
        self.n = n
        self.dim = d
        # one semantic query per category and point slot, shared over the K proposals
        self.semantic_query = (T.parameter(rng.uniform(-1.0, 1.0, size=(m, 1, n, d)) * np.sqrt(3.0 / d))
                               if own_query else None)
        self.pos_mlp = MLP(rng, [d, d, d])
        self.cross_attn = DeformableCrossAttention(rng, d, config.channels, config.heads, 2,
                                                   config.sampling_points)
        self.norm_cross = LayerNorm(d)
        self.self_attn = StructuredSelfAttention(rng, d, config.heads)
        self.offset_mlp = MLP(rng, [d, d, d, 2])
        last = self.offset_mlp.layers[-1]
        last.weight.data[:] = 0.0  # start as the identity refinement
        self.score_head = Linear(rng, d, 1)
        self._fit = geometry.fit_matrix(geometry.uniform_params(n - 1))

    def __call__(self, proposals: ProposalSet, pyramid: FeaturePyramid,
                 semantic_query: Tensor | None = None) -> StageOutput:
        lo, hi = STAGE_LEVELS[self.stage_idx]
        features = [pyramid.level(hi), pyramid.level(lo)]
        n = self.n
        curves = proposals.curves.detach() if self.detach else proposals.curves
        points = sample_reference_points(curves, n)  # [M,K,N,2]
        pos = self.pos_mlp(T.positional_encoding(points, self.dim))
        q = pos + (self.semantic_query if self.semantic_query is not None else semantic_query)
        x = self.norm_cross(q + self.cross_attn(q, features, points))
        x = self.self_attn(x)
        base = points[:, :, : n - 1]
        delta = self.offset_mlp(x[:, :, : n - 1]) * self.offset_unit(features[1])
        refined = T.clip(base + delta, 0.0, 1.0)
        point_scores = T.sigmoid(self.score_head(x))  # [M,K,N,1]
        scores = T.mean(T.reshape(point_scores, point_scores.shape[:-1]), axis=-1)
        curves = T.matmul(self._fit, refined)
        out = ProposalSet(curves, scores, origin=self.stage_idx, pixels=proposals.pixels)
        return StageOutput(out, refined)

    @staticmethod
    def offset_unit(finer: Tensor) -> np.ndarray:
        """Offsets are predicted in pixels of the finer of the two feature levels."""
        _, h, w = finer.shape
        return np.array([1.0 / w, 1.0 / h])


def refine_stage(stage: RefineStage, proposals: ProposalSet, pyramid: FeaturePyramid) -> StageOutput:
    return stage(proposals, pyramid)


class CurveRefiner(Module):
    def __init__(self, rng: np.random.Generator, config: Config):
        shared = config.share_semantic_queries
        self.shared_query = None
        if shared:
            d, n, m = config.hidden_dim, config.num_ref_points, config.num_categories
            self.shared_query = T.parameter(rng.uniform(-1.0, 1.0, size=(m, 1, n, d)) * np.sqrt(3.0 / d))
        self.stages = [RefineStage(rng, config, i, own_query=not shared) for i in (1, 2, 3)]

    def __call__(self, initial: ProposalSet, pyramid: FeaturePyramid) -> list[StageOutput]:
        return run_hcr(self, initial, pyramid)


def run_hcr(refiner: CurveRefiner, initial: ProposalSet, pyramid: FeaturePyramid) -> list[StageOutput]:
    outputs = []
    current = initial
    for stage in refiner.stages:
        out = stage(current, pyramid, refiner.shared_query)
        outputs.append(out)
        current = out.proposals
    return outputs
