"""Loss terms and their decay-weighted composition over the four prediction stages."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autograd import Tensor
from ..autograd import tensor as T
from ..config import Config
from ..dataio.targets import Targets
from .matching import MatchResult, curve_distance_tensor, hungarian, matching_cost

CLAMP = 1e-7


def focal_loss(scores, targets, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Mean sigmoid focal loss on probabilities (clamped to [1e-7, 1 - 1e-7])."""
    p = T.clip(T.as_tensor(scores), CLAMP, 1.0 - CLAMP)
    t = np.asarray(targets, dtype=np.float64)
    pos = (alpha * t) * (1.0 - p) ** gamma * T.log(p)
    neg = ((1.0 - alpha) * (1.0 - t)) * p ** gamma * T.log(1.0 - p)
    return T.mean(-(pos + neg))


def dice_loss(levels, gt_masks) -> Tensor:
    """Sum over decoder levels of the category-mean soft Dice loss (smoothing 1)."""
    g = np.asarray(gt_masks, dtype=np.float64)
    gsum = g.sum(axis=(1, 2))
    total = None
    for pred in levels:
        inter = T.tsum(pred * g, axis=(1, 2))
        psum = T.tsum(pred, axis=(1, 2))
        term = T.mean(1.0 - (2.0 * inter + 1.0) / (psum + gsum + 1.0))
        total = term if total is None else total + term
    return total


def induction_loss(s_init, s_star) -> Tensor:
    """Mean binary cross-entropy between initial score map and the midpoint induction map."""
    p = T.clip(T.as_tensor(s_init), CLAMP, 1.0 - CLAMP)
    t = np.asarray(s_star, dtype=np.float64)
    return T.mean(-(t * T.log(p) + (1.0 - t) * T.log(1.0 - p)))


def decay_coefficient(epoch: int) -> float:
    """Weight of the auxiliary losses: 1 - sigmoid((epoch - 10) / 2)."""
    return 1.0 - 1.0 / (1.0 + np.exp(-(epoch - 10) / 2.0))


@dataclass
class LossBreakdown:
    l_s: float
    l_ind: float
    l_cs: list[float]
    l_crv: list[float]
    total: float
    lambda_d: float
    total_tensor: Tensor | None = field(default=None, repr=False)
    matches: list[list[MatchResult]] = field(default_factory=list, repr=False)

    def recombine(self, cfg: Config) -> float:
        aux = cfg.lambda_s * self.l_s + cfg.lambda_ind * self.l_ind
        sets = sum(cfg.lambda_cs * a + cfg.lambda_crv * b for a, b in zip(self.l_cs, self.l_crv))
        return self.lambda_d * aux + (1.0 - self.lambda_d) * sets

    def values(self) -> list[float]:
        return [self.lambda_d, self.l_s, self.l_ind, *self.l_cs, *self.l_crv, self.total]


def match_stage(curves: np.ndarray, scores: np.ndarray, gt_curves: list[np.ndarray],
                cfg: Config) -> list[MatchResult]:
    return [hungarian(matching_cost(curves[m], scores[m], gt_curves[m], cfg.match_cost_cs,
                                    cfg.match_cost_crv, cfg.n_interp))
            for m in range(len(gt_curves))]


def stage_losses(curves: Tensor, scores: Tensor, targets: Targets, cfg: Config):
    """Focal score loss and matched curve loss for one stage's ``[M,K,6,2]`` / ``[M,K]`` output."""
    matches = match_stage(curves.data, scores.data, targets.curves, cfg)
    labels = np.zeros(scores.shape)
    m_idx, k_idx, gts = [], [], []
    for m, res in enumerate(matches):
        for k, g in res.pairs:
            labels[m, k] = 1.0
            m_idx.append(m)
            k_idx.append(k)
            gts.append(targets.curves[m][g])
    l_cs = focal_loss(scores, labels, cfg.focal_alpha, cfg.focal_gamma)
    if m_idx:
        pred = curves[np.array(m_idx), np.array(k_idx)]
        l_crv = T.mean(curve_distance_tensor(pred, np.array(gts), cfg.n_interp))
    else:
        l_crv = Tensor(0.0)
    return l_cs, l_crv, matches


def total_loss(output, targets: Targets, epoch: int, cfg: Config) -> LossBreakdown:
    """lambda_d (w_s L_s + w_ind L_ind) + (1 - lambda_d) sum_h (w_cs L_cs,h + w_crv L_crv,h).

    ``output`` needs ``segmentation``, ``cpmap`` and ``stages`` (ModelOutput or similar);
    every stage is matched to the GT independently.
    """
    lam = decay_coefficient(epoch)
    l_s = dice_loss(output.segmentation, targets.masks)
    l_ind = induction_loss(output.cpmap.s_init, targets.induction)
    cs, crv, matches = [], [], []
    sets = None
    for stage in output.stages:
        a, b, mt = stage_losses(stage.curves, stage.scores, targets, cfg)
        cs.append(a)
        crv.append(b)
        matches.append(mt)
        term = cfg.lambda_cs * a + cfg.lambda_crv * b
        sets = term if sets is None else sets + term
    total = lam * (cfg.lambda_s * l_s + cfg.lambda_ind * l_ind) + (1.0 - lam) * sets
    return LossBreakdown(l_s.item(), l_ind.item(), [t.item() for t in cs], [t.item() for t in crv],
                         total.item(), lam, total, matches)
