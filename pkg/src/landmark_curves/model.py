"""End-to-end landmark curve detector: backbone -> proposals -> three refinement stages."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Module, Tensor, no_grad
from .backbone import AuxiliaryFeatureProvider, Backbone, FeaturePyramid, SegmentationOutputs
from .config import Config
from .proposals import ControlPointMap, ProposalHead, ProposalSet, select_topk
from .refinement import CurveRefiner, StageOutput


@dataclass
class ModelOutput:
    pyramid: FeaturePyramid
    segmentation: SegmentationOutputs
    cpmap: ControlPointMap
    stages: list[ProposalSet]  # h = 0..3
    refined: list[StageOutput]

    @property
    def final(self) -> ProposalSet:
        return self.stages[-1]


class LandmarkCurveModel(Module):
    def __init__(self, config: Config, aux: AuxiliaryFeatureProvider | None = None):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.backbone = Backbone(rng, config, aux)
        self.proposal_head = ProposalHead(rng, config)
        self.refiner = CurveRefiner(rng, config)

    def __call__(self, image) -> ModelOutput:
        cfg = self.config
        pyramid, seg = self.backbone(image)
        cpmap = self.proposal_head(pyramid.f4)
        initial = select_topk(cpmap, cfg.pool_size, cfg.num_proposals)
        refined = self.refiner(initial, pyramid)
        return ModelOutput(pyramid, seg, cpmap, [initial] + [r.proposals for r in refined], refined)


@dataclass
class Prediction:
    """Numpy view of one forward pass: curves ``[4,M,K,6,2]`` and scores ``[4,M,K]`` per stage."""

    curves: np.ndarray
    scores: np.ndarray


def predict(model, image) -> Prediction:
    with no_grad():
        out = model(Tensor(image))
    return Prediction(np.stack([s.curves.data for s in out.stages]),
                      np.stack([s.scores.data for s in out.stages]))
