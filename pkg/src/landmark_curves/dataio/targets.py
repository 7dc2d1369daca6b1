"""Training targets derived from an annotation: GT curves, masks, induction map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import geometry
from ..proposals import build_induction_map
from .annotations import LandmarkAnnotation, Sample

RESAMPLE_POINTS = 26


@dataclass
class Targets:
    curves: list[np.ndarray]  # per category, [G,6,2]
    masks: np.ndarray  # [M,H,W] dilated landmark masks
    induction: np.ndarray  # [M,H4,W4]


def polyline_to_curve(poly) -> np.ndarray:
    """Arc-length resample to 26 points, then fit with chord-length parameters."""
    pts, _ = geometry.check_polyline(poly)
    if np.linalg.norm(np.diff(pts, axis=0), axis=1).sum() == 0:
        return np.repeat(pts[:1], geometry.N_CONTROL, axis=0)
    res = geometry.resample_polyline(pts, RESAMPLE_POINTS)
    return geometry.fit_bezier(res, geometry.chord_length_params(res))


def prepare_targets(annotation: LandmarkAnnotation, h4: int, w4: int, dilation: float,
                    categories=None) -> Targets:
    per_cat = annotation.per_category(categories) if categories else annotation.per_category()
    curves = [np.array([polyline_to_curve(p) for p in polys]).reshape(-1, 6, 2) for polys in per_cat]
    masks = np.stack([geometry.rasterize(polys, annotation.height, annotation.width, dilation)
                      for polys in per_cat]).astype(np.float64)
    induction = build_induction_map(per_cat, h4, w4)
    return Targets(curves, masks, induction)


def sample_targets(sample: Sample, h4: int, w4: int, dilation: float, categories=None) -> Targets:
    """Cached ``prepare_targets`` for a sample."""
    key = (h4, w4, dilation, tuple(categories) if categories else None)
    cached = sample._targets.get(key)
    if cached is None:
        cached = prepare_targets(sample.annotation, h4, w4, dilation, categories)
        sample._targets[key] = cached
    return cached
