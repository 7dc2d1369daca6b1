"""Thresholding, rasterized overlap metrics, surface distance, and report output."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import geometry
from .config import Config
from .dataio import Sample
from .model import Prediction, predict
from .training.matching import hungarian, matching_cost

METRICS = ("dsc", "iou", "assd")


def finalize_predictions(curves, scores, threshold: float = 0.3) -> list[list[np.ndarray]]:
    """Per-category curves whose score is at least ``threshold``.

    ``curves`` is ``[M,K,6,2]`` and ``scores`` ``[M,K]`` (a ProposalSet's arrays).
    """
    curves = np.asarray(curves, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    return [[curves[m, k] for k in np.flatnonzero(scores[m] >= threshold)]
            for m in range(scores.shape[0])]


def mask_metrics(pred, gt) -> tuple[float, float]:
    """IoU and DSC in percent; both empty counts as a perfect match."""
    p = np.asarray(pred, dtype=bool)
    g = np.asarray(gt, dtype=bool)
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    np_, ng = int(p.sum()), int(g.sum())
    if np_ == 0 and ng == 0:
        return 100.0, 100.0
    inter = int(np.logical_and(p, g).sum())
    union = np_ + ng - inter
    return 100.0 * inter / union, 100.0 * 2 * inter / (np_ + ng)


def fwiou(ious, freqs) -> tuple[float, bool]:
    """Frequency-weighted IoU; returns ``(value, undefined)``, value 0 when all weights vanish."""
    ious = np.asarray(ious, dtype=np.float64)
    f = np.asarray(freqs, dtype=np.float64)
    if (f < 0).any():
        raise ValueError("frequencies must be non-negative")
    total = f.sum()
    if total == 0:
        return 0.0, True
    return float((f / total) @ ious), False


def assd(pred_pixels, gt_pixels, penalty: float = 0.0) -> tuple[float, bool]:
    """Average symmetric surface distance between two pixel sets ``[n,2]``.

    Returns ``(value, flagged)``; ``penalty`` is used (flagged) when exactly one set is empty.
    """
    p = np.asarray(pred_pixels, dtype=np.float64).reshape(-1, 2)
    g = np.asarray(gt_pixels, dtype=np.float64).reshape(-1, 2)
    if len(p) == 0 and len(g) == 0:
        return 0.0, False
    if len(p) == 0 or len(g) == 0:
        return float(penalty), True
    lo = np.minimum(p.min(0), g.min(0)).astype(np.int64)
    hi = np.maximum(p.max(0), g.max(0)).astype(np.int64)
    if np.allclose(p, np.round(p)) and np.allclose(g, np.round(g)):
        d_to_g = _edt_lookup(g, p, lo, hi)
        d_to_p = _edt_lookup(p, g, lo, hi)
    else:
        d_to_g = _nearest(p, g)
        d_to_p = _nearest(g, p)
    return float((d_to_g.sum() + d_to_p.sum()) / (len(p) + len(g))), False


def _edt_lookup(targets, queries, lo, hi) -> np.ndarray:
    shape = tuple(hi - lo + 1)
    grid = np.ones(shape, dtype=bool)
    t = np.round(targets).astype(np.int64) - lo
    grid[t[:, 0], t[:, 1]] = False
    dist = ndimage.distance_transform_edt(grid)
    q = np.round(queries).astype(np.int64) - lo
    return dist[q[:, 0], q[:, 1]]


def _nearest(queries, targets) -> np.ndarray:
    out = np.empty(len(queries))
    for s in range(0, len(queries), 1024):
        q = queries[s:s + 1024]
        out[s:s + 1024] = np.sqrt(((q[:, None] - targets[None]) ** 2).sum(-1).min(1))
    return out


def curves_to_polylines(curves, n: int = 64) -> list[np.ndarray]:
    return [geometry.curve_polyline(c, n) for c in curves]


@dataclass
class ImageMetrics:
    per_category: dict[str, dict[str, float]]
    present: list[str]
    fwiou: float
    fwiou_undefined: bool
    penalized: list[str] = field(default_factory=list)

    def mean(self, key: str) -> float:
        cats = self.present or list(self.per_category)
        return float(np.mean([self.per_category[c][key] for c in cats]))


def image_metrics(pred_curves: list[list[np.ndarray]], gt_polylines: list[list[np.ndarray]],
                  categories, h: int, w: int, dilation_px: int, samples_per_curve: int = 64) -> ImageMetrics:
    """Per-category metrics for one image given thresholded curves and GT polylines."""
    diag = float(np.hypot(h, w))
    per_cat, ious, freqs, present, penalized = {}, [], [], [], []
    for name, curves, gts in zip(categories, pred_curves, gt_polylines):
        pred_lines = curves_to_polylines(curves, samples_per_curve)
        pm = geometry.rasterize(pred_lines, h, w, dilation_px)
        gm = geometry.rasterize(gts, h, w, dilation_px)
        iou, dsc = mask_metrics(pm, gm)
        pc = np.argwhere(geometry.draw_centerline(pred_lines, h, w))
        gc = np.argwhere(geometry.draw_centerline(gts, h, w))
        dist, flag = assd(pc, gc, diag)
        per_cat[name] = {"iou": iou, "dsc": dsc, "assd": dist}
        if flag:
            penalized.append(name)
        if gts:
            present.append(name)
        ious.append(iou)
        freqs.append(int(gm.sum()))
    fw, undefined = fwiou(ious, freqs)
    return ImageMetrics(per_cat, present, fw, undefined, penalized)


@dataclass
class MetricReport:
    """Percent IoU/DSC/FWIoU and pixel ASSD, per category and averaged."""

    categories: tuple[str, ...]
    per_category: dict[str, dict[str, float]]
    dsc: float
    iou: float
    fwiou: float
    assd: float
    image_count: int
    penalized: int = 0
    fwiou_undefined: int = 0

    def to_pairs(self) -> list[tuple[str, str]]:
        pairs = [("images", str(self.image_count)), ("dsc", f"{self.dsc:.4f}"), ("iou", f"{self.iou:.4f}"),
                 ("fwiou", f"{self.fwiou:.4f}"), ("assd", f"{self.assd:.4f}"),
                 ("assd_penalized", str(self.penalized)), ("fwiou_undefined", str(self.fwiou_undefined))]
        for c in self.categories:
            for k in METRICS:
                pairs.append((f"{c}.{k}", f"{self.per_category[c][k]:.4f}"))
        return pairs

    def to_keyvalue(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_pairs())

    def to_table(self) -> str:
        rows = [f"{'category':<12}{'DSC':>10}{'IoU':>10}{'ASSD':>10}"]
        for c in self.categories:
            m = self.per_category[c]
            rows.append(f"{c:<12}{m['dsc']:>10.4f}{m['iou']:>10.4f}{m['assd']:>10.4f}")
        rows.append(f"{'mean':<12}{self.dsc:>10.4f}{self.iou:>10.4f}{self.assd:>10.4f}")
        rows.append(f"FWIoU {self.fwiou:.4f}  images {self.image_count}")
        return "\n".join(rows) + "\n"


def parse_keyvalue(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k] = v
    return out


def aggregate(per_image: list[ImageMetrics], categories) -> MetricReport:
    if not per_image:
        raise ValueError("no images to aggregate")
    per_cat = {}
    for c in categories:
        rows = [im.per_category[c] for im in per_image if c in im.present] or \
               [im.per_category[c] for im in per_image]
        per_cat[c] = {k: float(np.mean([r[k] for r in rows])) for k in METRICS}
    return MetricReport(
        tuple(categories), per_cat,
        dsc=float(np.mean([im.mean("dsc") for im in per_image])),
        iou=float(np.mean([im.mean("iou") for im in per_image])),
        fwiou=float(np.mean([im.fwiou for im in per_image])),
        assd=float(np.mean([im.mean("assd") for im in per_image])),
        image_count=len(per_image),
        penalized=sum(len(im.penalized) for im in per_image),
        fwiou_undefined=sum(im.fwiou_undefined for im in per_image),
    )


def evaluate_predictions(predictions: list[tuple[np.ndarray, np.ndarray]], samples: list[Sample],
                         config: Config, threshold: float | None = None) -> MetricReport:
    """Metrics from final-stage ``(curves [M,K,6,2], scores [M,K])`` per sample."""
    thr = config.score_threshold if threshold is None else threshold
    cats = config.categories
    per_image = []
    for (curves, scores), s in zip(predictions, samples, strict=True):
        ann = s.annotation
        kept = finalize_predictions(curves, scores, thr)
        per_image.append(image_metrics(kept, ann.per_category(cats), cats, ann.height, ann.width,
                                       config.dilation_px))
    return aggregate(per_image, cats)


def evaluate(model, samples: list[Sample], config: Config, threshold: float | None = None) -> MetricReport:
    preds = []
    for s in samples:
        p = predict(model, s.image)
        preds.append((p.curves[-1], p.scores[-1]))
    return evaluate_predictions(preds, samples, config, threshold)


def point_to_polyline_distance(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the nearest point of a polyline's segments."""
    a, b = polyline[:-1], polyline[1:]
    ab = b - a
    denom = np.maximum((ab ** 2).sum(-1), 1e-300)
    t = np.clip(((points[:, None] - a[None]) * ab[None]).sum(-1) / denom, 0.0, 1.0)
    proj = a[None] + t[..., None] * ab[None]
    return np.sqrt(((points[:, None] - proj) ** 2).sum(-1)).min(1)


def stage_distances(prediction: Prediction, sample: Sample, config: Config, n_points: int = 26) -> np.ndarray:
    """Mean pixel distance from matched proposal sample points to their GT polyline, per stage.

    Each stage is matched to the GT curves with the training matching cost; the
    result is averaged over all matched pairs of all categories (NaN if no GT).
    """
    from .dataio import sample_targets

    ann = sample.annotation
    s4 = config.image_size // 32
    targets = sample_targets(sample, s4, s4, config.dilation_px, config.categories)
    polys = ann.per_category(config.categories)
    scale = np.array([ann.width, ann.height], dtype=np.float64)
    out = []
    for h in range(prediction.curves.shape[0]):
        dists = []
        for m, gts in enumerate(targets.curves):
            if len(gts) == 0:
                continue
            cost = matching_cost(prediction.curves[h, m], prediction.scores[h, m], gts,
                                 config.match_cost_cs, config.match_cost_crv, config.n_interp)
            for k, g in hungarian(cost).pairs:
                pts = geometry.sample_uniform(prediction.curves[h, m, k], n_points) * scale
                dists.append(point_to_polyline_distance(pts, polys[m][g] * scale).mean())
        out.append(float(np.mean(dists)) if dists else np.nan)
    return np.array(out)


def write_report(report: MetricReport, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / f"{stem}.txt"
    kv = out_dir / f"{stem}.kv"
    table.write_text(report.to_table())
    kv.write_text(report.to_keyvalue())
    return table, kv
