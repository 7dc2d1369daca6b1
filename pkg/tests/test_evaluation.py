import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from landmark_curves import geometry
from landmark_curves.config import CATEGORIES, Config
from landmark_curves.dataio import generate_synthetic
from landmark_curves.dataio.annotations import LandmarkAnnotation, Sample
from landmark_curves.dataio.targets import polyline_to_curve
from landmark_curves.evaluation import (
    MetricReport,
    assd,
    evaluate_predictions,
    finalize_predictions,
    fwiou,
    image_metrics,
    mask_metrics,
    parse_keyvalue,
    point_to_polyline_distance,
    write_report,
)

masks = arrays(bool, (12, 12), elements=st.booleans())


@pytest.fixture
def rng():
    return np.random.default_rng(21)


def test_finalize_threshold_inclusive():
    curves = np.zeros((2, 3, 6, 2))
    scores = np.array([[0.29, 0.30, 0.95], [0.1, 0.2, 0.0]])
    kept = finalize_predictions(curves, scores, 0.3)
    assert [len(k) for k in kept] == [2, 0]
    assert [len(k) for k in finalize_predictions(curves, scores, 0.0)] == [3, 3]


def test_mask_metric_examples():
    a = np.zeros((30, 30), bool)
    a[0:10, 0:10] = True
    b = np.zeros_like(a)
    b[0:10, 5:15] = True
    iou, dsc = mask_metrics(a, b)
    assert math.isclose(iou, 100 * 5 / 15) and dsc == 50.0
    assert mask_metrics(a, a) == (100.0, 100.0)
    c = np.zeros_like(a)
    c[20:, 20:] = True
    assert mask_metrics(a, c) == (0.0, 0.0)
    assert mask_metrics(np.zeros_like(a), np.zeros_like(a)) == (100.0, 100.0)
    assert mask_metrics(np.zeros_like(a), a) == (0.0, 0.0)
    with pytest.raises(ValueError):
        mask_metrics(a, a[:5])


@given(masks, masks)
def test_mask_metric_symmetry_and_identity(p, g):
    iou, dsc = mask_metrics(p, g)
    assert (iou, dsc) == mask_metrics(g, p)
    if p.any() and g.any():
        assert dsc >= iou - 1e-12
        i = iou / 100
        assert math.isclose(dsc / 100, 2 * i / (1 + i), abs_tol=1e-12)


def test_fwiou_examples():
    assert fwiou([30, 60, 90], [1, 2, 1]) == (60.0, False)
    assert fwiou([10, 20], [5, 5])[0] == 15.0
    assert fwiou([10, 70, 20], [0, 9, 0])[0] == 70.0
    assert fwiou([10, 70], [0, 0]) == (0.0, True)


def test_assd_examples():
    assert assd([[0, 0]], [[3, 4]]) == (5.0, False)
    pts = np.array([[1, 2], [3, 4]])
    assert assd(pts, pts)[0] == 0.0
    assert assd(np.zeros((0, 2)), pts, penalty=9.5) == (9.5, True)
    assert assd(np.zeros((0, 2)), np.zeros((0, 2))) == (0.0, False)


def brute_assd(p, g):
    d = np.sqrt(((p[:, None] - g[None]) ** 2).sum(-1))
    return (d.min(1).sum() + d.min(0).sum()) / (len(p) + len(g))


def test_assd_brute_force(rng):
    for _ in range(10):
        p = rng.integers(0, 40, (20, 2))
        g = rng.integers(0, 40, (20, 2))
        assert math.isclose(assd(p, g)[0], brute_assd(p, g), rel_tol=1e-12)
        pf, gf = p + rng.uniform(0, 0.5, p.shape), g + 0.25
        assert math.isclose(assd(pf, gf)[0], brute_assd(pf, gf), rel_tol=1e-12)


@settings(max_examples=40)
@given(arrays(np.int64, st.tuples(st.integers(1, 15), st.just(2)), elements=st.integers(0, 30)),
       arrays(np.int64, st.tuples(st.integers(1, 15), st.just(2)), elements=st.integers(0, 30)))
def test_assd_symmetric(p, g):
    assert math.isclose(assd(p, g)[0], assd(g, p)[0], rel_tol=1e-12)


def test_point_to_polyline(rng):
    poly = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]])
    d = point_to_polyline_distance(np.array([[5.0, 3.0], [-4.0, 3.0], [12.0, 5.0]]), poly)
    assert np.allclose(d, [3.0, 5.0, 2.0])


def _straight_sample(h=128, w=128):
    lines = {
        "ridge": [np.array([[0.1, 0.2], [0.8, 0.3]])],
        "ligament": [np.array([[0.5, 0.1], [0.45, 0.9]]), np.array([[0.15, 0.85], [0.9, 0.7]])],
        "silhouette": [],
    }
    return Sample(np.zeros((4, h, w)), LandmarkAnnotation(h, w, lines))


def _oracle_prediction(sample, k=4):
    per_cat = sample.annotation.per_category()
    curves = np.full((3, k, 6, 2), 0.5)
    scores = np.zeros((3, k))
    for m, polys in enumerate(per_cat):
        for i, p in enumerate(polys):
            curves[m, i] = polyline_to_curve(p)
            scores[m, i] = 1.0
    return curves, scores


def test_oracle_model_scores_perfectly():
    s = _straight_sample()
    rep = evaluate_predictions([_oracle_prediction(s)], [s], Config())
    assert rep.dsc == 100.0 and rep.iou == 100.0 and rep.assd == 0.0
    assert rep.penalized == 0


def test_empty_prediction_gets_penalty():
    s = _straight_sample()
    curves, scores = _oracle_prediction(s)
    rep = evaluate_predictions([(curves, np.zeros_like(scores))], [s], Config())
    assert rep.dsc == 0.0 and rep.iou == 0.0
    assert math.isclose(rep.assd, math.hypot(128, 128)) and rep.penalized == 2


def test_oracle_on_synthetic_data_is_close():
    cfg = Config()
    samples = generate_synthetic(3, 4, 128, 128)
    preds = [_oracle_prediction(s, k=10) for s in samples]
    rep = evaluate_predictions(preds, samples, cfg)
    assert rep.dsc > 95 and rep.assd < 1.0


def test_metrics_invariant_to_polyline_reversal(rng):
    cats = CATEGORIES
    gts = [[rng.uniform(size=(5, 2))], [rng.uniform(size=(3, 2))], []]
    preds = [[rng.uniform(size=(6, 2))], [], [rng.uniform(size=(6, 2))]]
    a = image_metrics(preds, gts, cats, 64, 64, 2)
    b = image_metrics(preds, [[p[::-1] for p in g] for g in gts], cats, 64, 64, 2)
    assert a.per_category == b.per_category and a.fwiou == b.fwiou


def test_aggregation_over_present_categories():
    s = _straight_sample()
    curves, scores = _oracle_prediction(s)
    scores[2, 0] = 1.0  # false positive in a category with no GT
    rep = evaluate_predictions([(curves, scores)], [s], Config())
    # silhouette has no GT, so the image mean ignores it
    assert rep.dsc == 100.0
    assert rep.per_category["silhouette"]["dsc"] == 0.0


def test_report_roundtrip(tmp_path):
    s = _straight_sample()
    rep = evaluate_predictions([_oracle_prediction(s)], [s], Config())
    table, kv = write_report(rep, tmp_path)
    parsed = parse_keyvalue(kv.read_text())
    assert float(parsed["dsc"]) == 100.0 and parsed["images"] == "1"
    assert "ridge.assd" in parsed
    assert table.read_text().splitlines()[0].split() == ["category", "DSC", "IoU", "ASSD"]
    assert isinstance(rep, MetricReport)


def test_dilation_scales_with_image_size():
    assert Config(image_size=1024).dilation_px == 30
    assert Config(image_size=128).dilation_px == 4
    assert geometry.rasterize([np.array([[0.5, 0.5]])], 9, 9, 4).sum() == 49
