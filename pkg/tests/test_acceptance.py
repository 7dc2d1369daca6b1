"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""
import itertools
import math
import time

import numpy as np
import pytest

from landmark_curves import desk_config, geometry
from landmark_curves.autograd import Tensor, grad_check, no_grad, parameter
from landmark_curves.autograd import tensor as T
from landmark_curves.config import Config
from landmark_curves.dataio import generate_synthetic
from landmark_curves.evaluation import assd, evaluate, evaluate_predictions, mask_metrics, stage_distances
from landmark_curves.model import LandmarkCurveModel, predict
from landmark_curves.proposals import ProposalSet, build_coord_map, decode_control_points
from landmark_curves.refinement import STAGE_LEVELS, RefineStage, run_hcr
from landmark_curves.training import (
    decay_coefficient,
    dice_loss,
    focal_loss,
    hungarian,
    image_loss,
    induction_loss,
    total_loss,
    train,
)
from landmark_curves.training.matching import curve_distance_tensor

from helpers import BINARY, UNARY, RecordingPyramid, random_pyramid, small_config, zero_offset_heads
from test_evaluation import _oracle_prediction, _straight_sample
from test_training import _fake_output, _targets


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def test_criterion_1_geometry(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    ts = rng.uniform(0, 1, 1000)
    pou = np.max(np.abs(geometry.bernstein_matrix(ts).sum(1) - 1))
    ends, casteljau, fit, affine = True, 0.0, 0.0, 0.0
    for _ in range(200):
        q = rng.uniform(-1, 2, (6, 2))
        ends &= np.array_equal(geometry.eval_bezier(q, 0.0), q[0]) and np.array_equal(geometry.eval_bezier(q, 1.0), q[5])
        t = rng.uniform()
        pts = [q[i] for i in range(6)]
        while len(pts) > 1:
            pts = [(1 - t) * a + t * b for a, b in zip(pts[:-1], pts[1:])]
        casteljau = max(casteljau, np.max(np.abs(geometry.eval_bezier(q, t) - pts[0])))
        fit = max(fit, np.max(np.abs(geometry.fit_bezier(geometry.sample_uniform(q, 26)) - q)))
        a, b = rng.normal(size=(2, 2)), rng.normal(size=2)
        affine = max(affine, np.max(np.abs(geometry.eval_bezier(q @ a.T + b, t) - (geometry.eval_bezier(q, t) @ a.T + b))))
    elapsed = time.perf_counter() - t0
    ok = pou <= 1e-12 and ends and casteljau <= 1e-12 and fit <= 1e-8 and affine <= 1e-10 and elapsed < 5
    report(capsys, 1, ok, f"pou={pou:.1e} endpoints={ends} casteljau={casteljau:.1e} fit={fit:.1e} "
                          f"affine={affine:.1e} time={elapsed:.2f}s")


def test_criterion_2_control_point_decoding(capsys):
    cmap = build_coord_map(4, 4)
    cmap[1, 2] = (0.5, 0.25)
    ident = np.max(np.abs(decode_control_points(np.zeros((1, 4, 4, 12)), cmap).b.data
                          - np.tile(cmap, 6)[None]))
    off = np.zeros((1, 1, 1, 12))
    off[..., 0] = np.log(3.0)
    exact = decode_control_points(off, np.full((1, 1, 2), 0.5)).b.data[0, 0, 0, 0] == 0.75
    rng = np.random.default_rng(2)
    logit = lambda v: np.log(v) - np.log1p(-v)  # noqa: E731
    worst = 0.0
    for _ in range(100):
        target = rng.uniform(1e-3, 1 - 1e-3, (4, 4, 12))
        dec = decode_control_points((logit(target) - logit(np.tile(cmap, 6)))[None], cmap).b.data[0]
        worst = max(worst, np.max(np.abs(dec - target)))
    ok = ident <= 1e-10 and exact and worst <= 1e-10
    report(capsys, 2, ok, f"identity={ident:.1e} sigma(ln3)==0.75:{exact} roundtrip={worst:.1e}")


def test_criterion_3_matching_oracle(capsys):
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(200):
        n, m = (int(v) for v in rng.integers(1, 7, 2))
        cost = rng.uniform(-1, 1, (n, m))
        res = hungarian(cost)
        best_cost, best_pairs = math.inf, None
        if n <= m:
            cands = (sorted((i, p[i]) for i in range(n)) for p in itertools.permutations(range(m), n))
        else:
            cands = (sorted((p[j], j) for j in range(m)) for p in itertools.permutations(range(n), m))
        for pairs in cands:
            c = sum(cost[i, j] for i, j in pairs)
            if c < best_cost - 1e-12:
                best_cost, best_pairs = c, pairs
        if sorted(res.pairs) != best_pairs or abs(res.cost - best_cost) > 1e-12:
            bad += 1
    report(capsys, 3, bad == 0, f"{200 - bad}/200 matrices match brute force")


def _loss_checks(rng):
    p = parameter(rng.uniform(0.05, 0.95, (3, 4)))
    labels = (rng.uniform(size=(3, 4)) > 0.5).astype(float)
    g = (rng.uniform(size=(2, 5, 5)) > 0.5).astype(float)
    levels = [parameter(rng.uniform(0.1, 0.9, (2, 5, 5))) for _ in range(4)]
    s = parameter(rng.uniform(0.1, 0.9, (2, 3, 3)))
    c = parameter(rng.uniform(size=(3, 6, 2)))
    gt = rng.uniform(size=(3, 6, 2))
    return {
        "focal": grad_check(lambda: focal_loss(p, labels), [p], tol=1e-4),
        "dice": grad_check(lambda: dice_loss(levels, g), levels, tol=1e-4),
        "induction": grad_check(lambda: induction_loss(s, g[:, :3, :3]), [s], tol=1e-4),
        "curve": grad_check(lambda: T.mean(curve_distance_tensor(c, gt)), [c], tol=1e-4),
    }


def test_criterion_4_gradients(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    failures = []
    for name, fn in UNARY.items():
        for shape in [(3,), (2, 4), (2, 3, 2)]:
            a = parameter(rng.uniform(-1, 1, size=shape))
            w = rng.normal(size=np.shape(fn(Tensor(a.data)).data))
            if not grad_check(lambda: T.tsum(fn(a) * w), [a], tol=1e-5).passed:
                failures.append(name)
    for name, fn in BINARY.items():
        a, b = parameter(rng.normal(size=(2, 4))), parameter(rng.normal(size=(4,)))
        if not grad_check(lambda: T.tsum(fn(a, b) ** 2), [a, b], tol=1e-5).passed:
            failures.append(name)
    a, b = parameter(rng.normal(size=(2, 2, 3))), parameter(rng.normal(size=(3, 2)))
    x, w, bias = parameter(rng.normal(size=(2, 6, 4))), parameter(rng.normal(size=(2, 2, 3, 3))), parameter(rng.normal(size=2))
    fm, co = parameter(rng.normal(size=(2, 5, 7))), parameter(rng.uniform(0.02, 0.98, (9, 2)))
    prims = {
        "matmul": (lambda: T.tsum(T.matmul(a, b) ** 2), [a, b]),
        "conv2d": (lambda: T.tsum(T.conv2d(x, w, bias, 2) ** 2), [x, w, bias]),
        "max_pool2d": (lambda: T.tsum(T.max_pool2d(x) ** 2), [x]),
        "upsample": (lambda: T.tsum(T.upsample_nearest(x, 2) ** 3), [x]),
        "bilinear": (lambda: T.tsum(T.bilinear_sample(fm, co) ** 2), [fm, co]),
        "positional_encoding": (lambda: T.tsum(T.positional_encoding(co, 8) ** 3), [co]),
    }
    for name, (f, inputs) in prims.items():
        if not grad_check(f, inputs, tol=1e-5).passed:
            failures.append(name)
    failures += [f"loss:{k}" for k, r in _loss_checks(rng).items() if not r.passed]
    cfg = small_config(channels=8, encoder_widths=(4, 4, 4, 4), hidden_dim=16, heads=2, num_proposals=2,
                       num_ref_points=7, sampling_points=1, detach_stage_inputs=False)
    sample = generate_synthetic(2, 1, 64, 64)[0]
    model = LandmarkCurveModel(cfg)
    e2e = grad_check(lambda: image_loss(model, sample, 5, cfg).total_tensor,
                     [p for _, p in model.named_parameters()], tol=1e-3, max_entries=60,
                     rng=np.random.default_rng(0), floor=1e-6)
    if not e2e.passed:
        failures.append("end-to-end")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 120
    report(capsys, 4, ok, f"failures={failures or 'none'} end-to-end max rel err={e2e.max_rel_error:.1e} "
                          f"time={elapsed:.1f}s")


def test_criterion_5_loss_composition(capsys):
    rng = np.random.default_rng(5)
    d10 = decay_coefficient(10) == 0.5
    d0 = abs(decay_coefficient(0) - 0.993307) <= 1e-6
    d20 = abs(decay_coefficient(20) - 0.006693) <= 1e-6
    tg = _targets(rng)
    recomb = max(abs(lb.recombine(Config()) - lb.total) for lb in
                 (total_loss(_fake_output(tg, 4, rng, perfect=False), tg, e, Config()) for e in (0, 10, 30)))
    perfect = total_loss(_fake_output(tg, 4, rng), tg, 0, Config()).total
    ok = d10 and d0 and d20 and recomb <= 1e-12 and perfect < 1e-3
    report(capsys, 5, ok, f"lambda_d(10)=0.5:{d10} lambda_d(0):{d0} lambda_d(20):{d20} "
                          f"recombination={recomb:.1e} perfect={perfect:.1e}")


def test_criterion_6_metric_oracles(capsys):
    a = np.zeros((30, 30), bool)
    a[0:10, 0:10] = True
    b = np.zeros_like(a)
    b[0:10, 5:15] = True
    rect = mask_metrics(a, b) == (100 * 5 / 15, 50.0)
    rng = np.random.default_rng(6)
    worst_assd = 0.0
    for _ in range(20):
        p, g = rng.integers(0, 50, (20, 2)), rng.integers(0, 50, (25, 2))
        d = np.sqrt(((p[:, None] - g[None]) ** 2).sum(-1))
        brute = (d.min(1).sum() + d.min(0).sum()) / (len(p) + len(g))
        worst_assd = max(worst_assd, abs(assd(p, g)[0] - brute))
    worst_id = 0.0
    for _ in range(100):
        p, g = rng.uniform(size=(2, 16, 16)) > rng.uniform(0.2, 0.8, 2)[:, None, None]
        iou, dsc = mask_metrics(p, g)
        worst_id = max(worst_id, abs(dsc / 100 - 2 * (iou / 100) / (1 + iou / 100)))
    s = _straight_sample()
    rep = evaluate_predictions([_oracle_prediction(s)], [s], Config())
    oracle = rep.dsc == 100 and rep.iou == 100 and rep.assd == 0
    ok = rect and worst_assd <= 1e-9 and worst_id <= 1e-9 and oracle
    report(capsys, 6, ok, f"rectangles={rect} assd={worst_assd:.1e} identity={worst_id:.1e} "
                          f"oracle dsc={rep.dsc} iou={rep.iou} assd={rep.assd}")


@pytest.mark.slow
def test_criterion_7_desk_scale_run(capsys):
    t0 = time.perf_counter()
    cfg = desk_config()
    samples = generate_synthetic(7, 8, 128, 128)
    result = train(cfg, samples)
    elapsed = time.perf_counter() - t0
    first = result.step_losses[0]
    last = float(np.mean(result.step_losses[-len(samples) // cfg.batch_size:]))
    rep = evaluate(result.model, samples, cfg)
    dists = np.array([stage_distances(predict(result.model, s.image), s, cfg) for s in samples])
    frac = float(np.mean(dists[:, 3] <= dists[:, 0]))
    ok_a, ok_b, ok_c = last < 0.1 * first, rep.dsc >= 85, frac >= 0.8
    ok = ok_a and ok_b and ok_c and result.steps <= 2000 and elapsed < 900
    report(capsys, 7, ok, f"steps={result.steps} loss {first:.3f}->{last:.3f} (a:{ok_a}) dsc={rep.dsc:.2f} (b:{ok_b}) "
                          f"stage3<=stage0 on {frac:.0%} (c:{ok_c}) mean stage distances "
                          f"{np.round(dists.mean(0), 2).tolist()} px time={elapsed:.0f}s")


def test_criterion_8_reproducibility(capsys, tmp_path):
    cfg = small_config(channels=8, encoder_widths=(4, 4, 4, 4), hidden_dim=16, heads=2, num_proposals=2,
                       num_ref_points=7, sampling_points=1, batch_size=2, learning_rate=1e-3, epochs=4)
    samples = generate_synthetic(8, 4, 64, 64)
    a = train(cfg, samples, tmp_path / "a")
    b = train(cfg, samples, tmp_path / "b")
    same = a.step_losses == b.step_losses and \
        (tmp_path / "a" / "checkpoint.bin").read_bytes() == (tmp_path / "b" / "checkpoint.bin").read_bytes()
    train(cfg.replace(epochs=2), samples, tmp_path / "r")
    r = train(cfg, samples, tmp_path / "r", resume=tmp_path / "r" / "checkpoint.bin")
    resumed = r.log_lines == a.log_lines and \
        (tmp_path / "r" / "checkpoint.bin").read_bytes() == (tmp_path / "a" / "checkpoint.bin").read_bytes()
    report(capsys, 8, same and resumed, f"identical runs={same} resume 2+2 == 4 epochs={resumed}")


def test_criterion_9_refinement_structure(capsys):
    rng = np.random.default_rng(9)
    cfg = small_config()
    model = LandmarkCurveModel(cfg)
    pyr = random_pyramid(rng, cfg, 64)
    init = ProposalSet(Tensor(rng.uniform(0.1, 0.9, (3, cfg.num_proposals, 6, 2))),
                       Tensor(rng.uniform(size=(3, cfg.num_proposals))))
    perm = rng.permutation(cfg.num_proposals)
    permuted = ProposalSet(Tensor(init.curves.data[:, perm]), Tensor(init.scores.data[:, perm]))
    with no_grad():
        a = run_hcr(model.refiner, init, pyr)
        b = run_hcr(model.refiner, permuted, pyr)
    equiv = max(max(np.max(np.abs(x.proposals.curves.data[:, perm] - y.proposals.curves.data)),
                    np.max(np.abs(x.proposals.scores.data[:, perm] - y.proposals.scores.data)))
                for x, y in zip(a, b))
    zero_offset_heads(model.refiner)
    with no_grad():
        fixed = run_hcr(model.refiner, init, pyr)
    fix = max(np.max(np.abs(o.proposals.curves.data - init.curves.data)) for o in fixed)
    isolated = True
    for idx in (1, 2, 3):
        rec = RecordingPyramid(pyr)
        with no_grad():
            RefineStage(rng, cfg, idx)(init, rec)
        isolated &= rec.accessed == set(STAGE_LEVELS[idx])
    ok = fix <= 1e-7 and equiv <= 1e-12 and isolated
    report(capsys, 9, ok, f"fixpoint={fix:.1e} permutation={equiv:.1e} level isolation={isolated}")
