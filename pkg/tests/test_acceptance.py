"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
printed in the "acceptance criteria" section of the terminal summary (and
immediately, when run with ``-s``).
"""
from __future__ import annotations

import csv
import time
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from glandseg.augment import elastic_radial, random_crop, rot_flip
from glandseg.core import MetricConfig, load_score_table
from glandseg.fusionnet import FusionNet, TrainConfig, forward, grad_check, train
from glandseg.labelgen import (
    derive_boxes,
    derive_edge_mask,
    dilate_mask,
    fill_boxes,
    instance_separated_mask,
)
from glandseg.metrics import (
    aggregate,
    detection_f1,
    evaluate_image,
    instance_recognition_cost,
    object_dice,
    object_hausdorff,
    rank_table,
)
from glandseg.postprocess import (
    extract_instances,
    fill_holes,
    instances_from_mask,
    instances_from_probabilities,
    remove_small,
)
from glandseg.synth import SynthConfig, generate, make_dataset

import oracles

DATA = Path(__file__).parent / "data"

# Pinned tolerances and budgets.
ORACLE_TOL = 1e-9
GRAD_TOL = 1e-4
GRAD_EPS = 1e-4
ACC_MIN = 0.90
BUDGET = {1: 1.0, 2: 60.0, 4: 120.0, 5: 600.0, 6: 30.0, 7: 10.0}

# Toy fusion run: <= 5000 steps, fixed optimiser settings, 200 samples.
FUSION_STEPS = 3000
FUSION_TRAIN, FUSION_HELDOUT = 200, 50
EVAL_MIN_AREA = 20   # 64 x 64 images; 100 px is the full-resolution default


@contextmanager
def criterion(n: int, title: str):
    """Record PASS/FAIL for criterion ``n``; budget overruns count as failures."""
    start = time.perf_counter()
    detail = {"text": ""}
    try:
        yield detail
        elapsed = time.perf_counter() - start
        if n in BUDGET and elapsed >= BUDGET[n]:
            raise AssertionError(f"runtime {elapsed:.1f}s exceeds budget {BUDGET[n]:.0f}s")
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        line = f"FAIL criterion {n}: {title} ({elapsed:.1f}s) {detail['text']} :: {exc}"
        ACCEPTANCE_LINES[n] = line
        print(line)
        raise
    line = f"PASS criterion {n}: {title} ({elapsed:.1f}s) {detail['text']}"
    ACCEPTANCE_LINES[n] = line
    print(line)


def test_criterion_1_rank_arithmetic():
    with criterion(1, "challenge leaderboard ranks, RS and WRS reproduced exactly") as d:
        table = rank_table(load_score_table(DATA / "leaderboard.csv"))
        with open(DATA / "leaderboard_ranks.csv") as fh:
            expected = list(csv.DictReader(fh))
        assert len(expected) == len(table.rows) == 14
        for rec in expected:
            row = table.by_method(rec["method"])
            ranks = tuple(int(rec[k]) for k in list(rec)[1:7])
            assert row.ranks == ranks, (rec["method"], row.ranks, ranks)
            assert row.rank_sum == int(rec["rs"]), rec["method"]
            assert row.weighted_rank_sum == float(rec["wrs"]), rec["method"]
        ours, cu, v4 = (table.by_method(m) for m in ("Ours", "CUMedVision2", "vision4GlaS"))
        assert (ours.rank_sum, ours.weighted_rank_sum) == (8, 4.5)
        assert (cu.rank_sum, cu.weighted_rank_sum) == (28, 9.5)
        assert (v4.rank_sum, v4.weighted_rank_sum) == (80, 39.5)
        d["text"] = "14/14 rows"


def test_criterion_2_metric_oracles():
    with criterion(2, "metrics equal brute-force oracles on 200 random 32x32 pairs") as d:
        rng = np.random.default_rng(2024)
        worst = 0.0
        checked = {"f1": 0, "dice": 0, "haus": 0, "irc": 0}
        for _ in range(200):
            gt = oracles.random_instance_map(rng, 32, 6)
            pred = oracles.perturb(rng, gt) if rng.random() < 0.8 else oracles.random_instance_map(rng, 32, 6)
            g, s = oracles.regions(gt), oracles.regions(pred)
            assert len(g) <= 6
            tp, fp, fn = oracles.detection_counts(gt, pred)
            p, r, f, m = detection_f1(gt, pred)
            assert (m.tp, m.fp, m.fn) == (tp, fp, fn)
            assert abs(f - oracles.f1(tp, fp, fn)) <= ORACLE_TOL
            checked["f1"] += 1
            if g or s:
                err = abs(object_dice(gt, pred) - oracles.object_dice(gt, pred))
                worst = max(worst, err)
                checked["dice"] += 1
            if g and s:
                err = abs(object_hausdorff(gt, pred) - oracles.object_hausdorff(gt, pred))
                worst = max(worst, err)
                checked["haus"] += 1
            if g:
                err = abs(instance_recognition_cost(gt, pred) - oracles.instance_recognition_cost(gt, pred))
                worst = max(worst, err)
                checked["irc"] += 1
            assert worst <= ORACLE_TOL, worst
        d["text"] = f"max abs err {worst:.2e}, checked {checked}"


def test_criterion_3_threshold_semantics():
    with criterion(3, "IoU 0.5 matched, 0.4999 not") as d:
        gt = np.ones((100, 100), dtype=np.int64)
        half = np.zeros_like(gt)
        half[:50] = 1
        below = np.zeros_like(gt)
        below.ravel()[:4999] = 1
        for pred, iou in ((half, Fraction(1, 2)), (below, Fraction(4999, 10000))):
            inter = int(((gt > 0) & (pred > 0)).sum())
            union = int(((gt > 0) | (pred > 0)).sum())
            assert Fraction(inter, union) == iou
        cfg = MetricConfig(iou_threshold=0.5)
        assert instance_recognition_cost(gt, half, cfg) == 0.0
        assert instance_recognition_cost(gt, below, cfg) == 1.0
        d["text"] = "IRC 0.0 at IoU=0.5, 1.0 at IoU=0.4999"


def test_criterion_4_gradient_fidelity():
    with criterion(4, "grad_check on default 7-layer net, 8x8 input") as d:
        rng = np.random.default_rng(0)
        net = FusionNet.default(seed=0)
        sample = (rng.random((3, 8, 8)), rng.integers(0, 2, (8, 8)))
        report = grad_check(net, sample, epsilon=GRAD_EPS)
        d["text"] = (f"max rel err {report.max_rel_error:.2e} over {report.n_checked} params "
                     f"({report.n_kink_skipped} at ReLU kinks skipped)")
        assert report.n_checked + report.n_kink_skipped == net.n_params()
        assert report.max_rel_error < GRAD_TOL


def test_criterion_5_toy_fusion_efficacy():
    with criterion(5, "fused net beats thresholded P_s on held-out synthetic data") as d:
        cfg = SynthConfig(seed=0)
        train_set = make_dataset(cfg, FUSION_TRAIN)
        held_out = make_dataset(cfg, FUSION_HELDOUT, start=10_000)
        X = [s["channels"] for s in train_set]
        Y = [instance_separated_mask(s["instances"]) for s in train_set]
        tcfg = TrainConfig(learning_rate=1e-3, momentum=0.9, weight_decay=0.002,
                           iterations=FUSION_STEPS, batch_size=4, patch_size=32, seed=0)
        assert tcfg.iterations <= 5000
        net = FusionNet.default(seed=0)
        train(net, X, Y, tcfg)
        acc, fused, base = [], [], []
        for s in held_out:
            p = forward(net, s["channels"])
            target = instance_separated_mask(s["instances"])
            acc.append(float(np.mean((p[1] > p[0]) == target)))
            z_fused = instances_from_probabilities(p, min_area=EVAL_MIN_AREA)
            z_base = instances_from_mask((s["channels"][0] > 0.5).astype(np.uint8), min_area=EVAL_MIN_AREA)
            fused.append(evaluate_image(s["instances"], z_fused))
            base.append(evaluate_image(s["instances"], z_base))
        pixel_acc = float(np.mean(acc))
        f_fused, f_base = aggregate(fused)["f1"], aggregate(base)["f1"]
        d["text"] = f"pixel acc {pixel_acc:.4f}, F1 fused {f_fused:.4f} vs P_s {f_base:.4f}"
        assert pixel_acc >= ACC_MIN
        assert f_fused > f_base


def test_criterion_6_label_pipeline_invariants():
    with criterion(6, "label-pipeline invariants on 100 synthetic maps") as d:
        cfg = SynthConfig(seed=6)
        rng = np.random.default_rng(6)
        for i in range(100):
            _, z = generate(cfg, i)
            boxes = derive_boxes(z)
            for b in boxes:
                ys, xs = np.nonzero(z == b.id)
                assert (b.y_min, b.y_max, b.x_min, b.x_max) == (ys.min(), ys.max(), xs.min(), xs.max())
            assert fill_boxes(boxes, *z.shape).sum() == sum(b.area for b in boxes)
            k = int(z.max())
            lut = np.concatenate([[0], rng.permutation(np.arange(1, k + 1)) + 1000])
            e = derive_edge_mask(z)
            assert np.array_equal(e, derive_edge_mask(lut[z]))
            assert np.array_equal(dilate_mask(e, 0), e)
        d["text"] = "100/100 maps"


def test_criterion_7_augmentation_group_laws():
    with criterion(7, "rot90^4 = hflip^2 = elastic(0) = id, 400x400 crops") as d:
        rng = np.random.default_rng(7)
        img = rng.random((522, 775, 3))
        z = rng.integers(0, 40, (522, 775))
        a, la = img, [z]
        for _ in range(4):
            a, la = rot_flip(a, la, 1, False)
        assert np.array_equal(a, img) and np.array_equal(la[0], z)
        b, lb = rot_flip(*rot_flip(img, [z], 0, True), 0, True)
        assert np.array_equal(b, img) and np.array_equal(lb[0], z)
        c, lc = elastic_radial(img, [z], 0.0)
        assert np.array_equal(c, img) and np.array_equal(lc[0], z)
        ci, (cz,) = random_crop(img, [z], 400, rng)
        assert ci.shape == (400, 400, 3) and cz.shape == (400, 400)
        d["text"] = "bit-exact"


def test_criterion_8_postprocess_invariants():
    with criterion(8, "post-processing partitions, idempotence, 99 px removal") as d:
        rng = np.random.default_rng(8)
        for _ in range(100):
            y = (rng.random((24, 24)) < rng.uniform(0.2, 0.8)).astype(np.uint8)
            for conn in (4, 8):
                z = instances_from_mask(y, conn, min_area=int(rng.integers(0, 8)))
                ids = np.unique(z)
                assert sum(int((z == k).sum()) for k in ids) == z.size
                for a in (1, 5, 100):
                    once = remove_small(z, a)
                    assert np.array_equal(remove_small(once, a), once)
                f = fill_holes(extract_instances(y, conn))
                assert np.array_equal(fill_holes(f), f)
        z = np.zeros((20, 20), dtype=np.int64)
        z[0:9, 0:11] = 3                       # 99 px
        assert (z == 3).sum() == 99
        assert not remove_small(z, 100).any()
        d["text"] = "200 pipelines"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
