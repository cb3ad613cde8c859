import numpy as np
import pytest
from hypothesis import given, strategies as st

from thermoguard.distancing import BoundingBox
from thermoguard.errors import DomainError, UndefinedMetricError
from thermoguard.evaluation import (MatchResult, SplitSpec, average_precision, evaluate,
                                    make_synthetic_dataset, match_detections, miss_rate,
                                    pr_curve, split_dataset, split_sizes)
from thermoguard.yolo import Detection

from oracles import ap_all_thresholds, greedy_match, miss_rate_bruteforce

GTS = [BoundingBox(0, 0, 10, 20), BoundingBox(50, 50, 10, 20), BoundingBox(100, 0, 10, 20)]


def perfect(gts, score=0.9):
    return [Detection(g.x, g.y, g.w, g.h, score) for g in gts]


def random_frame(rng, n_det, n_gt):
    gts = [BoundingBox(*rng.integers(0, 60, 2).astype(float), *rng.integers(8, 30, 2).astype(float))
           for _ in range(n_gt)]
    dets = []
    for _ in range(n_det):
        x, y = rng.integers(0, 60, 2)
        w, h = rng.integers(8, 30, 2)
        dets.append(Detection(float(x), float(y), float(w), float(h),
                              float(rng.integers(1, 10)) / 10))
    return dets, gts


# --- matching -----------------------------------------------------------------

def test_perfect_detector():
    r = match_detections(perfect(GTS), GTS)
    assert (r.true_positives, r.false_positives, r.false_negatives) == (3, 0, 0)


def test_no_detections():
    r = match_detections([], GTS)
    assert (r.true_positives, r.false_positives, r.false_negatives) == (0, 0, 3)


def test_one_gt_matched_once():
    dets = [Detection(0, 0, 10, 20, 0.6), Detection(0, 0, 10, 20, 0.9)]
    r = match_detections(dets, GTS[:1])
    assert r.tp_flags == (False, True)
    assert (r.true_positives, r.false_positives) == (1, 1)


def test_iou_exactly_at_minimum_matches():
    # 10x10 inside 10x20 sharing a corner: IoU = 100 / 200 exactly
    gt = [BoundingBox(0, 0, 10, 20)]
    det = Detection(0, 0, 10, 10, 0.5)
    assert match_detections([det], gt, 0.5).true_positives == 1
    assert match_detections([det], gt, np.nextafter(0.5, 1)).true_positives == 0


def test_matches_greedy_oracle(rng):
    for _ in range(100):
        dets, gts = random_frame(rng, 10, 5)
        r = match_detections(dets, gts, 0.5)
        flags, n = greedy_match(dets, gts, 0.5)
        assert list(r.tp_flags) == flags
        assert r.true_positives == n
        assert r.false_positives == len(dets) - n
        assert r.false_negatives == len(gts) - n


def test_iou_min_validation():
    with pytest.raises(DomainError):
        match_detections([], GTS, 0.0)


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95), st.floats(0.0, 0.5))
def test_lower_iou_never_fewer_tp(seed, hi, gap):
    dets, gts = random_frame(np.random.default_rng(seed), 8, 5)
    lo = max(0.01, hi - gap)
    assert (match_detections(dets, gts, lo).true_positives
            >= match_detections(dets, gts, hi).true_positives)


# --- AP and miss rate -------------------------------------------------------------

def test_ap_perfect_is_one():
    frames = [(perfect(GTS), GTS), (perfect(GTS[:2], 0.7), GTS[:2])]
    assert evaluate(frames)[0].average_precision == 1.0


def test_ap_no_detections_is_zero():
    assert evaluate([([], GTS)])[0].average_precision == 0.0


def test_ap_undefined_without_ground_truth():
    with pytest.raises(UndefinedMetricError):
        evaluate([(perfect(GTS), [])])


def test_toy_ap_hand_computed():
    # ranked TP, FP, TP, FP, FP, TP over 4 ground-truth boxes
    gts = [BoundingBox(100 * k, 0, 10, 10) for k in range(4)]
    far = 1000
    dets = [Detection(0, 0, 10, 10, 0.9), Detection(far, 0, 10, 10, 0.8),
            Detection(100, 0, 10, 10, 0.7), Detection(far, 100, 10, 10, 0.6),
            Detection(far, 200, 10, 10, 0.5), Detection(200, 0, 10, 10, 0.4)]
    r = match_detections(dets, gts)
    pts = pr_curve([r])
    assert pts == [(0.25, 1.0), (0.25, 0.5), (0.5, 2 / 3), (0.5, 0.5), (0.5, 0.4), (0.75, 0.5)]
    # envelope: 1.0 up to 0.25, 2/3 up to 0.5, 0.5 up to 0.75
    assert average_precision([r]) == pytest.approx(0.25 + 0.25 * 2 / 3 + 0.25 * 0.5, abs=1e-12)
    ap, _ = ap_all_thresholds([(dets, gts)], 0.5)
    assert average_precision([r]) == pytest.approx(ap, abs=1e-12)


def test_miss_rate_example():
    assert miss_rate(MatchResult(9, 3, 1)) == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(UndefinedMetricError):
        miss_rate(MatchResult(0, 2, 0))


def test_synthetic_against_bruteforce():
    data = make_synthetic_dataset(50, seed=3)
    frames = [(d, g) for _, d, g in data]
    summary, per_frame = evaluate(frames, 0.5, 0.5)
    ap, _ = ap_all_thresholds(frames, 0.5)
    assert summary.average_precision == pytest.approx(ap, abs=1e-9)
    assert summary.miss_rate == pytest.approx(miss_rate_bruteforce(frames, 0.5, 0.5), abs=1e-9)
    assert len(per_frame) == 50
    assert 0 < summary.average_precision < 1


@given(st.integers(0, 2**32 - 1))
def test_ap_depends_only_on_rank(seed):
    frames = [(d, g) for _, d, g in make_synthetic_dataset(6, seed=seed)]
    ref = evaluate(frames, 0.5, 0.0)[0].average_precision
    # strictly increasing map of every score keeps the ranking
    moved = [([Detection(d.x, d.y, d.w, d.h, d.score ** 3 / 2, d.class_id) for d in dets], g)
             for dets, g in frames]
    assert evaluate(moved, 0.5, 0.0)[0].average_precision == pytest.approx(ref, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_ap_and_miss_rate_in_range(seed):
    frames = [(d, g) for _, d, g in make_synthetic_dataset(5, seed=seed, drop=0.4, spurious=0.5)]
    s = evaluate(frames)[0]
    assert 0 <= s.average_precision <= 1
    assert 0 <= s.miss_rate <= 1
    assert s.true_positives + s.false_negatives == sum(len(g) for _, g in frames)


# --- split ----------------------------------------------------------------------------

def test_split_sizes_examples():
    assert split_sizes(10) == (7, 2, 1)
    assert split_sizes(981) == (687, 196, 98)
    assert split_sizes(1) == (1, 0, 0)


def test_split_deterministic():
    ids = [f"f{k}" for k in range(981)]
    a = split_dataset(ids, SplitSpec(seed=4))
    assert a == split_dataset(ids, SplitSpec(seed=4))
    assert tuple(map(len, a)) == (687, 196, 98)
    assert a != split_dataset(ids, SplitSpec(seed=5))


def test_split_validation():
    with pytest.raises(DomainError):
        SplitSpec(fractions=(0.5, 0.5, 0.5))
    with pytest.raises(DomainError):
        split_dataset([])


@given(st.lists(st.integers(), min_size=1, max_size=300, unique=True), st.integers(0, 1000))
def test_split_partition(ids, seed):
    train, val, test = split_dataset(ids, SplitSpec(seed=seed))
    assert sorted(train + val + test) == sorted(ids)
    assert not (set(train) & set(val) or set(train) & set(test) or set(val) & set(test))
    assert (len(train), len(val), len(test)) == split_sizes(len(ids))
