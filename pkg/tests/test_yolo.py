import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from thermoguard.engine import ConvLayer, NetworkSpec, ReLU
from thermoguard.errors import DomainError, ShapeError
from thermoguard.netfile import reference_model
from thermoguard.yolo import (AnchorSet, DecodeConfig, Detection, YoloHead, decode, detect, iou,
                              nms)

from oracles import decode_scalar, iou_np, nms_bruteforce

box_st = st.tuples(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.5, 40), st.floats(0.5, 40))


def random_dets(rng, n, classes=1, grid=False):
    dets = []
    for _ in range(n):
        if grid:  # coarse coordinates so exact overlaps and score ties occur
            x, y = rng.integers(0, 6, 2) * 5.0
            w, h = rng.integers(1, 4, 2) * 5.0
            s = rng.integers(1, 6) / 5
        else:
            x, y = rng.uniform(0, 100, 2)
            w, h = rng.uniform(5, 40, 2)
            s = rng.random()
        dets.append(Detection(float(x), float(y), float(w), float(h), float(s),
                              int(rng.integers(0, classes))))
    return dets


# --- decode -----------------------------------------------------------------

def test_decode_zero_logits_closed_form():
    dets = decode(np.zeros((6, 14, 14)), AnchorSet(((32, 32),)), DecodeConfig(0.25, 0.5, 224))
    assert len(dets) == 196
    for k, d in enumerate(dets):
        i, j = divmod(k, 14)
        assert d.score == 0.5
        assert (d.w, d.h) == (32.0, 32.0)
        assert d.x + d.w / 2 == j * 16 + 8
        assert d.y + d.h / 2 == i * 16 + 8


def test_decode_low_objectness_empty():
    raw = np.zeros((6, 14, 14))
    raw[4] = -20
    assert decode(raw, AnchorSet(((32, 32),)), DecodeConfig(0.25)) == []


def test_decode_matches_scalar_oracle(rng):
    anchors = AnchorSet()
    for _ in range(5):
        raw = rng.normal(0, 2, size=(18, 7, 7))
        got = decode(raw, anchors, DecodeConfig(0.3, 0.5, 224))
        ref = decode_scalar(raw, anchors.anchors, 224, 0.3)
        assert len(got) == len(ref) > 0
        for d, r in zip(got, ref):
            np.testing.assert_allclose([d.x, d.y, d.w, d.h, d.score], r[:5], atol=1e-5)


def test_decode_multiclass_matches_oracle(rng):
    anchors = AnchorSet(((20, 40), (50, 60)))
    raw = rng.normal(0, 2, size=(2 * 8, 4, 4))
    got = decode(raw, anchors, DecodeConfig(0.1, 0.5, 64), num_classes=3)
    ref = decode_scalar(raw, anchors.anchors, 64, 0.1, num_classes=3)
    assert [(d.class_id) for d in got] == [r[5] for r in ref]
    for d, r in zip(got, ref):
        np.testing.assert_allclose([d.x, d.y, d.w, d.h, d.score], r[:5], atol=1e-5)


def test_decode_shape_errors():
    with pytest.raises(ShapeError):
        decode(np.zeros((7, 14, 14)), AnchorSet(((1, 1),)), DecodeConfig())
    with pytest.raises(ShapeError):
        decode(np.zeros((6, 14, 7)), AnchorSet(((1, 1),)), DecodeConfig())
    with pytest.raises(ShapeError):
        decode(np.zeros((6, 15, 15)), AnchorSet(((1, 1),)), DecodeConfig(input_size=224))


@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_decode_invariants(seed, thr):
    rng = np.random.default_rng(seed)
    raw = rng.normal(0, 4, size=(18, 4, 4))
    dets = decode(raw, AnchorSet(), DecodeConfig(thr, 0.5, 64))
    assert len(dets) <= 4 * 4 * 3
    for d in dets:
        assert d.score >= thr
        assert d.w > 0 and d.h > 0
        cx, cy = d.x + d.w / 2, d.y + d.h / 2
        assert 0 <= cx <= 64 and 0 <= cy <= 64


def test_anchor_and_config_validation():
    with pytest.raises(DomainError):
        AnchorSet(((0, 10),))
    with pytest.raises(ShapeError):
        AnchorSet(())
    with pytest.raises(DomainError):
        DecodeConfig(confidence_threshold=1.5)


# --- iou --------------------------------------------------------------------

def test_iou_examples():
    assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert iou((0, 0, 2, 2), (5, 5, 2, 2)) == 0.0
    assert iou((0, 0, 2, 2), (1, 0, 2, 2)) == pytest.approx(1 / 3, abs=1e-12)
    assert iou((0, 0, 2, 2), (2, 0, 2, 2)) == 0.0  # touching edges


def test_iou_domain_error():
    with pytest.raises(DomainError):
        iou((0, 0, 0, 2), (0, 0, 1, 1))


@given(box_st, box_st)
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou(b, a), abs=1e-12)
    assert iou(a, a) == pytest.approx(1.0, abs=1e-12)
    assert v == pytest.approx(iou_np(a, b), abs=1e-9)


# --- nms --------------------------------------------------------------------

def test_nms_single_and_empty():
    d = Detection(0, 0, 10, 10, 0.7)
    assert nms([d], 0.5) == [d]
    assert nms([], 0.5) == []


def test_nms_identical_boxes():
    a = Detection(0, 0, 10, 10, 0.9)
    b = Detection(0, 0, 10, 10, 0.8)
    assert nms([b, a], 0.5) == [a]


def test_nms_per_class():
    a = Detection(0, 0, 10, 10, 0.9, 0)
    b = Detection(0, 0, 10, 10, 0.8, 1)
    assert nms([a, b], 0.5) == [a, b]


def test_nms_tie_break_by_coordinates():
    a = Detection(5, 0, 10, 10, 0.9)
    b = Detection(4, 0, 10, 10, 0.9)
    assert nms([a, b], 0.5) == [b]


def test_nms_matches_bruteforce(rng):
    for k in range(200):
        dets = random_dets(rng, int(rng.integers(0, 30)), classes=2, grid=k % 2 == 0)
        thr = float(rng.choice([0.0, 0.3, 0.5, 0.7, 1.0]))
        assert nms(dets, thr) == nms_bruteforce(dets, thr)


@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_nms_properties(seed, thr):
    rng = np.random.default_rng(seed)
    dets = random_dets(rng, 20, classes=2)
    kept = nms(dets, thr)
    assert all(k in dets for k in kept)
    scores = [k.score for k in kept]
    assert scores == sorted(scores, reverse=True)
    for i, a in enumerate(kept):
        for b in kept[i + 1:]:
            if a.class_id == b.class_id:
                assert iou(a.bbox, b.bbox) < thr


@given(st.integers(0, 2**32 - 1))
def test_nms_threshold_extremes(seed):
    rng = np.random.default_rng(seed)
    dets = random_dets(rng, 15, classes=2)
    assume(len({d.bbox for d in dets}) == len(dets))
    assert len(nms(dets, 1.0)) == len(dets)
    kept = nms(dets, 0.0)
    assert len(kept) <= 2
    assert kept == nms_bruteforce(dets, 0.0)


# --- detect -----------------------------------------------------------------

def _tiny_net():
    conv = ConvLayer(np.zeros((2, 3, 3, 3)), np.zeros(2))
    return NetworkSpec((("conv", conv), ("ReLU_5", ReLU())), input_shape=(3, 32, 32))


def test_detect_all_zero_weights_empty():
    head = YoloHead(np.zeros((6, 2)), np.zeros(6), AnchorSet(((8, 8),)))
    assert detect(np.zeros((3, 32, 32)), _tiny_net(), head, DecodeConfig(0.6, 0.5, 32)) == []


def test_detect_single_hot_cell():
    net = _tiny_net()
    # conv channel 0 passes input channel 0 through (identity centre tap)
    w = np.zeros((2, 3, 3, 3))
    w[0, 0, 1, 1] = 1
    net = NetworkSpec((("conv", ConvLayer(w, np.zeros(2))), ("ReLU_5", ReLU())),
                      input_shape=(3, 4, 4))
    head_w = np.zeros((6, 2))
    head_w[4, 0] = 40.0  # objectness driven by feature channel 0
    head = YoloHead(head_w, np.array([0, 0, 0, 0, -20.0, 0]), AnchorSet(((10, 12),)))
    x = np.zeros((3, 4, 4))
    x[0, 2, 1] = 1.0
    cfg = DecodeConfig(0.5, 0.5, 64)
    dets = detect(x, net, head, cfg)
    assert len(dets) == 1
    d = dets[0]
    # cell (row 2, col 1), stride 16, centre offset sigmoid(0) = 0.5
    ref = decode_scalar(head(np.pad(x[:1], ((0, 1), (0, 0), (0, 0)))), [(10, 12)], 64, 0.5)
    assert len(ref) == 1
    np.testing.assert_allclose([d.x, d.y, d.w, d.h, d.score], ref[0][:5], atol=1e-6)
    assert (d.x + d.w / 2, d.y + d.h / 2) == (24.0, 40.0)


def test_detect_clips_to_image():
    net = NetworkSpec((("ReLU_5", ReLU()),), input_shape=(1, 2, 2))
    head = YoloHead(np.zeros((6, 1)), np.array([0, 0, 0, 0, 5.0, 0]), AnchorSet(((40, 40),)))
    dets = detect(np.zeros((1, 2, 2)), net, head, DecodeConfig(0.5, 0.99, 32))
    assert dets
    for d in dets:
        assert d.x >= 0 and d.y >= 0 and d.x + d.w <= 32 and d.y + d.h <= 32


def test_detect_deterministic(rng):
    model = reference_model(seed=11)
    x = rng.random((3, 224, 224))
    cfg = DecodeConfig(0.3, 0.5)
    assert model.detect(x, cfg) == model.detect(x.copy(), cfg)
