import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from thermoguard.distancing import (GREEN, RED, BoundingBox, CameraModel, DistancingConfig,
                                    assess_frame, center, meters_per_pixel, pixel_distance)
from thermoguard.errors import DomainError

from oracles import pairwise_oracle

CAM = CameraModel(range_m=10, hfov_deg=90, image_width_px=640, image_height_px=480)

coord = st.floats(-1000, 1000)
point = st.tuples(coord, coord)
box_st = st.builds(BoundingBox, st.floats(0, 600), st.floats(0, 400), st.floats(1, 80),
                   st.floats(1, 200))


def box_at(cx, cy, w=20, h=60):
    return BoundingBox(cx - w / 2, cy - h / 2, w, h)


def test_center_examples():
    assert center(BoundingBox(0, 0, 10, 10)) == (5, 5)
    assert center(BoundingBox(2, 3, 4, 6)) == (4, 6)


@given(box_st, st.floats(-100, 100), st.floats(-100, 100))
def test_center_translation_equivariant(b, dx, dy):
    moved = center(BoundingBox(b.x + dx, b.y + dy, b.w, b.h))
    c = center(b)
    assert moved[0] == pytest.approx(c[0] + dx, abs=1e-9)
    assert moved[1] == pytest.approx(c[1] + dy, abs=1e-9)


def test_pixel_distance_examples():
    assert pixel_distance((3, 3), (3, 3)) == 0
    assert pixel_distance((0, 0), (3, 4)) == 5


@given(point, point, point)
def test_pixel_distance_metric(a, b, c):
    assert pixel_distance(a, b) >= 0
    assert pixel_distance(a, a) == 0
    assert pixel_distance(a, b) == pixel_distance(b, a)
    assert pixel_distance(a, c) <= pixel_distance(a, b) + pixel_distance(b, c) + 1e-9
    if a != b:
        assert pixel_distance(a, b) > 0


def test_meters_per_pixel_examples():
    assert meters_per_pixel(CAM) == pytest.approx(0.03125, abs=1e-12)
    far = CameraModel(20, 90, 640)
    assert meters_per_pixel(far) == pytest.approx(2 * meters_per_pixel(CAM), abs=1e-12)
    # range 8 m, 60 degrees: scene width 2*8*tan(30) = 16/sqrt(3) m over 384 px
    hand = 16 / math.sqrt(3) / 384
    assert meters_per_pixel(CameraModel(8, 60, 384)) == pytest.approx(hand, abs=1e-9)


@pytest.mark.parametrize("kwargs", [dict(range_m=0, hfov_deg=90, image_width_px=10),
                                    dict(range_m=5, hfov_deg=180, image_width_px=10),
                                    dict(range_m=5, hfov_deg=0, image_width_px=10),
                                    dict(range_m=5, hfov_deg=60, image_width_px=0)])
def test_camera_validation(kwargs):
    with pytest.raises(DomainError):
        CameraModel(**kwargs)


def test_threshold_validation():
    with pytest.raises(DomainError):
        DistancingConfig(0)


def test_box_validation():
    with pytest.raises(DomainError):
        BoundingBox(0, 0, 0, 5)


# --- assess_frame -------------------------------------------------------------

def test_no_boxes():
    a = assess_frame([], CAM)
    assert a.colors == () and a.violating_pairs == ()


def test_single_box_green():
    assert assess_frame([box_at(100, 100)], CAM).colors == (GREEN,)


def test_two_close_red():
    # 40 px apart = 1.25 m
    a = assess_frame([box_at(100, 100), box_at(140, 100)], CAM, DistancingConfig(2.0))
    assert a.colors == (RED, RED)
    assert a.violating_pairs[0][:2] == (0, 1)
    assert a.violating_pairs[0][2] == pytest.approx(1.25, abs=1e-9)


def test_two_far_green():
    a = assess_frame([box_at(100, 100), box_at(300, 100)], CAM, DistancingConfig(2.0))
    assert a.colors == (GREEN, GREEN)
    assert a.violating_pairs == ()


def test_three_boxes_one_close_pair():
    boxes = [box_at(100, 100), box_at(130, 100), box_at(500, 300)]
    a = assess_frame(boxes, CAM)
    assert a.colors == (RED, RED, GREEN)
    colors, pairs = pairwise_oracle(boxes, CAM, 2.0)
    assert list(a.colors) == colors
    assert [(i, j) for i, j, _ in a.violating_pairs] == [(i, j) for i, j, _ in pairs]
    assert a.violating_pairs[0][2] == pytest.approx(pairs[0][2], abs=1e-9)


def test_exact_threshold_is_safe():
    boxes = [box_at(100, 100), box_at(164, 100)]
    d = assess_frame(boxes, CAM).distances_m[0][1]
    assert assess_frame(boxes, CAM, DistancingConfig(d)).colors == (GREEN, GREEN)
    assert assess_frame(boxes, CAM, DistancingConfig(math.nextafter(d, 3))).colors == (RED, RED)


@given(st.lists(box_st, max_size=8), st.floats(0.1, 10))
def test_assess_matches_oracle_and_invariants(boxes, thr):
    a = assess_frame(boxes, CAM, DistancingConfig(thr))
    colors, pairs = pairwise_oracle(boxes, CAM, thr)
    assert list(a.colors) == colors
    assert [(i, j) for i, j, _ in a.violating_pairs] == [(i, j) for i, j, _ in pairs]
    red_members = {i for i, j, _ in a.violating_pairs} | {j for i, j, _ in a.violating_pairs}
    for k, c in enumerate(a.colors):
        assert (c == RED) == (k in red_members)
    for i, j, d in a.violating_pairs:
        assert d < thr and a.distances_m[i][j] == d == a.distances_m[j][i]


@given(st.lists(box_st, min_size=2, max_size=6), st.floats(0.5, 4), st.floats(0.5, 4))
def test_scale_invariance(boxes, k, thr):
    cam = CameraModel(10, 70, 640)
    scaled = [BoundingBox(b.x * k, b.y * k, b.w * k, b.h * k) for b in boxes]
    a = assess_frame(boxes, cam, DistancingConfig(thr))
    b = assess_frame(scaled, CameraModel(10, 70, 640 * k), DistancingConfig(thr))
    np.testing.assert_allclose(np.array(a.distances_m), np.array(b.distances_m), atol=1e-9)
    # decisions agree except where a distance sits within rounding of the threshold
    d = np.array(a.distances_m)
    n = len(boxes)
    if all(abs(d[i, j] - thr) > 1e-9 for i in range(n) for j in range(i + 1, n)):
        assert a.colors == b.colors
        assert [p[:2] for p in a.violating_pairs] == [p[:2] for p in b.violating_pairs]


@given(st.lists(box_st, max_size=6), st.floats(0.1, 5), st.floats(0, 5))
def test_threshold_monotone(boxes, thr, extra):
    low = assess_frame(boxes, CAM, DistancingConfig(thr))
    high = assess_frame(boxes, CAM, DistancingConfig(thr + extra))
    assert {p[:2] for p in low.violating_pairs} <= {p[:2] for p in high.violating_pairs}
    for a, b in zip(low.colors, high.colors):
        assert not (a == RED and b == GREEN)


@given(st.lists(box_st, max_size=6), st.randoms(use_true_random=False))
def test_permutation_equivariance(boxes, random):
    perm = list(range(len(boxes)))
    random.shuffle(perm)
    a = assess_frame(boxes, CAM)
    b = assess_frame([boxes[p] for p in perm], CAM)
    assert [a.colors[p] for p in perm] == list(b.colors)
