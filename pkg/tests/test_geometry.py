import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from permset import geometry as G
from permset.network import output_grad_check

from conftest import random_boxes

coord = st.floats(-50, 50, allow_nan=False)
size = st.floats(0.1, 30, allow_nan=False)


@st.composite
def boxes(draw):
    x, y, w, h = draw(coord), draw(coord), draw(size), draw(size)
    return np.array([x, y, x + w, y + h])


def test_iou_examples():
    assert G.iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert G.iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)
    assert G.iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0


def test_iou_of_degenerate_boxes_is_zero():
    assert G.iou((1, 1, 1, 1), (1, 1, 1, 1)) == 0.0


def test_giou_examples():
    assert G.giou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert G.giou((0, 0, 1, 1), (1, 1, 2, 2)) == pytest.approx(-0.5, abs=1e-12)
    assert G.giou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7 - 2 / 9, abs=1e-12)


def test_aabox_validation():
    b = G.AABox(0, 0, 2, 3)
    assert b.area == 6
    assert G.iou(b, b) == 1.0
    with pytest.raises(ValueError):
        G.AABox(2, 0, 1, 1)
    with pytest.raises(ValueError):
        G.AABox(0, 0, math.inf, 1)


def test_giou_loss_example():
    # centre (0.5, 0.5), unit size vs the unit box at (1, 1)
    loss, grad = G.giou_loss_grad([0.5, 0.5, 0.0, 0.0], [1, 1, 2, 2])
    assert loss == pytest.approx(1.5, abs=1e-12)
    assert np.all(np.isfinite(grad))


def test_giou_loss_zero_at_target():
    target = np.array([0.2, 0.3, 0.6, 0.5])
    loss, grad = G.giou_loss_grad(G.encode_corners(target), target)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))


def test_smooth_l1_examples():
    assert G.smooth_l1([1.0, 2.0], [1.0, 2.0])[0] == 0.0
    assert G.smooth_l1([0.5], [0.0], 1.0)[0] == pytest.approx(0.125)
    assert G.smooth_l1([2.0], [0.0], 1.0)[0] == pytest.approx(1.5)
    with pytest.raises(ValueError):
        G.smooth_l1([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        G.smooth_l1([1.0], [1.0], 0.0)


def test_decode_encode_roundtrip(rng):
    b = random_boxes(rng, 20)
    np.testing.assert_allclose(G.decode_params(G.encode_corners(b)), b, atol=1e-12)


def test_pairwise_iou_shape(rng):
    a, b = random_boxes(rng, 3), random_boxes(rng, 5)
    m = G.pairwise_iou(a, b)
    assert m.shape == (3, 5)
    assert m[1, 2] == pytest.approx(G.iou(a[1], b[2]))


def test_normalize_roundtrip(rng):
    b = random_boxes(rng, 4, 0, 32, 1)
    np.testing.assert_allclose(G.denormalize_boxes(G.normalize_boxes(b, 32, 24), 32, 24), b)


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = G.iou(a, b)
    assert v == pytest.approx(G.iou(b, a), abs=1e-12)
    assert 0.0 <= v <= 1.0 + 1e-12


@given(boxes(), boxes())
def test_giou_at_most_iou(a, b):
    assert G.giou(a, b) <= G.iou(a, b) + 1e-12
    assert -1.0 < G.giou(a, b) <= 1.0 + 1e-12


@given(boxes())
def test_giou_equals_iou_when_hull_is_union(a):
    inner = np.array([a[0], a[1], (a[0] + a[2]) / 2, a[3]])
    assert G.giou(a, inner) == pytest.approx(G.iou(a, inner), abs=1e-12)


@given(boxes(), boxes(), st.floats(-20, 20), st.floats(-20, 20), st.floats(0.1, 10))
def test_giou_translation_scale_invariant(a, b, dx, dy, s):
    shift = np.array([dx, dy, dx, dy])
    ref = G.giou(a, b)
    assert G.giou(a + shift, b + shift) == pytest.approx(ref, abs=1e-9)
    assert G.giou(a * s, b * s) == pytest.approx(ref, abs=1e-9)


def _params_fd(fn, params, target):
    def loss(p):
        val, grad = fn(p, target)
        return float(val), grad

    return output_grad_check(loss, params)


def test_giou_grad_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(200):
        target = random_boxes(rng, 1)[0]
        params = np.array([rng.uniform(0, 1), rng.uniform(0, 1), rng.normal(-1, 0.5), rng.normal(-1, 0.5)])
        worst = max(worst, _params_fd(G.giou_loss_grad, params, target))
    assert worst < 1e-4


def test_smooth_l1_grad_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(200):
        target = random_boxes(rng, 1)[0]
        params = np.array([rng.uniform(0, 1), rng.uniform(0, 1), rng.normal(0, 1), rng.normal(0, 1)])
        d = np.abs(G.decode_params(params) - target)
        if np.any(np.abs(d - 1.0) < 1e-3):
            continue  # kink band
        worst = max(worst, _params_fd(G.box_l1_loss_grad, params, target))
    assert worst < 1e-4
