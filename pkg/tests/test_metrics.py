import numpy as np
import pytest

from permset import metrics as Mx
from permset.geometry import iou

from conftest import random_boxes


def test_prf_perfect():
    r = Mx.prf_multilabel([{0, 1}, {2}], [{0, 1}, {2}], 3)
    assert all(v == 1.0 for k, v in r.items())


def test_prf_empty_predictions():
    r = Mx.prf_multilabel([set(), set()], [{0}, {1, 2}], 3)
    assert all(v == 0.0 for k, v in r.items())


def test_prf_hand_case():
    # labels a=0, b=1, c=2
    r = Mx.prf_multilabel([{0}, {1, 2}], [{0, 1}, {1}], 3)
    assert r.o_p == pytest.approx(2 / 3)
    assert r.o_r == pytest.approx(2 / 3)
    assert r.o_f1 == pytest.approx(2 / 3)
    # per class: a P=1 R=1; b P=1 R=1/2; c absent from gt -> skipped
    assert r.c_p == pytest.approx(1.0)
    assert r.c_r == pytest.approx(0.75)
    assert r.i_p == pytest.approx((1 + 0.5) / 2)
    assert r.i_r == pytest.approx((0.5 + 1) / 2)
    with pytest.raises(ValueError):
        Mx.prf_multilabel([{0}], [], 3)


def test_cardinality_mae():
    assert Mx.cardinality_mae([1, 2], [1, 2]) == (0.0, 0.0)
    mean, std = Mx.cardinality_mae([0, 1, 2, 5], [0, 2, 1, 3])
    assert mean == pytest.approx(1.0) and std == pytest.approx(0.70710678, abs=1e-8)
    assert Mx.cardinality_mae([3], [1])[1] == 0.0


def test_detection_perfect():
    gts = [np.array([[0, 0, 2, 2], [3, 3, 5, 5]]), np.array([[1, 1, 4, 4]])]
    preds = [(g, np.ones(len(g))) for g in gts]
    r = Mx.detection_pr(preds, gts)
    assert r.ap == 1.0 and r.best_f1 == 1.0
    # the miss rate is clamped at its floor before the log-average
    assert r.mr == pytest.approx(Mx.MR_FLOOR)


def test_detection_hand_case():
    gt = [np.array([[0, 0, 2, 2]])]
    preds = [(np.array([[0, 0, 2, 2], [5, 5, 6, 6]]), np.array([0.9, 0.8]))]
    p, r, fp = Mx.pr_curve(preds, gt)
    np.testing.assert_allclose(p, [1.0, 0.5])
    np.testing.assert_allclose(r, [1.0, 1.0])
    rep = Mx.detection_pr(preds, gt)
    assert rep.ap == 1.0 and rep.best_f1 == 1.0


def test_miss_rate_no_detections():
    gts = [np.array([[0, 0, 1, 1]])]
    assert Mx.detection_pr([(np.zeros((0, 4)), np.zeros(0))], gts).mr == 1.0


def reference_ap(preds, gts, thresh=0.5):
    """Quadratic-time reference: rank all detections, greedy-match, then
    integrate the precision envelope at each recall step."""
    flat = sorted(
        ((s, i, k) for i, (b, sc) in enumerate(preds) for k, s in enumerate(sc)), key=lambda t: (-t[0], t[1], t[2])
    )
    used = [set() for _ in gts]
    hits = []
    for s, i, k in flat:
        best, best_j = -1.0, None
        for j, g in enumerate(gts[i]):
            if j in used[i]:
                continue
            v = iou(preds[i][0][k], g)
            if v > best:
                best, best_j = v, j
        if best_j is not None and best > thresh:
            used[i].add(best_j)
            hits.append(True)
        else:
            hits.append(False)
    n_gt = sum(len(g) for g in gts)
    tp = fp = 0
    points = []
    for h in hits:
        tp += h
        fp += not h
        points.append((tp / n_gt, tp / (tp + fp)))
    ap, prev_r = 0.0, 0.0
    for idx, (r, _) in enumerate(points):
        if r > prev_r:
            ap += (r - prev_r) * max(p for rr, p in points[idx:])
            prev_r = r
    return ap


def random_case(rng):
    n_img = int(rng.integers(1, 4))
    gts, preds = [], []
    for _ in range(n_img):
        g = random_boxes(rng, int(rng.integers(0, 4)), 0, 10, 1)
        jitter = random_boxes(rng, int(rng.integers(0, 4)), 0, 10, 1)
        near = g[: int(rng.integers(0, len(g) + 1))] + rng.normal(scale=0.3, size=(1, 4)) if len(g) else np.zeros((0, 4))
        near[:, 2:] = np.maximum(near[:, 2:], near[:, :2] + 0.1)
        boxes = np.concatenate([near, jitter])
        gts.append(g)
        preds.append((boxes, rng.uniform(size=len(boxes))))
    return preds, gts


def test_ap_matches_reference(rng):
    checked = 0
    while checked < 200:
        preds, gts = random_case(rng)
        if sum(len(g) for g in gts) == 0:
            continue
        assert Mx.detection_pr(preds, gts).ap == pytest.approx(reference_ap(preds, gts), abs=1e-12)
        checked += 1


def test_detection_metrics_order_invariant(rng):
    for _ in range(50):
        preds, gts = random_case(rng)
        base = Mx.detection_pr(preds, gts)
        order = rng.permutation(len(gts))
        shuffled_preds = []
        for i in order:
            b, s = preds[i]
            p = rng.permutation(len(s))
            shuffled_preds.append((b[p], s[p]))
        shuffled_gts = [gts[i][rng.permutation(len(gts[i]))] for i in order]
        other = Mx.detection_pr(shuffled_preds, shuffled_gts)
        assert dict(other.items()) == pytest.approx(dict(base.items()), abs=1e-12)


def test_captcha_accuracy_cases():
    g = np.array([[0, 0, 10, 10], [20, 0, 30, 10]])
    assert Mx.captcha_accuracy([g], [g]) == 1.0
    assert Mx.captcha_accuracy([np.zeros((0, 4))], [np.zeros((0, 4))]) == 1.0
    extra = np.vstack([g, [[40, 0, 50, 10]]])
    assert Mx.captcha_accuracy([extra], [g]) == 0.0
    # horizontal shift d gives IoU (10 - d) / (10 + d); d = 5.5 / 1.45 makes it 0.45
    d = 5.5 / 1.45
    near_miss = np.array([[0, 0, 10, 10], [20 + d, 0, 30 + d, 10]])
    assert iou(near_miss[1], g[1]) == pytest.approx(0.45)
    good = g[::-1]
    assert Mx.captcha_accuracy([g, near_miss, good], [g, g, g]) == pytest.approx(2 / 3)


def test_set_prf():
    g = np.array([[0, 0, 10, 10], [20, 0, 30, 10]])
    r = Mx.set_prf([g[:1]], [g])
    assert r.set_p == 1.0 and r.set_r == 0.5 and r.set_f1 == pytest.approx(2 / 3)


def test_report_serialisation(tmp_path):
    r = Mx.EvalReport(ap=0.5, card_mae=1.0)
    assert r.to_json() == '{"ap": 0.5, "card_mae": 1.0}'
    r.write_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines() == ["name,value", "ap,0.5", "card_mae,1.0"]
    assert r.merge(Mx.EvalReport(mr=0.1)).mr == 0.1
