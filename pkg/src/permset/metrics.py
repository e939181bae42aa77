"""Evaluation protocols: multi-label P/R/F1, cardinality error, detection
AP / best-F1 / log-average miss rate, and CAPTCHA accuracy.

Conventions: a 0/0 precision or recall is 0; per-class averages skip classes
that never occur in the ground truth.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .assignment import hungarian
from .geometry import pairwise_iou

MR_REFERENCE_FPPI = np.logspace(-2.0, 0.0, 9)
MR_FLOOR = 1e-4


def _ratio(num, den) -> float:
    return float(num) / float(den) if den else 0.0


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if (p + r) > 0 else 0.0


@dataclass
class EvalReport:
    """Flat bag of named metrics; absent metrics stay ``None``."""

    c_p: Optional[float] = None
    c_r: Optional[float] = None
    c_f1: Optional[float] = None
    o_p: Optional[float] = None
    o_r: Optional[float] = None
    o_f1: Optional[float] = None
    i_p: Optional[float] = None
    i_r: Optional[float] = None
    i_f1: Optional[float] = None
    ap: Optional[float] = None
    best_f1: Optional[float] = None
    mr: Optional[float] = None
    set_p: Optional[float] = None
    set_r: Optional[float] = None
    set_f1: Optional[float] = None
    accuracy: Optional[float] = None
    card_mae: Optional[float] = None
    card_mae_std: Optional[float] = None

    def items(self):
        return [(k, v) for k, v in asdict(self).items() if v is not None]

    def merge(self, other: "EvalReport") -> "EvalReport":
        d = asdict(self)
        d.update({k: v for k, v in asdict(other).items() if v is not None})
        return EvalReport(**d)

    def to_json(self) -> str:
        return json.dumps(dict(self.items()), sort_keys=True)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "value"])
            for k, v in self.items():
                w.writerow([k, repr(float(v))])


# ------------------------------------------------------------ multi-label

def prf_multilabel(preds: Sequence, gts: Sequence, num_labels: int) -> EvalReport:
    if len(preds) != len(gts):
        raise ValueError("prediction and ground-truth lists differ in length")
    tp = np.zeros(num_labels)
    fp = np.zeros(num_labels)
    fn = np.zeros(num_labels)
    ip, ir = [], []
    for pred, gt in zip(preds, gts):
        pred, gt = set(int(v) for v in pred), set(int(v) for v in gt)
        hit = pred & gt
        for c in hit:
            tp[c] += 1
        for c in pred - gt:
            fp[c] += 1
        for c in gt - pred:
            fn[c] += 1
        ip.append(_ratio(len(hit), len(pred)))
        ir.append(_ratio(len(hit), len(gt)))
    present = (tp + fn) > 0
    cls_p = [_ratio(tp[c], tp[c] + fp[c]) for c in range(num_labels) if present[c]]
    cls_r = [_ratio(tp[c], tp[c] + fn[c]) for c in range(num_labels) if present[c]]
    c_p = float(np.mean(cls_p)) if cls_p else 0.0
    c_r = float(np.mean(cls_r)) if cls_r else 0.0
    o_p = _ratio(tp.sum(), tp.sum() + fp.sum())
    o_r = _ratio(tp.sum(), tp.sum() + fn.sum())
    i_p = float(np.mean(ip)) if ip else 0.0
    i_r = float(np.mean(ir)) if ir else 0.0
    return EvalReport(
        c_p=c_p, c_r=c_r, c_f1=f1_score(c_p, c_r),
        o_p=o_p, o_r=o_r, o_f1=f1_score(o_p, o_r),
        i_p=i_p, i_r=i_r, i_f1=f1_score(i_p, i_r),
    )


def cardinality_mae(pred_m, gt_m) -> tuple[float, float]:
    """Mean and population standard deviation of ``|m* - m|``."""
    a = np.asarray(pred_m, dtype=float)
    b = np.asarray(gt_m, dtype=float)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    err = np.abs(a - b)
    if err.size == 0:
        return 0.0, 0.0
    return float(err.mean()), float(err.std())


# --------------------------------------------------------------- detection

def _greedy_match(preds, gts, iou_thresh):
    """Score-descending greedy matching across images.

    Returns ``(scores, is_tp)`` for every prediction in processing order.
    Each prediction takes the highest-IoU still-unmatched ground truth of its
    image, if that IoU exceeds ``iou_thresh``.
    """
    flat = []
    for img, (boxes, scores) in enumerate(preds):
        for k, s in enumerate(np.asarray(scores, dtype=float).reshape(-1)):
            flat.append((-s, img, k))
    flat.sort()
    ious = [pairwise_iou(np.asarray(p[0]).reshape(-1, 4), np.asarray(g).reshape(-1, 4)) for p, g in zip(preds, gts)]
    taken = [np.zeros(len(np.asarray(g).reshape(-1, 4)), dtype=bool) for g in gts]
    scores, is_tp = [], []
    for neg_s, img, k in flat:
        row = ious[img][k] if ious[img].size else np.zeros(0)
        hit = False
        if row.size:
            cand = np.where(taken[img], -1.0, row)
            j = int(np.argmax(cand))
            if cand[j] > iou_thresh:
                taken[img][j] = True
                hit = True
        scores.append(-neg_s)
        is_tp.append(hit)
    return np.array(scores), np.array(is_tp, dtype=bool)


def pr_curve(preds, gts, iou_thresh: float = 0.5):
    """Precision, recall and false positives after each ranked prediction."""
    _, is_tp = _greedy_match(preds, gts, iou_thresh)
    n_gt = sum(len(np.asarray(g).reshape(-1, 4)) for g in gts)
    tp = np.cumsum(is_tp)
    fp = np.cumsum(~is_tp)
    precision = tp / np.maximum(tp + fp, 1)
    recall = tp / n_gt if n_gt else np.zeros_like(tp, dtype=float)
    return precision, recall, fp


def average_precision(precision, recall) -> float:
    """All-point interpolated AP (area under the monotone precision envelope)."""
    if len(precision) == 0:
        return 0.0
    mrec = np.concatenate([[0.0], recall, [recall[-1]]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def log_average_miss_rate(recall, fp, num_images: int) -> float:
    """Geometric mean of miss rates sampled at nine FPPI points in [1e-2, 1].

    At each reference FPPI the miss rate of the last operating point whose FPPI
    does not exceed it is used (1.0 if none does); values are clamped to
    [1e-4, 1] before averaging.
    """
    fppi = np.concatenate([[0.0], np.asarray(fp, dtype=float) / max(num_images, 1)])
    miss = np.concatenate([[1.0], 1.0 - np.asarray(recall, dtype=float)])
    samples = []
    for ref in MR_REFERENCE_FPPI:
        ok = np.where(fppi <= ref)[0]
        samples.append(miss[ok[-1]] if len(ok) else 1.0)
    samples = np.clip(samples, MR_FLOOR, 1.0)
    return float(np.exp(np.mean(np.log(samples))))


def detection_pr(preds, gts, iou_thresh: float = 0.5) -> EvalReport:
    """``preds`` is a list of ``(boxes (k, 4), scores (k,))`` per image and
    ``gts`` a list of ``(m, 4)`` box arrays."""
    if len(preds) != len(gts):
        raise ValueError("prediction and ground-truth lists differ in length")
    precision, recall, fp = pr_curve(preds, gts, iou_thresh)
    ap = average_precision(precision, recall)
    f1s = [f1_score(p, r) for p, r in zip(precision, recall)]
    best = max(f1s) if f1s else 0.0
    mr = log_average_miss_rate(recall, fp, len(gts))
    return EvalReport(ap=ap, best_f1=best, mr=mr)


def _match_count(pred_boxes, gt_boxes, iou_thresh) -> int:
    """Maximum number of (pred, gt) pairs with IoU above the threshold."""
    p = np.asarray(pred_boxes, dtype=float).reshape(-1, 4)
    g = np.asarray(gt_boxes, dtype=float).reshape(-1, 4)
    if len(p) == 0 or len(g) == 0:
        return 0
    ok = (pairwise_iou(g, p) > iou_thresh).astype(float)
    if len(g) > len(p):
        ok = ok.T
    res = hungarian(1.0 - ok)
    return int(round(ok.shape[0] - res.cost))


def set_prf(pred_sets, gt_sets, iou_thresh: float = 0.5) -> EvalReport:
    """Micro P/R/F1 of predicted box sets under optimal one-to-one matching."""
    tp = n_pred = n_gt = 0
    for p, g in zip(pred_sets, gt_sets):
        tp += _match_count(p, g, iou_thresh)
        n_pred += len(np.asarray(p).reshape(-1, 4))
        n_gt += len(np.asarray(g).reshape(-1, 4))
    prec, rec = _ratio(tp, n_pred), _ratio(tp, n_gt)
    return EvalReport(set_p=prec, set_r=rec, set_f1=f1_score(prec, rec))


def captcha_correct(pred_boxes, gt_boxes, iou_thresh: float = 0.5) -> bool:
    p = np.asarray(pred_boxes, dtype=float).reshape(-1, 4)
    g = np.asarray(gt_boxes, dtype=float).reshape(-1, 4)
    if len(p) != len(g):
        return False
    return _match_count(p, g, iou_thresh) == len(g)


def captcha_accuracy(pred_sets, gt_sets, iou_thresh: float = 0.5) -> float:
    if len(pred_sets) != len(gt_sets):
        raise ValueError("length mismatch")
    if not gt_sets:
        return 0.0
    hits = sum(captcha_correct(p, g, iou_thresh) for p, g in zip(pred_sets, gt_sets))
    return hits / len(gt_sets)
