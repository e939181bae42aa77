"""Axis-aligned box arithmetic and the box-regression losses.

Boxes are stored corner-form ``(x1, y1, x2, y2)``.  Predicted boxes come out of
the network as ``(cx, cy, log w, log h)`` so width and height stay positive;
:func:`decode_params` maps them to corners and every loss is evaluated on the
decoded corners.  All array functions broadcast over leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AABox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates {vals}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"inverted box {vals}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=float)


def _as_corners(box) -> np.ndarray:
    if isinstance(box, AABox):
        return box.as_array()
    return np.asarray(box, dtype=float)


def _safe_div(num, den):
    den = np.asarray(den, dtype=float)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _overlap_terms(a: np.ndarray, b: np.ndarray):
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    iw = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    ih = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = area_a + area_b - inter
    cw = np.maximum(a[..., 2], b[..., 2]) - np.minimum(a[..., 0], b[..., 0])
    ch = np.maximum(a[..., 3], b[..., 3]) - np.minimum(a[..., 1], b[..., 1])
    hull = cw * ch
    return inter, union, hull


def iou_array(a, b) -> np.ndarray:
    """Pairwise-broadcast IoU of corner boxes; 0 where the union is empty."""
    inter, union, _ = _overlap_terms(_as_corners(a), _as_corners(b))
    return _safe_div(inter, union)


def giou_array(a, b) -> np.ndarray:
    inter, union, hull = _overlap_terms(_as_corners(a), _as_corners(b))
    return _safe_div(inter, union) - _safe_div(hull - union, hull)


def iou(a, b) -> float:
    """Jaccard overlap of two boxes."""
    return float(iou_array(a, b))


def giou(a, b) -> float:
    """IoU minus the fraction of the enclosing hull not covered by the union."""
    return float(giou_array(a, b))


def pairwise_iou(a, b) -> np.ndarray:
    """IoU matrix between box lists ``a`` (n, 4) and ``b`` (k, 4)."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    return iou_array(a[:, None, :], b[None, :, :])


def decode_params(params) -> np.ndarray:
    """``(cx, cy, log w, log h)`` -> ``(x1, y1, x2, y2)``."""
    p = np.asarray(params, dtype=float)
    half_w = 0.5 * np.exp(p[..., 2])
    half_h = 0.5 * np.exp(p[..., 3])
    return np.stack(
        [p[..., 0] - half_w, p[..., 1] - half_h, p[..., 0] + half_w, p[..., 1] + half_h],
        axis=-1,
    )


def encode_corners(corners) -> np.ndarray:
    """Inverse of :func:`decode_params`; boxes must have positive extent."""
    c = np.asarray(corners, dtype=float)
    w = c[..., 2] - c[..., 0]
    h = c[..., 3] - c[..., 1]
    return np.stack(
        [c[..., 0] + 0.5 * w, c[..., 1] + 0.5 * h, np.log(w), np.log(h)], axis=-1
    )


def corner_grad_to_params(params, grad_corners) -> np.ndarray:
    """Chain a gradient w.r.t. decoded corners back to the box parameters."""
    p = np.asarray(params, dtype=float)
    g = np.asarray(grad_corners, dtype=float)
    half_w = 0.5 * np.exp(p[..., 2])
    half_h = 0.5 * np.exp(p[..., 3])
    return np.stack(
        [
            g[..., 0] + g[..., 2],
            g[..., 1] + g[..., 3],
            (g[..., 2] - g[..., 0]) * half_w,
            (g[..., 3] - g[..., 1]) * half_h,
        ],
        axis=-1,
    )


def giou_loss_corners(pred, target):
    """``1 - GIoU`` and its gradient w.r.t. the predicted corners.

    The gradient is the one-sided derivative at the kinks of min/max; at exact
    coordinate ties the branch that treats ``pred`` as the active side is taken.
    """
    a = np.asarray(pred, dtype=float)
    b = np.asarray(target, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    pw = a[..., 2] - a[..., 0]
    ph = a[..., 3] - a[..., 1]
    inter, union, hull = _overlap_terms(a, b)
    iw = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    ih = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    cw = np.maximum(a[..., 2], b[..., 2]) - np.minimum(a[..., 0], b[..., 0])
    ch = np.maximum(a[..., 3], b[..., 3]) - np.minimum(a[..., 1], b[..., 1])

    iou_v = _safe_div(inter, union)
    loss = 1.0 - (iou_v - _safe_div(hull - union, hull))

    # G = I/Un - 1 + Un/C, with Un = A_pred + A_tgt - I
    d_inter = _safe_div(1.0, union)
    d_union = -_safe_div(inter, union**2) + _safe_div(1.0, hull)
    d_hull = -_safe_div(union, hull**2)

    overlapping = (iw > 0) & (ih > 0)
    diw = np.stack(
        [-1.0 * (a[..., 0] >= b[..., 0]), np.zeros_like(pw), (a[..., 2] <= b[..., 2]), np.zeros_like(pw)],
        axis=-1,
    ).astype(float)
    dih = np.stack(
        [np.zeros_like(ph), -1.0 * (a[..., 1] >= b[..., 1]), np.zeros_like(ph), (a[..., 3] <= b[..., 3])],
        axis=-1,
    ).astype(float)
    dI = (ih[..., None] * diw + iw[..., None] * dih) * overlapping[..., None]

    dA = np.stack([-ph, -pw, ph, pw], axis=-1)

    dcw = np.stack(
        [-1.0 * (a[..., 0] <= b[..., 0]), np.zeros_like(pw), (a[..., 2] >= b[..., 2]), np.zeros_like(pw)],
        axis=-1,
    ).astype(float)
    dch = np.stack(
        [np.zeros_like(ph), -1.0 * (a[..., 1] <= b[..., 1]), np.zeros_like(ph), (a[..., 3] >= b[..., 3])],
        axis=-1,
    ).astype(float)
    dC = ch[..., None] * dcw + cw[..., None] * dch

    dG = (
        d_inter[..., None] * dI
        + d_union[..., None] * (dA - dI)
        + d_hull[..., None] * dC
    )
    return loss, -dG


def giou_loss_grad(pred_params, target):
    """GIoU loss of a parameterised prediction against a corner-form target.

    ``pred_params`` is ``(cx, cy, log w, log h)``.  Returns ``(loss, grad)``
    with ``grad`` taken w.r.t. ``pred_params``.
    """
    params = np.asarray(pred_params, dtype=float)
    loss, g_corners = giou_loss_corners(decode_params(params), _as_corners(target))
    return loss, corner_grad_to_params(params, g_corners)


def smooth_l1(pred, target, delta: float = 1.0):
    """Huber-form smooth-L1 summed over the last axis, with its gradient.

    Per coordinate: ``0.5 d^2 / delta`` when ``|d| < delta`` else
    ``|d| - 0.5 delta``.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape[-1:] != target.shape[-1:]:
        raise ValueError(f"length mismatch: {pred.shape} vs {target.shape}")
    if delta <= 0:
        raise ValueError("delta must be positive")
    d = pred - target
    ad = np.abs(d)
    quad = ad < delta
    per = np.where(quad, 0.5 * d * d / delta, ad - 0.5 * delta)
    grad = np.where(quad, d / delta, np.sign(d))
    return per.sum(axis=-1), grad


def box_l1_loss_grad(pred_params, target, delta: float = 1.0):
    """Smooth-L1 between decoded predicted corners and target corners."""
    params = np.asarray(pred_params, dtype=float)
    loss, g_corners = smooth_l1(decode_params(params), _as_corners(target), delta)
    return loss, corner_grad_to_params(params, g_corners)


def normalize_boxes(boxes, width: float, height: float) -> np.ndarray:
    """Scale pixel-space corner boxes to the unit canvas."""
    b = np.asarray(boxes, dtype=float).reshape(-1, 4)
    return b / np.array([width, height, width, height], dtype=float)


def denormalize_boxes(boxes, width: float, height: float) -> np.ndarray:
    b = np.asarray(boxes, dtype=float).reshape(-1, 4)
    return b * np.array([width, height, width, height], dtype=float)
