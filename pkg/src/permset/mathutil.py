"""Numerically stable scalar maps shared by the loss heads."""
import numpy as np


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    """log(1 + e^x)."""
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def log_sigmoid(x):
    return -softplus(-np.asarray(x, dtype=float))


def log_softmax(z, axis=-1):
    z = np.asarray(z, dtype=float)
    zmax = np.max(z, axis=axis, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    shifted = z - zmax
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(z, axis=-1):
    return np.exp(log_softmax(z, axis=axis))


def bce_with_logits(z, target):
    """Binary cross-entropy on logits and its gradient w.r.t. the logit."""
    z = np.asarray(z, dtype=float)
    return softplus(z) - target * z, sigmoid(z) - target
