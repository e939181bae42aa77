"""Cardinality distributions p(m | x, w) and their negative log-likelihoods.

Three heads are supported, each driven by raw (pre-activation) network outputs
``alpha``:

* ``categorical``: ``max_card + 1`` logits, softmax.
* ``poisson``: rate ``lam = softplus(alpha[0])``.
* ``negative_binomial``: ``r = softplus(alpha[0])``, ``p = sigmoid(alpha[1])``
  with pmf ``C(m + r - 1, m) (1 - p)^r p^m``.

Binomial and Dirichlet-categorical heads would slot in by adding a branch to
:func:`card_nll_batch` and :func:`log_pmf`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .mathutil import log_sigmoid, log_softmax, sigmoid, softmax, softplus

KINDS = ("categorical", "poisson", "negative_binomial")


def num_params(kind: str, max_card: int) -> int:
    if kind == "categorical":
        return max_card + 1
    if kind == "poisson":
        return 1
    if kind == "negative_binomial":
        return 2
    raise ValueError(f"unknown cardinality head {kind!r}")


@dataclass
class CardinalityHead:
    kind: str
    alpha: np.ndarray
    max_card: int

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        expected = num_params(self.kind, self.max_card)
        if self.alpha.shape != (expected,):
            raise ValueError(
                f"{self.kind} head with max_card={self.max_card} needs {expected} params, "
                f"got shape {self.alpha.shape}"
            )

    @classmethod
    def from_probs(cls, probs) -> "CardinalityHead":
        """Categorical head with the given probabilities (zeros become -inf logits)."""
        p = np.asarray(probs, dtype=float)
        with np.errstate(divide="ignore"):
            return cls("categorical", np.log(p), len(p) - 1)

    @classmethod
    def poisson(cls, rate: float, max_card: int) -> "CardinalityHead":
        # inverse softplus
        return cls("poisson", np.array([rate + math.log(-math.expm1(-rate))]), max_card)

    def log_pmf(self) -> np.ndarray:
        return log_pmf(self.kind, self.alpha, np.arange(self.max_card + 1))

    def probs(self) -> np.ndarray:
        return np.exp(self.log_pmf())


def _poisson_rate(alpha):
    return softplus(alpha[..., 0])


def log_pmf(kind: str, alpha, ms) -> np.ndarray:
    """log p(m) for each m in ``ms`` (single head, 1-D alpha)."""
    alpha = np.asarray(alpha, dtype=float)
    ms = np.asarray(ms)
    if kind == "categorical":
        lp = log_softmax(alpha)
        out = np.full(ms.shape, -np.inf)
        ok = (ms >= 0) & (ms < len(lp))
        out[ok] = lp[ms[ok]]
        return out
    ms = ms.astype(float)
    if kind == "poisson":
        lam = float(_poisson_rate(alpha))
        return ms * math.log(lam) - lam - gammaln(ms + 1)
    if kind == "negative_binomial":
        r = float(softplus(alpha[0]))
        log_p = float(log_sigmoid(alpha[1]))
        log_1mp = float(log_sigmoid(-alpha[1]))
        return gammaln(ms + r) - gammaln(r) - gammaln(ms + 1) + r * log_1mp + ms * log_p
    raise ValueError(f"unknown cardinality head {kind!r}")


def card_nll_batch(kind: str, alpha, m):
    """Vectorised NLL over a batch.

    ``alpha`` is (B, k), ``m`` is (B,) integers.  Returns ``(nll (B,), grad (B, k))``
    with the gradient taken w.r.t. the raw ``alpha``.
    """
    alpha = np.asarray(alpha, dtype=float)
    m = np.asarray(m)
    B = alpha.shape[0]
    if kind == "categorical":
        if np.any(m >= alpha.shape[1]) or np.any(m < 0):
            raise ValueError(f"cardinality outside [0, {alpha.shape[1] - 1}]: {m}")
        lp = log_softmax(alpha)
        rows = np.arange(B)
        nll = -lp[rows, m]
        grad = np.exp(lp)
        grad[rows, m] -= 1.0
        return nll, grad
    mf = m.astype(float)
    if kind == "poisson":
        a = alpha[:, 0]
        lam = softplus(a)
        nll = lam - mf * np.log(lam) + gammaln(mf + 1)
        grad = ((1.0 - mf / lam) * sigmoid(a))[:, None]
        return nll, grad
    if kind == "negative_binomial":
        a0, a1 = alpha[:, 0], alpha[:, 1]
        r = softplus(a0)
        log_p = log_sigmoid(a1)
        log_1mp = log_sigmoid(-a1)
        nll = -gammaln(mf + r) + gammaln(r) + gammaln(mf + 1) - r * log_1mp - mf * log_p
        d_r = -digamma(mf + r) + digamma(r) - log_1mp
        p = sigmoid(a1)
        grad = np.stack([d_r * sigmoid(a0), r * p - mf * (1.0 - p)], axis=-1)
        return nll, grad
    raise ValueError(f"unknown cardinality head {kind!r}")


def card_nll(head: CardinalityHead, m: int):
    """Negative log-likelihood of cardinality ``m`` and its gradient in ``alpha``."""
    if head.kind == "categorical" and m > head.max_card:
        raise ValueError(f"cardinality {m} exceeds max_card {head.max_card}")
    nll, grad = card_nll_batch(head.kind, head.alpha[None, :], np.array([m]))
    return float(nll[0]), grad[0]


def card_map(head: CardinalityHead) -> int:
    """Mode of the cardinality distribution; ties go to the smaller m."""
    if head.kind == "categorical":
        lp = log_softmax(head.alpha)
        return int(np.argmax(lp))  # argmax returns the first maximiser
    if head.kind == "poisson":
        # pmf increases while m < lam - 1
        turn = float(_poisson_rate(head.alpha)) - 1.0
    elif head.kind == "negative_binomial":
        r = float(softplus(head.alpha[0]))
        p = float(sigmoid(head.alpha[1:2])[0])
        # pmf increases while m < (p r - 1) / (1 - p)
        turn = (p * r - 1.0) / (1.0 - p)
    else:
        raise ValueError(f"unknown cardinality head {head.kind!r}")
    mode = max(0, math.ceil(turn))
    return min(mode, head.max_card)


def categorical_probs(alpha) -> np.ndarray:
    return softmax(alpha)
