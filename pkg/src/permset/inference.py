"""MAP set prediction from a network output.

The exact solver minimises, over cardinalities m = 0..M,

    J(m) = -log p(m) - m log U - sum of the m largest log existence scores

which only needs one sort and a prefix sum.  The approximate solver takes the
mode of p(m) and keeps the top-m slots.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import card_dist
from .assignment import SizeLimitError
from .card_dist import CardinalityHead
from .mathutil import log_sigmoid, sigmoid

MAX_BRUTE_SLOTS = 12


@dataclass(frozen=True)
class InferenceConfig:
    U: float = 1.0
    mode: str = "exact"

    def __post_init__(self):
        if not self.U > 0:
            raise ValueError(f"U must be positive, got {self.U}")
        if self.mode not in ("exact", "approx"):
            raise ValueError(f"mode must be 'exact' or 'approx', got {self.mode!r}")


@dataclass(frozen=True)
class SetElement:
    slot: int
    score: float
    state: Optional[tuple] = None
    label: Optional[int] = None


@dataclass
class PredictedSet:
    m: int
    elements: list = field(default_factory=list)

    @property
    def slots(self) -> list[int]:
        return [e.slot for e in self.elements]


def _descending(exist_logits) -> np.ndarray:
    z = np.asarray(exist_logits, dtype=float)
    return np.argsort(-z, kind="stable")


def _build(order, m, exist_logits, states) -> PredictedSet:
    z = np.asarray(exist_logits, dtype=float)
    scores = sigmoid(z)
    elems = []
    for s in order[:m]:
        state = None if states is None else tuple(float(v) for v in np.asarray(states)[s])
        elems.append(SetElement(int(s), float(scores[s]), state))
    return PredictedSet(int(m), elems)


def objective_by_cardinality(head: CardinalityHead, exist_logits, U: float) -> np.ndarray:
    """``J(m)`` for m = 0..M with slots taken in descending score order."""
    z = np.asarray(exist_logits, dtype=float)
    M = len(z)
    log_s = np.sort(log_sigmoid(z))[::-1]
    prefix = np.concatenate([[0.0], np.cumsum(log_s)])
    ms = np.arange(M + 1)
    log_p = card_dist.log_pmf(head.kind, head.alpha, ms)
    with np.errstate(invalid="ignore"):
        return -log_p - ms * math.log(U) - prefix


def exact_map(head: CardinalityHead, exist_logits, states=None, cfg: Optional[InferenceConfig] = None) -> PredictedSet:
    cfg = cfg or InferenceConfig()
    J = objective_by_cardinality(head, exist_logits, cfg.U)
    m = int(np.argmin(J))  # first minimiser -> smaller m on ties
    return _build(_descending(exist_logits), m, exist_logits, states)


def approx_map(head: CardinalityHead, exist_logits, states=None) -> PredictedSet:
    m = min(card_dist.card_map(head), len(np.asarray(exist_logits)))
    return _build(_descending(exist_logits), m, exist_logits, states)


def brute_force_map(head: CardinalityHead, exist_logits, states=None, cfg: Optional[InferenceConfig] = None) -> PredictedSet:
    """Direct minimisation over every (m, subset) pair (test oracle)."""
    cfg = cfg or InferenceConfig()
    z = np.asarray(exist_logits, dtype=float)
    M = len(z)
    if M > MAX_BRUTE_SLOTS:
        raise SizeLimitError(f"brute-force MAP limited to {MAX_BRUTE_SLOTS} slots")
    log_s = log_sigmoid(z)
    log_p = card_dist.log_pmf(head.kind, head.alpha, np.arange(M + 1))
    log_u = math.log(cfg.U)
    best, best_subset = math.inf, ()
    for m in range(M + 1):
        if not np.isfinite(log_p[m]):
            continue
        for subset in itertools.combinations(range(M), m):
            J = -log_p[m] - m * log_u - sum(log_s[s] for s in subset)
            if J < best:
                best, best_subset = J, subset
    order = sorted(best_subset, key=lambda s: (-z[s], s))
    return _build(np.array(order, dtype=np.int64), len(order), z, states)


def predict(out, layout, cfg: Optional[InferenceConfig] = None) -> PredictedSet:
    """Run inference on a single (unbatched) :class:`NetworkOutput`.

    Multi-class heads always use the approximate path (class-agnostic top-m*)
    and each element carries the arg-max class.
    """
    cfg = cfg or InferenceConfig()
    head = CardinalityHead(layout.card_kind, out.alpha, layout.max_card)
    states = out.states
    if cfg.mode == "exact" and out.cls is None:
        return exact_map(head, out.exist, states, cfg)
    pred = approx_map(head, out.exist, states)
    if out.cls is not None:
        labels = np.argmax(out.cls, axis=-1)
        pred.elements = [replace(e, label=int(labels[e.slot])) for e in pred.elements]
    return pred
