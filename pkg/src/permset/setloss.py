"""Per-instance matching and the three composite training losses.

Scenario 1 trains against a fixed target order.  Scenario 3 matches ground
truth to slots with the Hungarian method on the summed state loss, then
back-propagates with that matching frozen.  Scenario 2 additionally scores a
categorical distribution over the ``M!`` full slot permutations and picks the
permutation minimising permutation cross-entropy plus state loss.

All batch functions take a batched :class:`NetworkOutput` (leading axis B) and
a list of :class:`GroundTruthSet`.
"""
from __future__ import annotations

import csv
import json
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import card_dist, geometry
from .assignment import AssignmentResult, all_permutations, hungarian, lehmer_decode
from .mathutil import bce_with_logits, log_softmax
from .network import NetworkOutput

_PAD_BOX = np.array([0.0, 0.0, 1.0, 1.0])


@dataclass
class GroundTruthSet:
    """Unordered target set.

    ``classes`` holds label ids (tagging) or object classes (detection);
    ``boxes`` holds unit-canvas corner boxes for detection and is ``None`` for
    tagging.  Storage order carries no meaning for scenarios 2 and 3.
    """

    classes: np.ndarray
    boxes: Optional[np.ndarray] = None

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        if self.boxes is not None:
            self.boxes = np.asarray(self.boxes, dtype=float).reshape(-1, 4)
            if len(self.boxes) != len(self.classes):
                raise ValueError("boxes and classes differ in length")

    @property
    def m(self) -> int:
        return len(self.classes)

    def take(self, order) -> "GroundTruthSet":
        order = np.asarray(order, dtype=np.int64)
        return GroundTruthSet(self.classes[order], None if self.boxes is None else self.boxes[order])

    def shuffled(self, rng) -> "GroundTruthSet":
        return self.take(rng.permutation(self.m))

    def canonical_order(self) -> np.ndarray:
        """Storage-independent element order: by class, then a content hash.

        The hash makes ties within a class carry no geometric information, so a
        permutation distribution can only pick up order structure that lives in
        the class identities.
        """
        keys = []
        for j in range(self.m):
            h = 0
            if self.boxes is not None:
                h = zlib.crc32(np.round(self.boxes[j], 9).tobytes())
            keys.append((int(self.classes[j]), h, j))
        return np.array([k[2] for k in sorted(keys)], dtype=np.int64)

    def canonical(self) -> "GroundTruthSet":
        return self.take(self.canonical_order())


@dataclass
class LossConfig:
    w_l1: float = 1.0
    w_giou: float = 1.0
    w_cls: float = 1.0
    noobj: float = 0.5
    delta: float = 1.0


@dataclass
class LossResult:
    total: np.ndarray
    card: np.ndarray
    state: np.ndarray
    perm: np.ndarray
    grad: NetworkOutput


def _batched(out: NetworkOutput) -> NetworkOutput:
    if out.exist.ndim == 1:
        expand = lambda a: None if a is None else a[None]
        return NetworkOutput(expand(out.alpha), expand(out.states), expand(out.exist), expand(out.cls), expand(out.perm))
    return out


def _pad_targets(gts: Sequence[GroundTruthSet]):
    K = max([g.m for g in gts] + [1])
    B = len(gts)
    boxes = np.tile(_PAD_BOX, (B, K, 1))
    classes = np.zeros((B, K), dtype=np.int64)
    for b, g in enumerate(gts):
        if g.m:
            classes[b, : g.m] = g.classes
            if g.boxes is not None:
                boxes[b, : g.m] = g.boxes
    return boxes, classes


def batch_cost_matrices(out: NetworkOutput, gts: Sequence[GroundTruthSet], cfg: LossConfig) -> list[np.ndarray]:
    """Pairwise state-loss matrices, one (m_b, M) array per instance."""
    out = _batched(out)
    B, M = out.exist.shape
    tboxes, tcls = _pad_targets(gts)
    K = tboxes.shape[1]
    exist_cost, _ = bce_with_logits(out.exist, 1.0)  # (B, M)
    cost = np.broadcast_to(exist_cost[:, None, :], (B, K, M)).copy()
    if out.states is not None:
        pred = out.states[:, None, :, :]  # (B, 1, M, 4)
        tgt = tboxes[:, :, None, :]  # (B, K, 1, 4)
        if cfg.w_l1:
            l1, _ = geometry.box_l1_loss_grad(pred, tgt, cfg.delta)
            cost += cfg.w_l1 * l1
        if cfg.w_giou:
            gl, _ = geometry.giou_loss_corners(geometry.decode_params(pred), tgt)
            cost += cfg.w_giou * gl
    if out.cls is not None and cfg.w_cls:
        lp = log_softmax(out.cls)  # (B, M, C)
        # -log p(class_j | slot sigma)
        ce = -lp[np.arange(B)[:, None, None], np.arange(M)[None, None, :], tcls[:, :, None]]
        cost += cfg.w_cls * ce
    return [cost[b, : g.m] for b, g in enumerate(gts)]


def build_cost_matrix(out: NetworkOutput, gt: GroundTruthSet, cfg: LossConfig) -> np.ndarray:
    return batch_cost_matrices(out, [gt], cfg)[0]


def matching_costs(out: NetworkOutput, gts: Sequence[GroundTruthSet], cfg: LossConfig) -> list[np.ndarray]:
    """Cost matrices whose optimal injection minimises the full composite loss.

    Matching slot ``s`` also removes its no-object term ``noobj * BCE(z_s, 0)``
    from the loss, so that amount is subtracted from column ``s``.
    """
    out = _batched(out)
    costs = batch_cost_matrices(out, gts, cfg)
    if not cfg.noobj:
        return costs
    absent, _ = bce_with_logits(out.exist, 0.0)
    return [c - cfg.noobj * absent[b][None, :] for b, c in enumerate(costs)]


def sample_permutation_s3(cost) -> AssignmentResult:
    return hungarian(cost)


def sample_permutation_s2(cost, perm_logits, m: Optional[int] = None) -> AssignmentResult:
    """Exact argmin over full slot permutations of perm-CE + state loss.

    Element ``j`` of the ground truth goes to slot ``perm[j]``; the tail of the
    permutation orders the unmatched slots.  Ties go to the smallest Lehmer
    index.  ``cost`` on the result is the state-loss part only.
    """
    cost = np.asarray(cost, dtype=float)
    m = cost.shape[0] if m is None else m
    M = cost.shape[1]
    logits = np.asarray(perm_logits, dtype=float)
    table = all_permutations(M)
    if logits.shape != (len(table),):
        raise ValueError(f"need {len(table)} permutation logits, got {logits.shape}")
    state = cost[np.arange(m)[None, :], table[:, :m]].sum(axis=1) if m else np.zeros(len(table))
    objective = -log_softmax(logits) + state
    idx = int(np.argmin(objective))
    return AssignmentResult(tuple(int(s) for s in table[idx]), float(state[idx]), lehmer=idx)


def composite_loss(
    out: NetworkOutput,
    gts: Sequence[GroundTruthSet],
    assignments: Sequence[Sequence[int]],
    card_kind: str,
    cfg: LossConfig,
    noobj: Optional[float] = None,
    perm_targets: Optional[Sequence[int]] = None,
) -> LossResult:
    """Card NLL + matched state losses + weighted unmatched no-object BCE
    (+ permutation CE when ``perm_targets`` is given), per instance.

    ``assignments[b][j]`` is the slot for ground-truth element ``j``.  The
    assignment is a constant here: no gradient flows through the matching.
    """
    out = _batched(out)
    B, M = out.exist.shape
    noobj = cfg.noobj if noobj is None else noobj
    grad = out.zeros_like()

    ms = np.array([g.m for g in gts], dtype=np.int64)
    card, grad.alpha[...] = card_nll_rows(card_kind, out.alpha, ms)

    matched = np.zeros((B, M), dtype=bool)
    rows, slots, tgt_boxes, tgt_cls = [], [], [], []
    for b, (g, a) in enumerate(zip(gts, assignments)):
        a = np.asarray(a, dtype=np.int64)[: g.m]
        if len(a) != g.m:
            raise ValueError(f"instance {b}: assignment covers {len(a)} of {g.m} elements")
        if len(set(a.tolist())) != len(a):
            raise ValueError(f"instance {b}: assignment is not injective")
        matched[b, a] = True
        rows.append(np.full(g.m, b))
        slots.append(a)
        tgt_cls.append(g.classes)
        if out.states is not None:
            tgt_boxes.append(g.boxes)
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    slots = np.concatenate(slots) if slots else np.zeros(0, dtype=np.int64)
    state = np.zeros(B)

    if len(rows):
        e_loss, e_grad = bce_with_logits(out.exist[rows, slots], 1.0)
        np.add.at(state, rows, e_loss)
        np.add.at(grad.exist, (rows, slots), e_grad)
        if out.states is not None:
            pred = out.states[rows, slots]
            tgt = np.concatenate(tgt_boxes)
            if cfg.w_l1:
                l, g = geometry.box_l1_loss_grad(pred, tgt, cfg.delta)
                np.add.at(state, rows, cfg.w_l1 * l)
                np.add.at(grad.states, (rows, slots), cfg.w_l1 * g)
            if cfg.w_giou:
                l, g = geometry.giou_loss_grad(pred, tgt)
                np.add.at(state, rows, cfg.w_giou * l)
                np.add.at(grad.states, (rows, slots), cfg.w_giou * g)
        if out.cls is not None and cfg.w_cls:
            c = np.concatenate(tgt_cls)
            lp = log_softmax(out.cls[rows, slots])
            idx = np.arange(len(rows))
            np.add.at(state, rows, -cfg.w_cls * lp[idx, c])
            g = np.exp(lp)
            g[idx, c] -= 1.0
            np.add.at(grad.cls, (rows, slots), cfg.w_cls * g)

    if noobj:
        z = out.exist
        e_loss, e_grad = bce_with_logits(z, 0.0)
        unmatched = ~matched
        state += noobj * np.where(unmatched, e_loss, 0.0).sum(axis=1)
        grad.exist += noobj * np.where(unmatched, e_grad, 0.0)

    perm = np.zeros(B)
    if perm_targets is not None:
        lp = log_softmax(out.perm)
        t = np.asarray(perm_targets, dtype=np.int64)
        perm = -lp[np.arange(B), t]
        grad.perm[...] = np.exp(lp)
        grad.perm[np.arange(B), t] -= 1.0

    return LossResult(card + state + perm, card, state, perm, grad)


def card_nll_rows(kind: str, alpha, ms):
    if kind == "categorical" and np.any(ms > alpha.shape[-1] - 1):
        raise ValueError(f"ground truth cardinality exceeds max_card {alpha.shape[-1] - 1}")
    return card_dist.card_nll_batch(kind, alpha, ms)


def fixed_assignment(gt: GroundTruthSet, task: str) -> np.ndarray:
    """Scenario-1 targets: label id for tagging, storage position for boxes."""
    if task == "tagging":
        return gt.classes.copy()
    return np.arange(gt.m)


def scenario1_batch(out, gts, card_kind, cfg, task="tagging") -> LossResult:
    assignments = [fixed_assignment(g, task) for g in gts]
    # tagging supervises every label's presence with full weight
    noobj = 1.0 if task == "tagging" else cfg.noobj
    return composite_loss(out, gts, assignments, card_kind, cfg, noobj=noobj)


def scenario3_batch(out, gts, card_kind, cfg, assignments=None):
    """Returns ``(LossResult, assignments)``; matches when ``assignments`` is None."""
    if assignments is None:
        costs = matching_costs(out, gts, cfg)
        assignments = [np.array(sample_permutation_s3(c).perm, dtype=np.int64) for c in costs]
    return composite_loss(out, gts, assignments, card_kind, cfg), assignments


def scenario2_batch(out, gts, card_kind, cfg, samples=None, use_prior=True):
    """Returns ``(LossResult, samples)`` where each sample is an
    :class:`AssignmentResult` over the canonical order of that instance.

    With ``use_prior=False`` the permutation logits are left out of the
    argmin (a uniform prior); they are still trained on the samples.
    """
    out = _batched(out)
    canon = [g.canonical() for g in gts]
    if samples is None:
        costs = matching_costs(out, canon, cfg)
        logits = out.perm if use_prior else np.zeros_like(out.perm)
        samples = [sample_permutation_s2(c, logits[b], canon[b].m) for b, c in enumerate(costs)]
    assignments = [np.array(s.perm[: g.m], dtype=np.int64) for s, g in zip(samples, canon)]
    perm_targets = [s.lehmer for s in samples]
    return composite_loss(out, canon, assignments, card_kind, cfg, perm_targets=perm_targets), samples


def _single(result: LossResult):
    g = result.grad[0]
    return float(result.total[0]), g


def scenario1_loss(out, gt, card_kind="categorical", cfg=None, task="tagging"):
    """``(loss, grad NetworkOutput)`` for one instance with a fixed target order."""
    return _single(scenario1_batch(out, [gt], card_kind, cfg or LossConfig(), task))


def scenario3_loss(out, gt, pi_star=None, card_kind="categorical", cfg=None):
    """Uniform-permutation loss; ``pi_star`` (slot per element) is re-derived if None."""
    res, _ = scenario3_batch(out, [gt], card_kind, cfg or LossConfig(), None if pi_star is None else [pi_star])
    return _single(res)


def scenario2_loss(out, gt, pi_star=None, card_kind="categorical", cfg=None):
    """Learned-permutation loss; ``pi_star`` is an AssignmentResult from
    :func:`sample_permutation_s2` on the canonical order, re-derived if None."""
    res, _ = scenario2_batch(out, [gt], card_kind, cfg or LossConfig(), None if pi_star is None else [pi_star])
    return _single(res)


@dataclass
class PermutationHistogram:
    """Per-instance counts of sampled full permutations (by Lehmer index)."""

    num_slots: int
    counts: dict = field(default_factory=dict)

    def update(self, instance_id, pi_star) -> None:
        idx = pi_star.lehmer if isinstance(pi_star, AssignmentResult) else int(pi_star)
        self.counts.setdefault(instance_id, Counter())[idx] += 1

    def total(self, instance_id) -> int:
        return sum(self.counts.get(instance_id, {}).values())

    def weights(self, instance_id) -> dict[int, float]:
        c = self.counts.get(instance_id, {})
        n = sum(c.values())
        return {k: v / n for k, v in c.items()} if n else {}

    def dominant_permutations(self, k: int = 1) -> dict:
        """Top-``k`` ``(permutation, lehmer, weight)`` per instance, ties by index."""
        report = {}
        for iid in sorted(self.counts, key=str):
            w = self.weights(iid)
            top = sorted(w.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
            report[iid] = [(lehmer_decode(idx, self.num_slots), idx, wt) for idx, wt in top]
        return report

    def pooled_weights(self) -> dict[int, float]:
        """Mean over instances of each permutation's per-instance weight."""
        acc: Counter = Counter()
        n = 0
        for iid in self.counts:
            for idx, wt in self.weights(iid).items():
                acc[idx] += wt
            n += 1
        return {k: v / n for k, v in acc.items()} if n else {}

    def top_pooled_weight(self) -> float:
        w = self.pooled_weights()
        return max(w.values()) if w else 0.0

    def to_rows(self, k: Optional[int] = None):
        for iid, entries in self.dominant_permutations(k or self.num_slots_factorial()).items():
            for perm, idx, wt in entries:
                yield iid, idx, " ".join(map(str, perm)), wt

    def num_slots_factorial(self) -> int:
        return len(all_permutations(self.num_slots))

    def write_csv(self, path, k: Optional[int] = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["instance_id", "lehmer_index", "permutation", "weight"])
            for row in self.to_rows(k):
                w.writerow([row[0], row[1], row[2], repr(row[3])])

    def to_json(self) -> str:
        return json.dumps(
            {"num_slots": self.num_slots, "counts": {str(k): {str(i): c for i, c in v.items()} for k, v in self.counts.items()}},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "PermutationHistogram":
        d = json.loads(text)
        h = cls(int(d["num_slots"]))
        for k, v in d["counts"].items():
            key = int(k) if k.lstrip("-").isdigit() else k
            h.counts[key] = Counter({int(i): int(c) for i, c in v.items()})
        return h
