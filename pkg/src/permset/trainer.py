"""SGD training loops for the three scenarios, and evaluation sweeps."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import geometry, metrics
from .assignment import NonFiniteCostError
from .datagen import Instance
from .inference import InferenceConfig, predict
from .network import SGD, HeadLayout, Mlp, TrainConfig
from .setloss import (
    LossConfig,
    PermutationHistogram,
    scenario1_batch,
    scenario2_batch,
    scenario3_batch,
)

DIVERGENCE_LIMIT = 1e6
U_GRID = (0.5, 1.0, 2.0, 4.0, 8.0)


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"loss diverged at iteration {iteration}: {loss}")
        self.iteration = iteration
        self.loss = loss


class ConfigurationError(ValueError):
    pass


@dataclass
class RunLog:
    rows: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    wall_clock: float = 0.0

    FIELDS = ("iteration", "epoch", "loss", "card", "state", "perm", "assign_seconds")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    @property
    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.rows])


def task_of(instances: Sequence[Instance]) -> str:
    return instances[0].task if instances else "tagging"


def make_layout(task: str, max_card: int, scenario: int = 3, card_kind: str = "categorical", num_classes: int = 1) -> HeadLayout:
    if task == "tagging":
        return HeadLayout(max_card, card_kind, state_dim=0, num_classes=0, scenario=scenario)
    return HeadLayout(max_card, card_kind, state_dim=4, num_classes=num_classes, scenario=scenario)


def build_net(input_dim: int, hidden: Sequence[int], layout: HeadLayout, seed: int) -> Mlp:
    return Mlp.init([input_dim, *hidden, layout.size], seed=seed, out_bias=layout.initial_bias())


def check_compatible(layout: HeadLayout, task: str, net: Optional[Mlp] = None, input_dim: Optional[int] = None):
    if (layout.state_dim == 0) != (task == "tagging"):
        raise ConfigurationError(f"{task} data does not fit a head with state_dim={layout.state_dim}")
    if net is not None and net.widths[-1] != layout.size:
        raise ConfigurationError("network output width does not match the head layout")
    if net is not None and input_dim is not None and net.widths[0] != input_dim:
        raise ConfigurationError(f"network expects {net.widths[0]} inputs, data has {input_dim}")


def compute_loss(scenario, out, gts, layout, loss_cfg, task, card_only=False, use_prior=True):
    """Dispatch to the scenario loss.  Returns ``(LossResult, samples)`` where
    ``samples`` are the per-instance matchings (None for scenario 1)."""
    kind = layout.card_kind
    if scenario == 1:
        res, samples = scenario1_batch(out, gts, kind, loss_cfg, task=task), None
    elif scenario == 2:
        res, samples = scenario2_batch(out, gts, kind, loss_cfg, use_prior=use_prior)
    elif scenario == 3:
        res, samples = scenario3_batch(out, gts, kind, loss_cfg)
    else:
        raise ConfigurationError(f"unknown scenario {scenario}")
    if card_only:
        g = res.grad
        for part in (g.states, g.exist, g.cls, g.perm):
            if part is not None:
                part[...] = 0.0
        res.total = res.card.copy()
        res.state = np.zeros_like(res.state)
        res.perm = np.zeros_like(res.perm)
    return res, samples


def train(
    scenario: int,
    dataset: Sequence[Instance],
    net: Mlp,
    layout: HeadLayout,
    cfg: TrainConfig,
    loss_cfg: Optional[LossConfig] = None,
    card_only: bool = False,
    hist_burn_in: int = 0,
    callback=None,
    prior_warmup: int = 0,
):
    """Train ``net`` in place.  Returns ``(net, RunLog, PermutationHistogram or None)``.

    Each iteration: forward a batch, (scenarios 2/3) solve the per-instance
    assignment, evaluate the composite loss with the matching frozen,
    back-propagate the batch-mean loss and take an SGD step.  In scenario 2
    the sampled permutations are recorded after ``hist_burn_in`` epochs, and
    for the first ``prior_warmup`` epochs the permutation head is trained but
    left out of the argmin.
    """
    if scenario != layout.scenario:
        raise ConfigurationError(f"layout built for scenario {layout.scenario}, asked to train {scenario}")
    loss_cfg = loss_cfg or LossConfig()
    task = task_of(dataset)
    X = np.stack([inst.input for inst in dataset]) if dataset else np.zeros((0, net.widths[0]))
    check_compatible(layout, task, net, X.shape[1] if len(X) else None)
    gts = [inst.gt for inst in dataset]
    ids = [inst.id for inst in dataset]
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(net, cfg)
    hist = PermutationHistogram(layout.max_card) if scenario == 2 else None
    log = RunLog()
    start = time.perf_counter()
    it = 0
    lr = cfg.lr
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            if cfg.max_iters is not None and it >= cfg.max_iters:
                break
            idx = order[lo : lo + cfg.batch_size]
            raw, cache = net.forward_raw(X[idx], dropout=cfg.dropout, rng=rng)
            out = layout.split(raw)
            batch_gts = [gts[i] for i in idx]
            t0 = time.perf_counter()
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    res, samples = compute_loss(
                        scenario, out, batch_gts, layout, loss_cfg, task, card_only, use_prior=epoch >= prior_warmup
                    )
            except NonFiniteCostError:
                raise TrainingDiverged(it, float("nan")) from None
            assign_s = time.perf_counter() - t0
            loss = float(res.total.mean())
            if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                raise TrainingDiverged(it, loss)
            if hist is not None and epoch >= hist_burn_in:
                for i, s in zip(idx, samples):
                    hist.update(ids[i], s)
            grad_raw = layout.merge(res.grad) / len(idx)
            opt.step(net, net.backward(cache, grad_raw), lr=lr)
            log.rows.append(
                {
                    "iteration": it,
                    "epoch": epoch,
                    "loss": loss,
                    "card": float(res.card.mean()),
                    "state": float(res.state.mean()),
                    "perm": float(res.perm.mean()),
                    "assign_seconds": assign_s,
                }
            )
            it += 1
        lr *= cfg.lr_decay
        if callback is not None:
            log.epochs.append(callback(epoch, net))
        if cfg.max_iters is not None and it >= cfg.max_iters:
            break
    log.wall_clock = time.perf_counter() - start
    return net, log, hist


def batch_loss(scenario, net, layout, dataset, loss_cfg=None) -> float:
    """Mean loss over ``dataset`` without updating anything."""
    loss_cfg = loss_cfg or LossConfig()
    X = np.stack([inst.input for inst in dataset])
    raw, _ = net.forward_raw(X)
    res, _ = compute_loss(scenario, layout.split(raw), [i.gt for i in dataset], layout, loss_cfg, task_of(dataset))
    return float(res.total.mean())


def predict_all(net: Mlp, layout: HeadLayout, dataset: Sequence[Instance], inf_cfg: InferenceConfig, batch: int = 512):
    """Run inference per instance; returns ``(predicted_sets, raw_outputs)`` in dataset order."""
    preds, raws = [], []
    for lo in range(0, len(dataset), batch):
        X = np.stack([inst.input for inst in dataset[lo : lo + batch]])
        raw, _ = net.forward_raw(X)
        raws.append(raw)
        outs = layout.split(raw)
        for b in range(len(raw)):
            preds.append(predict(outs[b], layout, inf_cfg))
    raw_all = np.concatenate(raws) if raws else np.zeros((0, layout.size))
    return preds, raw_all


def evaluate(net: Mlp, layout: HeadLayout, dataset: Sequence[Instance], inf_cfg: Optional[InferenceConfig] = None, num_labels: Optional[int] = None) -> metrics.EvalReport:
    """Infer every instance and aggregate with the task's protocol."""
    inf_cfg = inf_cfg or InferenceConfig()
    task = task_of(dataset)
    check_compatible(layout, task, net, len(dataset[0].input) if dataset else None)
    preds, raw = predict_all(net, layout, dataset, inf_cfg)
    mae, std = metrics.cardinality_mae([p.m for p in preds], [inst.m for inst in dataset])
    report = metrics.EvalReport(card_mae=mae, card_mae_std=std)
    if task == "tagging":
        labels = num_labels or layout.max_card
        pr = metrics.prf_multilabel([p.slots for p in preds], [inst.classes for inst in dataset], labels)
        return report.merge(pr)
    pred_sets = [pred_boxes(p, inst) for p, inst in zip(preds, dataset)]
    gt_boxes = [inst.boxes for inst in dataset]
    report = report.merge(metrics.set_prf(pred_sets, gt_boxes))
    outs = layout.split(raw)
    scored = []
    for b, inst in enumerate(dataset):
        boxes = geometry.denormalize_boxes(geometry.decode_params(outs.states[b]), inst.w, inst.h)
        scored.append((boxes, 1.0 / (1.0 + np.exp(-outs.exist[b]))))
    report = report.merge(metrics.detection_pr(scored, gt_boxes))
    if task == "captcha":
        report = report.merge(metrics.EvalReport(accuracy=metrics.captcha_accuracy(pred_sets, gt_boxes)))
    return report


def pred_boxes(pred, inst: Instance) -> np.ndarray:
    if not pred.elements:
        return np.zeros((0, 4))
    params = np.array([e.state for e in pred.elements])
    return geometry.denormalize_boxes(geometry.decode_params(params), inst.w, inst.h)


def headline(report: metrics.EvalReport, task: str) -> float:
    if task == "tagging":
        return report.o_f1
    if task == "captcha":
        return report.accuracy
    return report.set_f1


def tune_u(net, layout, val: Sequence[Instance], grid=U_GRID, num_labels=None) -> float:
    """Pick U from ``grid`` by the task's headline metric on ``val`` (ties -> first)."""
    task = task_of(val)
    best_u, best = grid[0], -1.0
    for u in grid:
        score = headline(evaluate(net, layout, val, InferenceConfig(U=u), num_labels), task)
        if score > best:
            best_u, best = u, score
    return best_u
