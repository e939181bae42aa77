"""Fully connected set-prediction network with hand-written backprop.

The final layer is split into three heads: cardinality parameters ``alpha``,
``M`` element slots (box state, existence logit, optional class logits) and,
for the learned-permutation scenario, ``M!`` permutation logits.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from . import card_dist
from .assignment import MAX_ENUM_SLOTS

CHECKPOINT_VERSION = 1
# relative errors are measured against max(|analytic|, |numeric|, floor); below the
# floor central differences are dominated by round-off
GRAD_CHECK_FLOOR = 1e-5


@dataclass(frozen=True)
class HeadLayout:
    """How the flat output vector is carved into heads.

    ``state_dim`` is 4 for boxes and 0 for tagging (existence only).  Class
    logits are only emitted when ``num_classes > 1``.
    """

    max_card: int
    card_kind: str = "categorical"
    state_dim: int = 4
    num_classes: int = 1
    scenario: int = 3

    def __post_init__(self):
        if self.scenario not in (1, 2, 3):
            raise ValueError(f"scenario must be 1, 2 or 3, got {self.scenario}")
        if self.scenario == 2 and self.max_card > MAX_ENUM_SLOTS:
            raise ValueError(f"scenario 2 needs max_card <= {MAX_ENUM_SLOTS}")
        card_dist.num_params(self.card_kind, self.max_card)

    @property
    def n_alpha(self) -> int:
        return card_dist.num_params(self.card_kind, self.max_card)

    @property
    def n_cls(self) -> int:
        return self.num_classes if self.num_classes > 1 else 0

    @property
    def slot_width(self) -> int:
        return self.state_dim + 1 + self.n_cls

    @property
    def n_perm(self) -> int:
        return math.factorial(self.max_card) if self.scenario == 2 else 0

    @property
    def size(self) -> int:
        return self.n_alpha + self.max_card * self.slot_width + self.n_perm

    def split(self, raw: np.ndarray) -> "NetworkOutput":
        """View a (..., size) array as a :class:`NetworkOutput` (no copies)."""
        raw = np.asarray(raw)
        if raw.shape[-1] != self.size:
            raise ValueError(f"output width {raw.shape[-1]} != layout size {self.size}")
        lead = raw.shape[:-1]
        a = self.n_alpha
        s_end = a + self.max_card * self.slot_width
        slots = raw[..., a:s_end].reshape(*lead, self.max_card, self.slot_width)
        d = self.state_dim
        return NetworkOutput(
            alpha=raw[..., :a],
            states=slots[..., :d] if d else None,
            exist=slots[..., d],
            cls=slots[..., d + 1 :] if self.n_cls else None,
            perm=raw[..., s_end:] if self.n_perm else None,
        )

    def merge(self, out: "NetworkOutput") -> np.ndarray:
        lead = out.exist.shape[:-1]
        raw = np.zeros(lead + (self.size,))
        view = self.split(raw)
        view.alpha[...] = out.alpha
        view.exist[...] = out.exist
        if view.states is not None:
            view.states[...] = out.states
        if view.cls is not None:
            view.cls[...] = out.cls
        if view.perm is not None:
            view.perm[...] = out.perm
        return raw

    def initial_bias(self) -> np.ndarray:
        """Output-layer bias: each slot's box starts at its own point of a
        coarse grid over the canvas, with a third of the canvas size, so the
        slots are not interchangeable at the first matching."""
        b = np.zeros(self.size)
        if self.state_dim == 4:
            v = self.split(b)
            cols = math.ceil(math.sqrt(self.max_card))
            rows = math.ceil(self.max_card / cols)
            k = np.arange(self.max_card)
            v.states[..., 0] = (k % cols + 0.5) / cols
            v.states[..., 1] = (k // cols + 0.5) / rows
            v.states[..., 2] = math.log(0.3)
            v.states[..., 3] = math.log(0.3)
        return b


@dataclass
class NetworkOutput:
    alpha: np.ndarray
    states: Optional[np.ndarray]
    exist: np.ndarray
    cls: Optional[np.ndarray] = None
    perm: Optional[np.ndarray] = None

    def __getitem__(self, idx) -> "NetworkOutput":
        pick = lambda a: None if a is None else a[idx]
        return NetworkOutput(
            self.alpha[idx], pick(self.states), self.exist[idx], pick(self.cls), pick(self.perm)
        )

    @property
    def num_slots(self) -> int:
        return self.exist.shape[-1]

    def zeros_like(self) -> "NetworkOutput":
        z = lambda a: None if a is None else np.zeros_like(a, dtype=float)
        return NetworkOutput(z(self.alpha), z(self.states), z(self.exist), z(self.cls), z(self.perm))


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    lr_decay: float = 0.95
    dropout: float = 0.0
    max_iters: Optional[int] = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")


@dataclass
class Mlp:
    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, widths, seed: int = 0, out_bias=None) -> "Mlp":
        """Glorot-uniform weights, zero biases (``out_bias`` overrides the last)."""
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"bad layer widths {widths}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        if out_bias is not None:
            biases[-1] = np.asarray(out_bias, dtype=float).copy()
        return cls(widths, weights, biases)

    @classmethod
    def zeros(cls, widths) -> "Mlp":
        widths = [int(w) for w in widths]
        return cls(
            widths,
            [np.zeros((a, b)) for a, b in zip(widths[:-1], widths[1:])],
            [np.zeros(b) for b in widths[1:]],
        )

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(list(self.widths), [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward_raw(self, x, dropout: float = 0.0, rng=None):
        """Return ``(raw_output, cache)`` for a (B, in) batch."""
        h = np.asarray(x, dtype=float)
        if h.ndim == 1:
            h = h[None, :]
        if h.shape[-1] != self.widths[0]:
            raise ValueError(f"input width {h.shape[-1]} != {self.widths[0]}")
        acts = [h]
        masks = []
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if k == last:
                h = z
                break
            h = np.maximum(z, 0.0)
            if dropout > 0.0:
                keep = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
                h = h * keep
                masks.append(keep)
            else:
                masks.append(None)
            acts.append(h)
        return h, (acts, masks)

    def backward(self, cache, grad_out):
        """Gradients ``[(dW, db), ...]`` of a scalar whose output-gradient is ``grad_out``."""
        acts, masks = cache
        g = np.asarray(grad_out, dtype=float)
        if g.shape != (acts[0].shape[0], self.widths[-1]):
            raise ValueError(f"upstream gradient shape {g.shape} does not match output")
        grads = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            a = acts[k]
            grads[k] = (a.T @ g, g.sum(axis=0))
            if k == 0:
                break
            g = g @ self.weights[k].T
            if masks[k - 1] is not None:
                g = g * masks[k - 1]
            g = g * (acts[k] > 0)
        return grads


def forward(net: Mlp, x, layout: HeadLayout) -> NetworkOutput:
    """Deterministic (no-dropout) forward pass split into heads."""
    raw, _ = net.forward_raw(x)
    out = layout.split(raw)
    return out if np.ndim(x) > 1 else out[0]


def backward(net: Mlp, cache, grad_out):
    return net.backward(cache, grad_out)


class SGD:
    """SGD with momentum and the ``2 * gamma * w`` weight-decay term (weights only)."""

    def __init__(self, net: Mlp, cfg: TrainConfig):
        self.cfg = cfg
        self.velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
        # scratch buffers so large layers do not allocate temporaries every step
        self._scratch = [np.empty_like(w) for w in net.weights]

    def step(self, net: Mlp, grads, lr: Optional[float] = None):
        lr = self.cfg.lr if lr is None else lr
        mu = self.cfg.momentum
        decay = 2.0 * self.cfg.weight_decay
        if len(grads) != len(net.weights):
            raise ValueError("gradient list does not match the network depth")
        for k, (dw, db) in enumerate(grads):
            w, b = net.weights[k], net.biases[k]
            if dw.shape != w.shape or db.shape != b.shape:
                raise ValueError(f"layer {k}: gradient shape mismatch")
            vw, vb = self.velocity[k]
            tmp = self._scratch[k]
            vw *= mu
            vw += dw
            if decay:
                np.multiply(w, decay, out=tmp)
                vw += tmp
            vb *= mu
            vb += db
            np.multiply(vw, lr, out=tmp)
            w -= tmp
            b -= lr * vb
        return net


def sgd_step(net: Mlp, grads, cfg: TrainConfig, optimizer: Optional[SGD] = None) -> Mlp:
    """One in-place update; pass an :class:`SGD` to carry momentum across calls."""
    opt = optimizer or SGD(net, cfg)
    return opt.step(net, grads)


LossFn = Callable[[np.ndarray], tuple]


def grad_check(net: Mlp, loss_fn: LossFn, x, eps: float = 1e-5, max_params: Optional[int] = None, seed: int = 0, floor: float = GRAD_CHECK_FLOOR) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn(raw_output)`` must return ``(scalar_loss, d_loss/d_raw_output)``.
    Error per parameter is ``|a - n| / max(|a|, |n|, floor)``.  With
    ``max_params`` a random subset of coordinates is checked.
    """
    x = np.asarray(x, dtype=float)
    raw, cache = net.forward_raw(x)
    _, g_out = loss_fn(raw)
    analytic = net.backward(cache, g_out)

    def total(n):
        r, _ = n.forward_raw(x)
        return float(loss_fn(r)[0])

    coords = []
    for k in range(len(net.weights)):
        for which, arr in ((0, net.weights[k]), (1, net.biases[k])):
            for idx in np.ndindex(arr.shape):
                coords.append((k, which, idx))
    if max_params is not None and len(coords) > max_params:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max_params, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    worst = 0.0
    for k, which, idx in coords:
        arr = net.weights[k] if which == 0 else net.biases[k]
        orig = arr[idx]
        arr[idx] = orig + eps
        up = total(net)
        arr[idx] = orig - eps
        down = total(net)
        arr[idx] = orig
        numeric = (up - down) / (2 * eps)
        a = analytic[k][which][idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, err)
    return worst


def output_grad_check(loss_fn: LossFn, raw, eps: float = 1e-5, floor: float = GRAD_CHECK_FLOOR) -> float:
    """Like :func:`grad_check` but directly over the output vector."""
    raw = np.array(raw, dtype=float)
    _, g = loss_fn(raw)
    worst = 0.0
    for idx in np.ndindex(raw.shape):
        orig = raw[idx]
        raw[idx] = orig + eps
        up = float(loss_fn(raw)[0])
        raw[idx] = orig - eps
        down = float(loss_fn(raw)[0])
        raw[idx] = orig
        numeric = (up - down) / (2 * eps)
        err = abs(g[idx] - numeric) / max(abs(g[idx]), abs(numeric), floor)
        worst = max(worst, err)
    return worst


def save_checkpoint(path, net: Mlp, layout: HeadLayout, cfg: TrainConfig, extra: Optional[dict] = None):
    payload = checkpoint_dict(net, layout, cfg, extra)
    with open(path, "w") as fh:
        json.dump(payload, fh)


def checkpoint_dict(net: Mlp, layout: HeadLayout, cfg: TrainConfig, extra: Optional[dict] = None) -> dict:
    payload = {
        "version": CHECKPOINT_VERSION,
        "scenario": layout.scenario,
        "layout": asdict(layout),
        "layer_widths": list(net.widths),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "config": asdict(cfg),
    }
    if extra:
        payload.update(extra)
    return payload


class CheckpointError(ValueError):
    pass


def load_checkpoint(path):
    """Return ``(net, layout, cfg, payload)``."""
    with open(path) as fh:
        payload = json.load(fh)
    return checkpoint_from_dict(payload) + (payload,)


def checkpoint_from_dict(payload: dict):
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')!r}")
    widths = [int(w) for w in payload["layer_widths"]]
    weights = [np.asarray(w, dtype=float).reshape(a, b) for w, a, b in zip(payload["weights"], widths[:-1], widths[1:])]
    biases = [np.asarray(b, dtype=float) for b in payload["biases"]]
    layout = HeadLayout(**payload["layout"])
    if layout.scenario != payload["scenario"] or layout.size != widths[-1]:
        raise CheckpointError("checkpoint layout does not match its output layer")
    cfg = TrainConfig(**payload["config"])
    return Mlp(widths, weights, biases), layout, cfg
