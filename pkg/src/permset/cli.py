"""Command-line entry point: ``permset {gen,train,eval,infer,gradcheck,perms-report}``.

Exit codes: 0 success, 1 configuration error, 2 data/format error, 3 divergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import datagen, setloss, trainer
from .card_dist import KINDS
from .inference import InferenceConfig, predict
from .network import CheckpointError, TrainConfig, load_checkpoint, output_grad_check, save_checkpoint

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 1, 2, 3
TASKS = ("tagging", "detect", "captcha")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    task: str = "detect"
    scenario: int = 3
    M: int = 5
    hidden: tuple = (256,)
    card_kind: str = "categorical"
    num_classes: int = 1
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch: int = 8
    epochs: int = 10
    seed: int = 0
    lr_decay: float = 0.95
    dropout: float = 0.0
    w_l1: float = 1.0
    w_giou: float = 1.0
    w_cls: float = 1.0
    noobj: float = 0.5
    U: float = 1.0
    mode: str = "exact"
    checkpoint_every: int = 0
    hist_burn_in: int = 0
    prior_warmup: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.card_kind not in KINDS:
            raise ConfigError(f"card_kind must be one of {KINDS}, got {self.card_kind!r}")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        if min(self.epochs, self.checkpoint_every, self.hist_burn_in, self.prior_warmup) < 0:
            raise ConfigError("epochs, checkpoint_every, hist_burn_in and prior_warmup must be >= 0")
        if self.task == "tagging" and self.scenario != 1:
            raise ConfigError("tagging slots are the labels themselves; use scenario 1")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        for f in ("w_l1", "w_giou", "w_cls", "noobj"):
            if getattr(self, f) < 0:
                raise ConfigError(f"{f} must be non-negative")
        try:
            self.train_config()
            self.inference_config()
            self.layout()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay, batch_size=self.batch,
            epochs=self.epochs, seed=self.seed, lr_decay=self.lr_decay, dropout=self.dropout,
        )

    def loss_config(self) -> setloss.LossConfig:
        return setloss.LossConfig(w_l1=self.w_l1, w_giou=self.w_giou, w_cls=self.w_cls, noobj=self.noobj)

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(U=self.U, mode=self.mode)

    def layout(self):
        return trainer.make_layout(self.task, self.M, self.scenario, self.card_kind, self.num_classes)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, text: str):
    kind = _TYPES[key]
    try:
        if kind in ("int", int):
            return int(text)
        if kind in ("float", float):
            return float(text)
        if kind in ("tuple", tuple):
            return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from exc
    return text


def parse_config(text: str, overrides: Optional[dict] = None) -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments allowed); unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, val)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _parse_value(key, val) if isinstance(val, str) else val
    return RunConfig(**values)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for key, val in asdict(cfg).items():
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]


# --------------------------------------------------------------- commands

def _load_data(path) -> list:
    try:
        data = datagen.read_jsonl(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if not data:
        raise DataError(f"{path}: no instances")
    return data


def _check_task(data, cfg: RunConfig):
    found = trainer.task_of(data)
    if found != cfg.task:
        raise ConfigError(f"configured for task {cfg.task!r} but data is {found!r}")
    if cfg.task == "tagging":
        top = max((int(c) for d in data for c in d.classes), default=-1)
        if top >= cfg.M:
            raise ConfigError(f"label {top} needs M >= {top + 1} slots")
    elif cfg.num_classes > 1 and any(int(c) >= cfg.num_classes for d in data for c in d.classes):
        raise ConfigError("data has more classes than num_classes")


def cmd_gen(args) -> int:
    if args.task == "tagging":
        data = datagen.gen_multilabel(args.n, num_labels=args.num_labels, seed=args.seed, max_visible=args.max_objects)
    elif args.task == "detect":
        data = datagen.gen_toy_detection(
            args.n, max_objects=args.max_objects, overlap_level=args.overlap, seed=args.seed, num_classes=args.num_classes
        )
    else:
        data = datagen.gen_captcha(args.n, scene_digits=args.scene_digits, seed=args.seed)
    datagen.write_jsonl(args.out, data)
    print(f"wrote {len(data)} {args.task} instances to {args.out}")
    return 0


def _config_from_args(args) -> RunConfig:
    text = ""
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    overrides = {
        "task": args.task, "scenario": args.scenario, "seed": args.seed, "epochs": args.epochs, "lr": args.lr,
        "momentum": args.momentum, "weight_decay": args.weight_decay, "batch": args.batch, "U": args.U, "mode": args.mode,
        "M": getattr(args, "M", None), "hidden": getattr(args, "hidden", None),
    }
    return parse_config(text, overrides)


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    data = _load_data(args.data)
    _check_task(data, cfg)
    layout = cfg.layout()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)
    net = trainer.build_net(len(data[0].input), cfg.hidden, layout, cfg.seed)
    extra = {"run_config": serialize_config(cfg), "config_hash": digest}

    def on_epoch(epoch, net):
        if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out.with_suffix(f".epoch{epoch + 1}.json"), net, layout, cfg.train_config(), extra)
        return {"epoch": epoch}

    net, log, hist = trainer.train(
        cfg.scenario, data, net, layout, cfg.train_config(), cfg.loss_config(),
        hist_burn_in=cfg.hist_burn_in, callback=on_epoch, prior_warmup=cfg.prior_warmup,
    )
    save_checkpoint(out, net, layout, cfg.train_config(), extra)
    log.write_csv(out.with_suffix(".log.csv"))
    if hist is not None:
        out.with_suffix(".perms.json").write_text(hist.to_json())
    print(json.dumps({"checkpoint": str(out), "iterations": len(log.rows), "config_hash": digest}))
    return 0
    return 0


def _load_model(path):
    try:
        net, layout, tcfg, payload = load_checkpoint(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"malformed checkpoint {path}: {exc}") from exc
    except (CheckpointError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg = parse_config(payload.get("run_config", ""))
    return net, layout, cfg


def cmd_eval(args) -> int:
    net, layout, cfg = _load_model(args.checkpoint)
    cfg = replace(cfg, U=args.U if args.U is not None else cfg.U, mode=args.mode or cfg.mode)
    data = _load_data(args.data)
    try:
        report = trainer.evaluate(net, layout, data, cfg.inference_config(), num_labels=cfg.M)
    except trainer.ConfigurationError as exc:
        raise ConfigError(str(exc)) from exc
    digest = config_hash(cfg)
    prefix = Path(args.out) if args.out else Path(args.checkpoint).with_suffix("")
    payload = dict(report.items(), config_hash=digest, U=cfg.U, mode=cfg.mode)
    prefix.with_suffix(".report.json").write_text(json.dumps(payload, sort_keys=True))
    report.write_csv(prefix.with_suffix(".report.csv"))
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_infer(args) -> int:
    net, layout, cfg = _load_model(args.checkpoint)
    cfg = replace(cfg, U=args.U if args.U is not None else cfg.U, mode=args.mode or cfg.mode)
    try:
        text = Path(args.instance).read_text().strip()
        inst = datagen.instance_from_dict(json.loads(text.splitlines()[0]))
    except (OSError, IndexError, json.JSONDecodeError, ValueError) as exc:
        raise DataError(f"cannot read instance: {exc}") from exc
    trainer.check_compatible(layout, inst.task, net, len(inst.input))
    raw, _ = net.forward_raw(inst.input[None])
    pred = predict(layout.split(raw)[0], layout, cfg.inference_config())
    elements = []
    for e in pred.elements:
        item = {"slot": e.slot, "score": e.score}
        if e.label is not None:
            item["label"] = e.label
        if e.state is not None:
            item["box"] = trainer.pred_boxes(type(pred)(1, [e]), inst)[0].tolist()
        elements.append(item)
    result = {"id": inst.id, "m": pred.m, "elements": elements, "config_hash": config_hash(cfg)}
    text = json.dumps(result, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def gradcheck_report(cfg: RunConfig, trials: int = 5) -> dict:
    """Max relative finite-difference error per loss head on random outputs."""
    rng = np.random.default_rng(cfg.seed)
    layout = cfg.layout()
    lcfg = cfg.loss_config()
    if cfg.task == "tagging":
        data = datagen.gen_multilabel(4, num_labels=min(cfg.M, 16), seed=cfg.seed, max_visible=cfg.M)
    elif cfg.task == "captcha":
        data = datagen.gen_captcha(4, seed=cfg.seed)
    else:
        k = min(cfg.M, cfg.num_classes) if cfg.num_classes > 1 else cfg.M
        data = datagen.gen_toy_detection(4, max_objects=k, seed=cfg.seed, num_classes=cfg.num_classes)
    gts = [d.gt for d in data]
    report = {}

    def check(name, fn, raw):
        report[name] = max(report.get(name, 0.0), output_grad_check(fn, raw))

    for _ in range(trials):
        raw = rng.normal(scale=0.5, size=(len(data), layout.size))
        _, samples = trainer.compute_loss(cfg.scenario, layout.split(raw.copy()), gts, layout, lcfg, cfg.task)

        def composite(r, card_only=False, weights=lcfg):
            o = layout.split(r)
            if cfg.scenario == 1:
                res = setloss.scenario1_batch(o, gts, cfg.card_kind, weights, task=cfg.task)
            elif cfg.scenario == 2:
                res, _ = setloss.scenario2_batch(o, gts, cfg.card_kind, weights, samples=samples)
            else:
                res, _ = setloss.scenario3_batch(o, gts, cfg.card_kind, weights, assignments=samples)
            if card_only:
                return res.card.sum(), layout.merge(_only_alpha(res.grad))
            return res.total.sum(), layout.merge(res.grad)

        check(f"card_{cfg.card_kind}", lambda r: composite(r, card_only=True), raw)
        if cfg.task != "tagging":
            check("smooth_l1", lambda r: composite(r, weights=replace(lcfg, w_giou=0.0)), raw)
            check("giou", lambda r: composite(r, weights=replace(lcfg, w_l1=0.0)), raw)
        check(f"scenario{cfg.scenario}", composite, raw)
    return report


def _only_alpha(grad):
    g = grad.zeros_like()
    g.alpha[...] = grad.alpha
    return g


def cmd_gradcheck(args) -> int:
    cfg = _config_from_args(args)
    report = gradcheck_report(cfg)
    print(json.dumps(dict(report, config_hash=config_hash(cfg)), sort_keys=True))
    return 0


def cmd_perms_report(args) -> int:
    run = Path(args.run_dir)
    files = sorted(run.glob("*.perms.json")) if run.is_dir() else [run]
    if not files or not all(f.exists() for f in files):
        raise DataError(f"no permutation histogram found under {run}")
    for f in files:
        try:
            hist = setloss.PermutationHistogram.from_json(f.read_text())
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise DataError(f"malformed histogram {f}: {exc}") from exc
        dest = Path(args.out) if args.out and len(files) == 1 else f.with_name(f.name.replace(".perms.json", ".dominant.csv"))
        hist.write_csv(dest, k=args.top)
        print(json.dumps({"histogram": str(f), "csv": str(dest), "top_pooled_weight": hist.top_pooled_weight()}))
    return 0


# ------------------------------------------------------------------ parser

def _add_run_flags(p, with_config=True):
    if with_config:
        p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--scenario", type=int, choices=(1, 2, 3))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--U", type=float)
    p.add_argument("--mode", choices=("exact", "approx"))
    p.add_argument("--M", type=int, help="number of output slots")
    p.add_argument("--hidden", help="comma-separated hidden widths")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="permset", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset as JSONL")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--max-objects", dest="max_objects", type=int, default=5)
    p.add_argument("--overlap", type=float, default=0.4)
    p.add_argument("--num-classes", dest="num_classes", type=int, default=1)
    p.add_argument("--num-labels", dest="num_labels", type=int, default=10)
    p.add_argument("--scene-digits", dest="scene_digits", type=int, default=4)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_run_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--U", type=float)
    p.add_argument("--mode", choices=("exact", "approx"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="prefix for report files")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict the set for one instance")
    p.add_argument("checkpoint")
    p.add_argument("instance")
    p.add_argument("--U", type=float)
    p.add_argument("--mode", choices=("exact", "approx"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss head")
    _add_run_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("perms-report", help="dominant permutations of a scenario-2 run")
    p.add_argument("run_dir")
    p.add_argument("--top", type=int, default=3)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_perms_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except trainer.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, trainer.ConfigurationError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, datagen.IdxFormatError, datagen.GenerationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
