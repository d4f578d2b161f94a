"""Seeded splitting, the minibatch Adam loop, evaluation and baseline runs."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .metrics import average_power_loss, estimate_noise_floor, topk_accuracy
from .model import VARIANTS, BeamModel, ModelConfig
from .numerics import AdamState, CheckpointError, clip_grad_norm, Tensor, adam_step, cross_entropy, load_checkpoint, no_grad, \
    save_checkpoint
from .preprocess import Batch, PreprocConfig, preprocess_many

log = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 9, 11, 15)
VARIANT_ALIASES = {"baseline1_position_only": "baseline1", "baseline2_concat_fusion": "baseline2"}


class DivergenceError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 4
    lr: float = 1e-3
    weight_decay: float = 1e-4
    ratios: tuple[int, int, int] = (6, 2, 2)
    seed: int = 0
    variant: str = "proposed"
    eval_ks: tuple[int, ...] = DEFAULT_KS
    p_o: float | str = 0.0
    grad_clip: float | None = 1.0  # global L2 norm cap; None disables

    def __post_init__(self):
        self.variant = VARIANT_ALIASES.get(self.variant, self.variant)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if sum(self.ratios) != 10 or any(r < 0 for r in self.ratios):
            raise ValueError(f"split ratios must be non-negative and sum to 10, got {self.ratios}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive or None")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratios"] = list(self.ratios)
        d["eval_ks"] = list(self.eval_ks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass
class LossCurves:
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, (a, b) in enumerate(zip(self.train, self.val)):
                w.writerow([i + 1, repr(a), repr(b)])


@dataclass
class EvalReport:
    variant: str
    seed: int
    n_samples: int
    topk_accuracy: dict[int, float]
    apl_db: dict[int, float]
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    split: str = "test"
    p_o: float = 0.0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["topk_accuracy"] = {str(k): v for k, v in self.topk_accuracy.items()}
        d["apl_db"] = {str(k): v for k, v in self.apl_db.items()}
        return d

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text())
        d["topk_accuracy"] = {int(k): v for k, v in d["topk_accuracy"].items()}
        d["apl_db"] = {int(k): v for k, v in d["apl_db"].items()}
        return cls(**d)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["k", "topk_accuracy", "apl_db"])
            for k in sorted(self.topk_accuracy):
                w.writerow([k, repr(self.topk_accuracy[k]), repr(self.apl_db[k])])


def split_dataset(n: int, ratios=(6, 2, 2), seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shuffle of 0..n-1, cut contiguously by ``ratios`` (tenths)."""
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    if sum(ratios) != 10:
        raise ValueError("ratios must sum to 10")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = n * ratios[0] // 10
    n_val = n * ratios[1] // 10
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


@dataclass
class SplitData:
    train: Batch
    val: Batch
    test: Batch
    preproc: PreprocConfig
    indices: tuple[np.ndarray, np.ndarray, np.ndarray]


def prepare_splits(samples, ratios=(6, 2, 2), seed: int = 0, preproc: PreprocConfig | None = None) -> SplitData:
    """Split samples and preprocess, freezing the GPS range from the training split."""
    samples = list(samples)
    tr, va, te = split_dataset(len(samples), ratios, seed)
    base = preproc or PreprocConfig()
    gps = np.stack([samples[i].gps for i in tr])
    kw = {k: v for k, v in base.__dict__.items() if k not in ("gps_min", "gps_max")}
    pc = PreprocConfig.fit_gps(gps, **kw)

    def build(idx):
        return preprocess_many([samples[i] for i in idx], pc, indices=idx)

    return SplitData(build(tr), build(va), build(te), pc, (tr, va, te))


def batch_loss(model: BeamModel, batch: Batch) -> Tensor:
    return cross_entropy(model.forward(batch), batch.labels)


def evaluate_loss(model: BeamModel, batch: Batch, batch_size: int = 32) -> float:
    total = 0.0
    with no_grad():
        for start in range(0, len(batch), batch_size):
            part = batch.take(np.arange(start, min(start + batch_size, len(batch))))
            total += batch_loss(model, part).item() * len(part)
    return total / max(len(batch), 1)


@dataclass
class TrainResult:
    curves: LossCurves
    best_epoch: int
    best_val: float
    best_arrays: dict[str, np.ndarray]


def _save_state(path, model: BeamModel, opt: AdamState, epoch: int, curves: LossCurves, best_epoch: int,
                best_val: float, cfg: TrainConfig, extra: dict) -> None:
    arrays = dict(model.state_arrays())
    arrays.update({f"__adam_m.{k}": v for k, v in opt.m.items()})
    arrays.update({f"__adam_v.{k}": v for k, v in opt.v.items()})
    meta = {"epoch": epoch, "adam_step": opt.step, "train_loss": curves.train, "val_loss": curves.val,
            "best_epoch": best_epoch, "best_val": best_val, **extra}
    save_checkpoint(path, arrays, config={"model": model.cfg.to_dict(), "train": cfg.to_dict()}, seed=cfg.seed,
                    extra=meta)


def _load_state(path, model: BeamModel):
    arrays, header = load_checkpoint(path)
    model.load_arrays({k: v for k, v in arrays.items() if not k.startswith("__adam_")})
    meta = header.get("extra", {})
    opt = AdamState(int(meta["adam_step"]),
                    {k[len("__adam_m."):]: v for k, v in arrays.items() if k.startswith("__adam_m.")},
                    {k[len("__adam_v."):]: v for k, v in arrays.items() if k.startswith("__adam_v.")})
    curves = LossCurves(list(meta["train_loss"]), list(meta["val_loss"]))
    return opt, curves, int(meta["epoch"]), int(meta["best_epoch"]), float(meta["best_val"])


def train(model: BeamModel, train_batch: Batch, val_batch: Batch, cfg: TrainConfig, out_dir=None,
          resume: bool = False, max_epochs: int | None = None, extra_meta: dict | None = None) -> TrainResult:
    """Minibatch Adam for ``cfg.epochs`` epochs; keeps the best-validation weights.

    With ``out_dir`` set, ``last.ckpt`` (weights + optimizer state) and
    ``best.ckpt`` are written after every epoch, and ``resume=True`` continues
    from ``last.ckpt``.  ``max_epochs`` stops early (used to simulate an
    interrupted run).
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None and not resume:
        out.mkdir(parents=True, exist_ok=True)
    extra_meta = extra_meta or {}
    opt = AdamState.zeros_like(model.params)
    curves = LossCurves()
    start_epoch, best_epoch, best_val = 0, 0, math.inf
    best_arrays = {k: v.copy() for k, v in model.state_arrays().items()}
    if resume:
        if out is None or not (out / "last.ckpt").exists():
            raise FileNotFoundError("resume requested but no last.ckpt found")
        opt, curves, start_epoch, best_epoch, best_val = _load_state(out / "last.ckpt", model)
        if (out / "best.ckpt").exists():
            best_arrays, _ = load_checkpoint(out / "best.ckpt")
    n = len(train_batch)
    if n == 0:
        raise ValueError("empty training split")
    end = cfg.epochs if max_epochs is None else min(cfg.epochs, max_epochs)
    for epoch in range(start_epoch, end):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        total = 0.0
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            part = train_batch.take(order[start:start + cfg.batch_size])
            for p in model.params.values():
                p.grad = None
            try:
                loss = batch_loss(model, part)
            except FloatingPointError as e:
                raise DivergenceError(f"NaN in forward pass at epoch {epoch + 1}, step {step + 1}: {e}") from e
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite training loss {value} at epoch {epoch + 1}, step {step + 1}")
            loss.backward()
            grads = {k: p.grad for k, p in model.params.items()}
            if cfg.grad_clip is not None:
                clip_grad_norm(grads, cfg.grad_clip)
            adam_step(model.params, grads, opt, cfg.lr, weight_decay=cfg.weight_decay)
            total += value * len(part)
        curves.train.append(total / n)
        val = evaluate_loss(model, val_batch) if len(val_batch) else curves.train[-1]
        if not np.isfinite(val):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch + 1}")
        curves.val.append(val)
        if val < best_val:
            best_val, best_epoch = val, epoch + 1
            best_arrays = {k: v.copy() for k, v in model.state_arrays().items()}
            if out is not None:
                save_checkpoint(out / "best.ckpt", best_arrays,
                                config={"model": model.cfg.to_dict(), "train": cfg.to_dict()}, seed=cfg.seed,
                                extra={"epoch": epoch + 1, "val_loss": val, **extra_meta})
        if out is not None:
            _save_state(out / "last.ckpt", model, opt, epoch + 1, curves, best_epoch, best_val, cfg, extra_meta)
        log.info("epoch %d/%d train %.4f val %.4f", epoch + 1, cfg.epochs, curves.train[-1], val)
    return TrainResult(curves, best_epoch, best_val, best_arrays)


def evaluate(model: BeamModel, batch: Batch, ks=DEFAULT_KS, p_o: float | str = 0.0, seed: int = 0,
             curves: LossCurves | None = None, split: str = "test", config: dict | None = None) -> EvalReport:
    probs = model.predict_proba(batch)
    return report_from_probs(probs, batch, model.cfg.variant, ks, p_o, seed, curves, split, config)


def report_from_probs(probs, batch: Batch, variant: str, ks=DEFAULT_KS, p_o: float | str = 0.0, seed: int = 0,
                      curves: LossCurves | None = None, split: str = "test", config: dict | None = None) -> EvalReport:
    ks = sorted(set(int(k) for k in ks))
    floor = estimate_noise_floor(batch.powers) if p_o == "auto" else float(p_o)
    acc = {k: topk_accuracy(probs, batch.labels, k) for k in ks}
    apl = {k: average_power_loss(probs, batch.powers, k, floor, batch.labels) for k in ks}
    curves = curves or LossCurves()
    return EvalReport(variant, seed, len(batch), acc, apl, list(curves.train), list(curves.val), split, floor,
                      config or {})


def run_experiment(data: SplitData, model_cfg: ModelConfig, train_cfg: TrainConfig, out_dir=None,
                   resume: bool = False) -> tuple[BeamModel, TrainResult, EvalReport]:
    """Train one variant, restore the best checkpoint and evaluate on the test split."""
    model = BeamModel(model_cfg, seed=train_cfg.seed)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    result = train(model, data.train, data.val, train_cfg, out_dir, resume,
                   extra_meta={"preproc": data.preproc.to_dict()})
    model.load_arrays(result.best_arrays)
    config = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "preproc": data.preproc.to_dict()}
    report = evaluate(model, data.test, train_cfg.eval_ks, train_cfg.p_o, train_cfg.seed, result.curves,
                      config=config)
    if out_dir is not None:
        report.to_json(Path(out_dir) / "eval.json")
        report.to_csv(Path(out_dir) / "eval.csv")
        result.curves.to_csv(Path(out_dir) / "loss.csv")
    return model, result, report


def run_baselines(data: SplitData, model_cfg: ModelConfig, train_cfg: TrainConfig,
                  variants=("baseline1", "baseline2"), out_dir=None) -> dict[str, EvalReport]:
    """Train each variant under the same budget; one EvalReport per variant."""
    reports = {}
    for v in variants:
        mc = ModelConfig.from_dict({**model_cfg.to_dict(), "variant": v})
        tc = TrainConfig.from_dict({**train_cfg.to_dict(), "variant": v})
        sub = Path(out_dir) / v if out_dir is not None else None
        reports[v] = run_experiment(data, mc, tc, sub)[2]
    return reports


def load_model(path) -> tuple[BeamModel, dict]:
    """Rebuild a model from a checkpoint written by :func:`train`."""
    arrays, header = load_checkpoint(path)
    cfg = header.get("config") or {}
    if "model" not in cfg:
        raise CheckpointError(f"{path}: checkpoint carries no model config")
    model = BeamModel(ModelConfig.from_dict(cfg["model"]), seed=int(header.get("seed") or 0))
    model.load_arrays({k: v for k, v in arrays.items() if not k.startswith("__adam_")})
    return model, header
