"""Baseline and DANN training loops, the sigmoid lambda schedule, and the metric suite."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import LABELS, NUM_CLASSES
from .data import Dataset
from .errors import ShapeError
from .models import BaselineMLP, DannModel, build_baseline, build_dann
from .nn import Adam, BatchNorm, Linear, LayerStack, softmax_cross_entropy

log = logging.getLogger(__name__)

EARLY_STOP_MODES = ("target_val", "source_val", "off")
DOMAIN_PASS_MODE = "batch"


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 128
    epochs: int = 50
    lambda_gamma: float = 10.0
    early_stop: str = "target_val"
    patience: int = 10
    seed: int = 0
    lambda_fixed: float | None = None   # pin lambda for the whole run (ablations)

    def __post_init__(self):
        if self.early_stop not in EARLY_STOP_MODES:
            raise ValueError(f"early_stop must be one of {EARLY_STOP_MODES}, got {self.early_stop!r}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs two rows)")
        if self.epochs < 1 or self.patience < 1:
            raise ValueError("epochs and patience must be >= 1")
        if self.lambda_gamma <= 0:
            raise ValueError("lambda_gamma must be > 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def lambda_at(p: float, gamma: float = 10.0) -> float:
    """Sigmoid ramp ``2 / (1 + exp(-gamma p)) - 1`` from 0 at p = 0 towards 1."""
    if not 0.0 <= p <= 1.0:
        warnings.warn(f"training progress {p} outside [0, 1]; clamped", stacklevel=2)
        p = min(max(p, 0.0), 1.0)
    return 2.0 / (1.0 + math.exp(-gamma * p)) - 1.0


@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    monitor: str = "off"
    stopped_early: bool = False

    def column(self, key: str) -> list:
        return [row[key] for row in self.epochs]


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


def _steps_per_epoch(n: int, batch_size: int) -> int:
    full, rem = divmod(n, batch_size)
    return full + (1 if rem >= 2 else 0)


class _TargetCycler:
    """Endless stream of target mini-batches; each pass over the data is a fresh permutation."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n, self.size, self.rng = n, min(batch_size, n), rng
        self.perm, self.pos = rng.permutation(n), 0

    def next(self) -> np.ndarray:
        if self.pos + self.size > self.n:
            self.perm, self.pos = self.rng.permutation(self.n), 0
        idx = self.perm[self.pos:self.pos + self.size]
        self.pos += self.size
        return idx


def _snapshot(model) -> list:
    snap = [p.value.copy() for p in model.params()]
    for stack in model.stacks().values():
        for layer in stack.layers:
            if isinstance(layer, BatchNorm):
                snap.append((layer.running_mean.copy(), layer.running_var.copy()))
    return snap


def _restore(model, snap: list) -> None:
    params = model.params()
    for p, v in zip(params, snap):
        p.value = v.copy()
    bufs = iter(snap[len(params):])
    for stack in model.stacks().values():
        for layer in stack.layers:
            if isinstance(layer, BatchNorm):
                rm, rv = next(bufs)
                layer.running_mean, layer.running_var = rm.copy(), rv.copy()


def predict(model, x: np.ndarray) -> np.ndarray:
    logits, _ = model.forward_logits(np.asarray(x, dtype=np.float64), "eval")
    return logits.argmax(axis=1)


def accuracy(model, ds: Dataset) -> float:
    return float(np.mean(predict(model, ds.features) == ds.labels))


class _EarlyStopper:
    def __init__(self, model, mode: str, patience: int):
        self.model, self.mode, self.patience = model, mode, patience
        self.best = -math.inf
        self.best_epoch = None
        self.snap = None
        self.waited = 0

    def update(self, epoch: int, value: float | None) -> bool:
        """Record an epoch; return True when training should stop."""
        if self.mode == "off":
            return False
        if value > self.best:
            self.best, self.best_epoch, self.waited = value, epoch, 0
            self.snap = _snapshot(self.model)
            return False
        self.waited += 1
        return self.waited >= self.patience

    def finish(self, history: History) -> None:
        if self.snap is not None:
            _restore(self.model, self.snap)
            history.best_epoch = self.best_epoch


def _epoch_row(model, epoch, losses, lam, source_val, target_val):
    row = {"epoch": epoch, **{k: float(np.mean(v)) for k, v in losses.items()}, "lambda": lam,
           "source_val_acc": accuracy(model, source_val)}
    row["target_val_acc"] = accuracy(model, target_val) if target_val is not None else None
    return row


def _check_split(name: str, ds: Dataset | None) -> None:
    if ds is None or len(ds) == 0:
        raise ValueError(f"{name} split is empty")


def train_baseline(source_train: Dataset, source_val: Dataset, config: TrainConfig,
                   model: BaselineMLP | DannModel | None = None,
                   target_val: Dataset | None = None):
    """Supervised training on source labels only.

    ``model`` defaults to a fresh :class:`BaselineMLP`; any model with the
    label-path interface (including a :class:`DannModel`, whose domain head is
    then left untouched) can be passed. The retained checkpoint is the best
    epoch by source-validation accuracy unless early stopping is off.
    """
    _check_split("source_train", source_train)
    _check_split("source_val", source_val)
    if model is None:
        model = build_baseline(source_train.dim, config.seed)
    mode = "off" if config.early_stop == "off" else "source_val"
    history = History(monitor=mode)
    opt = Adam(model.label_params(), lr=config.lr)
    shuffle = np.random.default_rng([config.seed, 100])
    stopper = _EarlyStopper(model, mode, config.patience)
    x, y = source_train.features, source_train.labels
    for epoch in range(1, config.epochs + 1):
        losses = {"label_loss": []}
        for idx in _batches(len(x), config.batch_size, shuffle):
            opt.zero_grad()
            logits, cache = model.forward_logits(x[idx], "train")
            loss, grad = softmax_cross_entropy(logits, y[idx])
            model.backward_logits(cache, grad)
            opt.step()
            losses["label_loss"].append(loss)
        row = _epoch_row(model, epoch, losses, None, source_val, target_val)
        history.epochs.append(row)
        if stopper.update(epoch, row["source_val_acc"]):
            history.stopped_early = True
            break
    stopper.finish(history)
    return model, history


def train_dann(source_train: Dataset, source_val: Dataset, target_x: np.ndarray | None,
               config: TrainConfig, model: DannModel | None = None,
               target_val: Dataset | None = None):
    """Adversarial training: label loss on source plus GRL-reversed domain loss on both domains.

    ``target_x`` is the unlabeled target partition as a bare feature array, so
    target labels are never visible to the optimiser. ``target_val`` (labeled)
    is only used for monitoring and, with ``early_stop="target_val"``, for
    checkpoint selection.

    Each step pairs one source batch with one target batch. The source batch
    runs through the extractor in train mode for the label loss. The domain
    loss uses a second pass of the stacked source and target batches with
    joint batch statistics that leave the running statistics alone, and its
    own dropout stream. So with lambda = 0 the label path is bit-identical to
    :func:`train_baseline` on the same architecture.
    """
    _check_split("source_train", source_train)
    _check_split("source_val", source_val)
    if model is None:
        model = build_dann(source_train.dim, config.seed)
    if target_x is None or len(target_x) == 0:
        warnings.warn("empty target set: training without the domain loss", stacklevel=2)
        return train_baseline(source_train, source_val, config, model=model, target_val=target_val)
    target_x = np.asarray(target_x, dtype=np.float64)
    if target_x.ndim != 2 or target_x.shape[1] != source_train.dim:
        raise ShapeError(f"target features must be (n, {source_train.dim}), got {target_x.shape}")

    mode = config.early_stop
    if mode == "target_val" and target_val is None:
        warnings.warn("early_stop='target_val' without a labeled target set; using source_val", stacklevel=2)
        mode = "source_val"
    history = History(monitor=mode)
    opt = Adam(model.params(), lr=config.lr)
    shuffle = np.random.default_rng([config.seed, 100])
    cycler = _TargetCycler(len(target_x), config.batch_size, np.random.default_rng([config.seed, 101]))
    domain_drop = np.random.default_rng([config.seed, 102])
    stopper = _EarlyStopper(model, mode, config.patience)

    x, y = source_train.features, source_train.labels
    total_steps = config.epochs * _steps_per_epoch(len(x), config.batch_size)
    step = 0
    for epoch in range(1, config.epochs + 1):
        losses = {"label_loss": [], "domain_loss_source": [], "domain_loss_target": [], "total_loss": []}
        for idx in _batches(len(x), config.batch_size, shuffle):
            if config.lambda_fixed is not None:
                lam = float(config.lambda_fixed)
            else:
                lam = lambda_at(step / total_steps, config.lambda_gamma)
            opt.zero_grad()
            logits, cache = model.forward_logits(x[idx], "train")
            ly, g_label = softmax_cross_entropy(logits, y[idx])
            model.backward_logits(cache, g_label)

            # domain pass: source and target share one set of batch statistics
            tidx = cycler.next()
            model.grl.lam = lam
            ns = len(idx)
            feats, cf = model.extractor.forward(np.vstack([x[idx], target_x[tidx]]), DOMAIN_PASS_MODE, domain_drop)
            dom, cd = model.domain_head.forward(feats, "train")
            lds, g_ds = softmax_cross_entropy(dom[:ns], np.zeros(ns, dtype=np.int64))
            ldt, g_dt = softmax_cross_entropy(dom[ns:], np.ones(len(tidx), dtype=np.int64))
            model.extractor.backward(cf, model.domain_head.backward(cd, np.vstack([g_ds, g_dt])))
            opt.step()

            total = ly - lam * (lds + ldt)
            history.steps.append({"step": step, "lambda": lam, "label_loss": ly, "domain_loss_source": lds,
                                  "domain_loss_target": ldt, "total_loss": total})
            for k, v in zip(losses, (ly, lds, ldt, total)):
                losses[k].append(v)
            step += 1
        row = _epoch_row(model, epoch, losses, lam, source_val, target_val)
        history.epochs.append(row)
        monitored = row["target_val_acc"] if mode == "target_val" else row["source_val_acc"]
        if stopper.update(epoch, monitored):
            history.stopped_early = True
            break
    stopper.finish(history)
    return model, history


@dataclass
class MetricsReport:
    per_class_acc: list[float]
    avg_acc: float
    overall_acc: float
    confusion: np.ndarray
    counts: list[int]
    flags: list[str] = field(default_factory=list)
    dca_before: float | None = None
    dca_after: float | None = None
    abs_improvement: float | None = None
    pct_improvement: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = self.confusion.tolist()
        d["per_class_acc"] = [None if math.isnan(v) else v for v in self.per_class_acc]
        d["labels"] = list(LABELS)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = {k: v for k, v in d.items() if k != "labels"}
        d["confusion"] = np.array(d["confusion"], dtype=np.int64)
        d["per_class_acc"] = [math.nan if v is None else v for v in d["per_class_acc"]]
        return cls(**d)

    def table(self) -> str:
        lines = [f"{'Modulation':<10} {'n':>6} {'Acc (%)':>8}"]
        for name, n, acc in zip(LABELS, self.counts, self.per_class_acc):
            lines.append(f"{name:<10} {n:>6} {'-' if math.isnan(acc) else f'{acc:.2f}':>8}")
        lines.append(f"{'Average':<10} {'':>6} {self.avg_acc:>8.2f}")
        lines.append(f"{'Overall':<10} {sum(self.counts):>6} {self.overall_acc:>8.2f}")
        return "\n".join(lines)


def report_from_predictions(y_true, y_pred) -> MetricsReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ShapeError("need equally sized, non-empty label and prediction arrays")
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    counts = confusion.sum(axis=1)
    per_class, flags = [], []
    for c in range(NUM_CLASSES):
        if counts[c] == 0:
            per_class.append(math.nan)
            flags.append(f"class_absent:{LABELS[c]}")
        else:
            per_class.append(100.0 * confusion[c, c] / counts[c])
    defined = [v for v in per_class if not math.isnan(v)]
    avg = sum(defined) / len(defined)
    overall = 100.0 * np.trace(confusion) / y_true.size
    return MetricsReport(per_class, float(avg), float(overall), confusion, counts.tolist(), flags)


def evaluate(model, ds: Dataset) -> MetricsReport:
    """Accuracy fields (percent) and the 5x5 confusion matrix on ``ds``."""
    return report_from_predictions(ds.labels, predict(model, ds.features))


def improvement(baseline_acc: float, dann_acc: float) -> tuple[float, float]:
    """Absolute and relative (percent) gain of DANN over the baseline."""
    absolute = dann_acc - baseline_acc
    if baseline_acc == 0:
        warnings.warn("baseline accuracy is 0: percent improvement undefined", stacklevel=2)
        return absolute, math.nan
    return absolute, 100.0 * absolute / baseline_acc


def domain_probe(features_source: np.ndarray, features_target: np.ndarray, seed: int = 0,
                 epochs: int = 200, lr: float = 1e-2, batch_size: int = 128) -> float:
    """Held-out accuracy of a fresh linear source-vs-target classifier (DCA).

    Both domains are subsampled to equal size so chance level is 0.5. The
    split is a stratified 70/30; inputs are standardised with train-split
    statistics. Only copies of the features are touched.
    """
    fs = np.asarray(features_source, dtype=np.float64)
    ft = np.asarray(features_target, dtype=np.float64)
    if fs.ndim != 2 or ft.ndim != 2 or fs.shape[1] != ft.shape[1]:
        raise ShapeError(f"feature widths differ: {fs.shape} vs {ft.shape}")
    if min(len(fs), len(ft)) < 20:
        raise ValueError("domain probe needs at least 20 rows per domain")
    rng = np.random.default_rng([seed, 300])
    m = min(len(fs), len(ft))
    fs = fs[rng.permutation(len(fs))[:m]]
    ft = ft[rng.permutation(len(ft))[:m]]
    n_train = int(round(0.7 * m))
    xtr = np.vstack([fs[:n_train], ft[:n_train]])
    ytr = np.repeat([0, 1], n_train)
    xte = np.vstack([fs[n_train:], ft[n_train:]])
    yte = np.repeat([0, 1], m - n_train)
    mu = xtr.mean(axis=0)
    sd = np.maximum(xtr.std(axis=0), 1e-12)
    xtr, xte = (xtr - mu) / sd, (xte - mu) / sd

    probe = LayerStack([Linear(xtr.shape[1], 2, np.random.default_rng([seed, 301]))], xtr.shape[1], name="probe")
    opt = Adam(probe.params(), lr=lr)
    for _ in range(epochs):
        for idx in _batches(len(xtr), batch_size, rng):
            opt.zero_grad()
            logits, cache = probe.forward(xtr[idx], "train")
            _, grad = softmax_cross_entropy(logits, ytr[idx])
            probe.backward(cache, grad)
            opt.step()
    logits, _ = probe.forward(xte, "eval")
    return float(np.mean(logits.argmax(axis=1) == yte))
