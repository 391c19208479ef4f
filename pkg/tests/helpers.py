"""Shared oracles for the test modules (finite differences, synthetic benchmark runner)."""

from __future__ import annotations

import numpy as np

from dann_amc.data import fit_scaler, make_splits, synth_shift
from dann_amc.nn import BatchNorm, Dropout, GeLU, GradReversal, Linear, ReLU, softmax_cross_entropy
from dann_amc.train import TrainConfig, domain_probe, evaluate, train_baseline, train_dann

FD_STEP = 1e-5


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(|a|, |n|): the relative error of one gradient array."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to every entry of ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g


def _make_layer(kind: str, rng: np.random.Generator, d_in: int):
    if kind == "linear":
        return Linear(d_in, int(rng.integers(2, 6)), rng)
    if kind == "batchnorm":
        bn = BatchNorm(d_in)
        bn.gamma.value = rng.uniform(0.5, 1.5, d_in)
        bn.beta.value = rng.normal(size=d_in)
        return bn
    return {"relu": ReLU, "gelu": GeLU, "dropout": lambda: Dropout(0.3, 0),
            "grl": lambda: GradReversal(0.7)}[kind]()


def layer_gradcheck(kind: str, trial: int, mode: str = "train") -> float:
    """Worst relative error over the input and parameter gradients of one random layer.

    The loss is ``sum(R * layer(x))`` with a fixed random ``R``. For the
    reversal layer the reference is ``-lam`` times the numeric Jacobian of
    the (identity) forward map, since that is its defined backward rule.
    """
    rng = np.random.default_rng([trial, 42])
    n, d = int(rng.integers(3, 7)), int(rng.integers(2, 6))
    x = rng.normal(size=(n, d))
    if kind == "relu":   # keep inputs away from the kink
        x = x + 0.1 * np.sign(x)
    layer = _make_layer(kind, rng, d)
    y0, _ = layer.forward(x, mode, np.random.default_rng(trial))
    r = rng.normal(size=y0.shape)

    def loss():
        y, _ = layer.forward(x, mode, np.random.default_rng(trial))
        return float(np.sum(r * y))

    _, cache = layer.forward(x, mode, np.random.default_rng(trial))
    dx = layer.backward(cache, r)
    num_dx = numeric_grad(loss, x)
    if kind == "grl":
        num_dx = -layer.lam * num_dx
    errs = [rel_err(dx, num_dx)]
    for p in layer.params():
        errs.append(rel_err(p.grad, numeric_grad(loss, p.value)))
    return max(errs)


def softmax_ce_gradcheck(trial: int, n: int = 4, c: int = 5) -> float:
    rng = np.random.default_rng([trial, 43])
    logits = rng.normal(size=(n, c)) * 2.0
    labels = rng.integers(0, c, n)
    _, grad = softmax_cross_entropy(logits, labels)
    num = numeric_grad(lambda: softmax_cross_entropy(logits, labels)[0], logits)
    return rel_err(grad, num)


def benchmark_seed(seed: int, n_per_class: int, d: int, shift: float = 3.0, epochs: int = 50):
    """One seed of the synthetic-shift adaptation benchmark.

    Returns (baseline acc, DANN acc, DCA before, DCA after), accuracies in percent on target_eval.
    """
    src, tgt = synth_shift(n_per_class, d, shift, seed)
    plan = make_splits(src, tgt, seed)
    sc = fit_scaler(src.subset(plan.source_train))
    s_tr, s_va = sc.transform(src.subset(plan.source_train)), sc.transform(src.subset(plan.source_val))
    t_un, t_ev = sc.transform(tgt.subset(plan.target_unlabeled)), sc.transform(tgt.subset(plan.target_eval))
    cfg = TrainConfig(seed=seed, epochs=epochs)
    base, _ = train_baseline(s_tr, s_va, cfg, target_val=t_ev)
    dann, _ = train_dann(s_tr, s_va, t_un.features, cfg, target_val=t_ev)
    s_all, t_all = sc.transform(src).features, sc.transform(tgt).features
    return (evaluate(base, t_ev).overall_acc, evaluate(dann, t_ev).overall_acc,
            domain_probe(base.features(s_all), base.features(t_all), seed),
            domain_probe(dann.features(s_all), dann.features(t_all), seed))
