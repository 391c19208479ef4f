"""Baseline MLP and three-headed DANN assembled from nn-engine layers."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import NUM_CLASSES
from .errors import ShapeError
from .nn import BatchNorm, Dropout, GeLU, GradReversal, LayerStack, Linear, ReLU
from .nn import checkpoint as ckpt

FEATURE_DIM = 128
HEAD_HIDDEN = 64


@dataclass(frozen=True)
class ModelConfig:
    dropout: float = 0.3
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1


def _rngs(seed: int):
    init = np.random.default_rng([seed, 11])
    drop = np.random.default_rng([seed, 12])
    return init, lambda: int(drop.integers(2 ** 31))


def _block(d_in, d_out, act, init, drop_seed, cfg: ModelConfig, dropout=True):
    layers = [Linear(d_in, d_out, init), BatchNorm(d_out, cfg.bn_eps, cfg.bn_momentum), act()]
    if dropout:
        layers.append(Dropout(cfg.dropout, drop_seed()))
    return layers


class BaselineMLP:
    """input(d) -> 256 -> 128 -> 5, each hidden block Linear/BatchNorm/ReLU/Dropout."""

    arch = "baseline_mlp"
    feature_layers = 7  # through the second ReLU

    def __init__(self, d: int, seed: int = 0, config: ModelConfig = ModelConfig()):
        if d < 1:
            raise ValueError("input dimension must be >= 1")
        self.d, self.seed, self.config = int(d), int(seed), config
        init, drop_seed = _rngs(seed)
        layers = (_block(d, 256, ReLU, init, drop_seed, config)
                  + _block(256, FEATURE_DIM, ReLU, init, drop_seed, config)
                  + [Linear(FEATURE_DIM, NUM_CLASSES, init)])
        self.stack = LayerStack(layers, d, name="baseline")

    def stacks(self) -> dict[str, LayerStack]:
        return {"baseline": self.stack}

    def label_params(self):
        return self.stack.params()

    def params(self):
        return self.stack.params()

    def forward_logits(self, x, mode="train"):
        return self.stack.forward(x, mode)

    def backward_logits(self, cache, dlogits):
        return self.stack.backward(cache, dlogits)

    def features(self, x) -> np.ndarray:
        return self.stack.forward(x, "eval", upto=self.feature_layers)[0]

    def descriptor(self) -> dict:
        return {"arch": self.arch, "input_dim": self.d, "seed": self.seed, "config": asdict(self.config)}


@dataclass
class DannCache:
    features: np.ndarray
    extractor: object
    label: object
    domain: object


class DannModel:
    """Feature extractor (512/256/128, GeLU) feeding a label head and a GRL-guarded domain head."""

    arch = "dann"

    def __init__(self, d: int, seed: int = 0, config: ModelConfig = ModelConfig()):
        if d < 1:
            raise ValueError("input dimension must be >= 1")
        self.d, self.seed, self.config = int(d), int(seed), config
        init, drop_seed = _rngs(seed)
        ext = (_block(d, 512, GeLU, init, drop_seed, config)
               + _block(512, 256, GeLU, init, drop_seed, config)
               + _block(256, FEATURE_DIM, GeLU, init, drop_seed, config))
        self.extractor = LayerStack(ext, d, name="extractor")
        self.label_head = LayerStack(
            [Linear(FEATURE_DIM, HEAD_HIDDEN, init), ReLU(), Linear(HEAD_HIDDEN, NUM_CLASSES, init)],
            FEATURE_DIM, name="label_head")
        self.grl = GradReversal(0.0)
        self.domain_head = LayerStack(
            [self.grl, Linear(FEATURE_DIM, HEAD_HIDDEN, init), ReLU(), Linear(HEAD_HIDDEN, 2, init)],
            FEATURE_DIM, name="domain_head")

    def stacks(self) -> dict[str, LayerStack]:
        return {"extractor": self.extractor, "label_head": self.label_head, "domain_head": self.domain_head}

    def label_params(self):
        return self.extractor.params() + self.label_head.params()

    def params(self):
        return self.label_params() + self.domain_head.params()

    def forward_logits(self, x, mode="train"):
        f, cf = self.extractor.forward(x, mode)
        logits, cy = self.label_head.forward(f, mode)
        return logits, (cf, cy)

    def backward_logits(self, cache, dlogits):
        cf, cy = cache
        return self.extractor.backward(cf, self.label_head.backward(cy, dlogits))

    def features(self, x) -> np.ndarray:
        return self.extractor.forward(x, "eval")[0]

    def descriptor(self) -> dict:
        return {"arch": self.arch, "input_dim": self.d, "seed": self.seed, "config": asdict(self.config)}


def build_baseline(d: int, seed: int = 0, config: ModelConfig = ModelConfig()) -> BaselineMLP:
    return BaselineMLP(d, seed, config)


def build_dann(d: int, seed: int = 0, config: ModelConfig = ModelConfig()) -> DannModel:
    return DannModel(d, seed, config)


def dann_forward(model: DannModel, batch: np.ndarray, mode: str = "train", lam: float = 0.0,
                 rng: np.random.Generator | None = None):
    """Both heads on one shared feature tensor; ``lam`` is stored in the GRL for the next backward.

    Returns ``(features, label_logits, domain_logits, cache)``.
    """
    model.grl.lam = lam
    f, cf = model.extractor.forward(batch, mode, rng)
    logits, cy = model.label_head.forward(f, mode)
    dlogits, cd = model.domain_head.forward(f, mode)
    return f, logits, dlogits, DannCache(f, cf, cy, cd)


def dann_backward(model: DannModel, cache: DannCache, dlabel: np.ndarray | None,
                  ddomain: np.ndarray | None) -> np.ndarray:
    """Backpropagate label and/or domain logit gradients into all three parameter groups."""
    df = None
    if dlabel is not None:
        df = model.label_head.backward(cache.label, dlabel)
    if ddomain is not None:
        dd = model.domain_head.backward(cache.domain, ddomain)
        df = dd if df is None else df + dd
    if df is None:
        raise ValueError("need a label or domain gradient")
    return model.extractor.backward(cache.extractor, df)


def extract_features(model, x) -> np.ndarray:
    """128-wide eval-mode representation, row-aligned with ``x`` (array or Dataset)."""
    x = getattr(x, "features", x)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d:
        raise ShapeError(f"expected an (n, {model.d}) input, got {x.shape}")
    return model.features(x)


def save_model(model, path) -> None:
    ckpt.save(path, model.stacks(), meta={"architecture": model.descriptor()})


def load_model(path, expect: dict | None = None):
    """Rebuild a model from its checkpoint; ``expect`` fields must match the stored descriptor."""
    doc = ckpt.read(path)
    desc = doc["meta"]["architecture"]
    for k, v in (expect or {}).items():
        if desc.get(k) != v:
            raise ShapeError(f"checkpoint {k}={desc.get(k)!r}, expected {v!r}")
    cls = {"baseline_mlp": BaselineMLP, "dann": DannModel}[desc["arch"]]
    model = cls(desc["input_dim"], desc["seed"], ModelConfig(**desc["config"]))
    for name, stack in model.stacks().items():
        ckpt.load_stack(stack, doc["stacks"][name])
    return model
