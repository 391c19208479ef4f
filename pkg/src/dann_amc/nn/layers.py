"""Dense layers with explicit forward/backward passes.

Every layer's ``forward`` returns ``(output, cache)`` and ``backward`` takes that
cache back together with the upstream gradient. Parameter gradients are
*accumulated* into :class:`Param.grad`, so two forward passes through the same
layer (e.g. a source batch and a target batch) can both contribute before an
optimizer step. Call ``zero_grad`` between steps.

Modes
-----
``"train"``   batch statistics in batch norm (running stats updated), dropout on
``"eval"``    running statistics, dropout off
``"frozen"``  running statistics without updating them, dropout on
``"batch"``   batch statistics without updating the running ones, dropout on
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from ..errors import ShapeError, StateError

MODES = ("train", "eval", "frozen", "batch")

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Param:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad: np.ndarray | None = None

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise ShapeError(f"gradient for {self.name} has shape {g.shape}, expected {self.value.shape}")
        self.grad = g if self.grad is None else self.grad + g

    def __repr__(self) -> str:
        return f"Param({self.name}, shape={self.value.shape})"


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


class Layer:
    kind = "layer"

    def params(self) -> list[Param]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def config(self) -> dict:
        return {}

    def out_dim(self, in_dim: int) -> int:
        return in_dim

    def forward(self, x: np.ndarray, mode: str = "train", rng: np.random.Generator | None = None):
        raise NotImplementedError

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self) -> str:
        cfg = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({cfg})"


class Linear(Layer):
    """Fully connected layer ``y = x @ W + b`` with Kaiming-uniform init."""

    kind = "linear"

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        if in_dim < 1 or out_dim < 1:
            raise ValueError("linear layer dimensions must be >= 1")
        self.in_dim = int(in_dim)
        self.out_dim_ = int(out_dim)
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = math.sqrt(6.0 / in_dim)
        self.weight = Param("weight", rng.uniform(-bound, bound, size=(in_dim, out_dim)))
        self.bias = Param("bias", np.zeros(out_dim))

    def params(self):
        return [self.weight, self.bias]

    def config(self):
        return {"in_dim": self.in_dim, "out_dim": self.out_dim_}

    def out_dim(self, in_dim):
        if in_dim != self.in_dim:
            raise ShapeError(f"expected {self.in_dim} input columns, got {in_dim}")
        return self.out_dim_

    def forward(self, x, mode="train", rng=None):
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"expected {self.in_dim} input columns, got {x.shape[1]}")
        return x @ self.weight.value + self.bias.value, x

    def backward(self, cache, dy):
        x = cache
        self.weight.accumulate(x.T @ dy)
        self.bias.accumulate(dy.sum(axis=0))
        return dy @ self.weight.value.T


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.dim = int(dim)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.gamma = Param("gamma", np.ones(dim))
        self.beta = Param("beta", np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def config(self):
        return {"dim": self.dim, "eps": self.eps, "momentum": self.momentum}

    def out_dim(self, in_dim):
        if in_dim != self.dim:
            raise ShapeError(f"expected {self.dim} input columns, got {in_dim}")
        return self.dim

    def forward(self, x, mode="train", rng=None):
        if x.shape[1] != self.dim:
            raise ShapeError(f"expected {self.dim} input columns, got {x.shape[1]}")
        if mode in ("train", "batch"):
            n = x.shape[0]
            if n < 2:
                raise ShapeError("batch norm in train mode needs a batch of at least 2 rows")
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * inv_std
            if mode == "train":
                m = self.momentum
                self.running_mean = (1.0 - m) * self.running_mean + m * mu
                self.running_var = (1.0 - m) * self.running_var + m * var * (n / (n - 1))
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv_std
        y = self.gamma.value * xhat + self.beta.value
        return y, (mode in ("train", "batch"), xhat, inv_std)

    def backward(self, cache, dy):
        batch_stats, xhat, inv_std = cache
        self.gamma.accumulate((dy * xhat).sum(axis=0))
        self.beta.accumulate(dy.sum(axis=0))
        dxhat = dy * self.gamma.value
        if not batch_stats:
            return dxhat * inv_std
        n = dy.shape[0]
        return (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, mode="train", rng=None):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, cache, dy):
        return np.where(cache, dy, 0.0)


class GeLU(Layer):
    """Exact GeLU, ``x * Phi(x)`` with the Gaussian CDF written via erf."""

    kind = "gelu"

    def forward(self, x, mode="train", rng=None):
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        return x * cdf, (x, cdf)

    def backward(self, cache, dy):
        x, cdf = cache
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return dy * (cdf + x * pdf)


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by ``1/(1-rate)``."""

    kind = "dropout"

    def __init__(self, rate: float = 0.3, seed: int = 0):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = float(rate)
        self.seed = int(seed)
        self.rng = np.random.default_rng(seed)

    def config(self):
        return {"rate": self.rate, "seed": self.seed}

    def forward(self, x, mode="train", rng=None):
        if mode == "eval" or self.rate == 0.0:
            return x, None
        r = rng if rng is not None else self.rng
        mask = (r.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, cache, dy):
        return dy if cache is None else dy * cache


class GradReversal(Layer):
    """Identity on the way forward; multiplies the gradient by ``-lam`` on the way back.

    ``lam`` is read at backward time, so it can be updated between the forward
    pass and the backward pass of the same step.
    """

    kind = "grad_reversal"

    def __init__(self, lam: float = 0.0):
        self.lam = lam

    @property
    def lam(self) -> float:
        return self._lam

    @lam.setter
    def lam(self, value: float) -> None:
        value = float(value)
        if not value >= 0.0:
            raise ValueError(f"reversal strength must be >= 0, got {value}")
        self._lam = value

    def forward(self, x, mode="train", rng=None):
        return x, None

    def backward(self, cache, dy):
        return -self._lam * dy


LAYER_TYPES = {cls.kind: cls for cls in (Linear, BatchNorm, ReLU, GeLU, Dropout, GradReversal)}


@dataclass
class StackCache:
    stack_id: int
    out_shape: tuple
    caches: list = field(default_factory=list)


class LayerStack:
    """An ordered sequence of layers with a declared input width."""

    def __init__(self, layers: list[Layer], in_dim: int, name: str = "stack"):
        self.layers = list(layers)
        self.in_dim = int(in_dim)
        self.name = name
        dim = self.in_dim
        for i, layer in enumerate(self.layers):
            try:
                dim = layer.out_dim(dim)
            except ShapeError as exc:
                raise ShapeError(f"{name} layer {i} ({layer.kind}): {exc}") from None
        self.out_dim = dim
        self._last_cache: StackCache | None = None

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad = None

    def forward(self, x: np.ndarray, mode: str = "train", rng: np.random.Generator | None = None,
                upto: int | None = None):
        """Run the stack (or its first ``upto`` layers) and return ``(output, cache)``."""
        _check_mode(mode)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"{self.name}: expected a 2-D batch, got shape {x.shape}")
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"{self.name} layer 0 ({self.layers[0].kind if self.layers else 'input'}): "
                             f"expected {self.in_dim} input columns, got {x.shape[1]}")
        layers = self.layers if upto is None else self.layers[:upto]
        caches = []
        for i, layer in enumerate(layers):
            try:
                x, c = layer.forward(x, mode, rng)
            except ShapeError as exc:
                raise ShapeError(f"{self.name} layer {i} ({layer.kind}): {exc}") from None
            if not np.isfinite(x).all():
                raise FloatingPointError(f"{self.name} layer {i} ({layer.kind}) produced non-finite output")
            caches.append(c)
        cache = StackCache(id(self), x.shape, caches)
        if upto is None:
            self._last_cache = cache
        return x, cache

    def backward(self, cache: StackCache | None, dy: np.ndarray | None = None) -> np.ndarray:
        """Backpropagate ``dy``; parameter gradients accumulate into the layers.

        ``backward(dy)`` with no cache uses the most recent full forward pass.
        """
        if dy is None and not isinstance(cache, StackCache):
            cache, dy = self._last_cache, cache
        if cache is None:
            raise StateError(f"{self.name}: backward called before forward")
        if cache.stack_id != id(self):
            raise StateError(f"{self.name}: cache belongs to a different stack")
        dy = np.asarray(dy, dtype=np.float64)
        if dy.shape != cache.out_shape:
            raise ShapeError(f"{self.name}: upstream gradient has shape {dy.shape}, "
                             f"forward output was {cache.out_shape}")
        for i in range(len(cache.caches) - 1, -1, -1):
            dy = self.layers[i].backward(cache.caches[i], dy)
            if not np.isfinite(dy).all():
                raise FloatingPointError(f"{self.name} layer {i} ({self.layers[i].kind}) produced non-finite gradient")
        return dy

    def __repr__(self):
        inner = ", ".join(repr(layer) for layer in self.layers)
        return f"LayerStack({self.name}, in_dim={self.in_dim}: {inner})"
