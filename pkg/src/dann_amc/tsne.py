"""Exact O(n^2) t-SNE and plot export for feature-space alignment figures."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import LABELS

log = logging.getLogger(__name__)

_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    entropy_tol: float = 1e-5
    seed: int = 0


@dataclass
class Embedding2D:
    points: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    kl_trace: list[float] = field(default_factory=list)

    def __len__(self):
        return self.points.shape[0]


def squared_distances(x: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def conditional_affinities(dist: np.ndarray, perplexity: float, tol: float = 1e-5,
                           max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic Gaussian affinities with per-row precision set by bisection.

    Each row's Shannon entropy (nats) matches ``log(perplexity)``. Returns the
    conditional matrix (zero diagonal) and the precisions ``beta = 1/(2 sigma^2)``.
    """
    n = dist.shape[0]
    target = math.log(perplexity)
    off = ~np.eye(n, dtype=bool)
    # shift each row by its nearest-neighbour distance for numerical range
    dmin = np.where(off, dist, np.inf).min(axis=1, keepdims=True)
    dd = np.where(off, dist - dmin, 0.0)
    beta = np.ones(n)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    active = np.ones(n, dtype=bool)
    p = np.zeros_like(dist)
    for _ in range(max_iter):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        e = np.exp(-dd[rows] * beta[rows, None]) * off[rows]
        s = e.sum(axis=1)
        pr = e / s[:, None]
        h = np.log(s) + beta[rows] * (dd[rows] * pr).sum(axis=1)
        p[rows] = pr
        diff = h - target
        done = np.abs(diff) <= tol
        up = diff > 0     # entropy too high: sharpen
        b = beta[rows]
        lo[rows] = np.where(up & ~done, b, lo[rows])
        hi[rows] = np.where(~up & ~done, b, hi[rows])
        new = np.where(np.isinf(hi[rows]), b * 2.0, (lo[rows] + hi[rows]) / 2.0)
        beta[rows] = np.where(done, b, new)
        active[rows[done]] = False
    if active.any():
        warnings.warn(f"perplexity search did not converge for {active.sum()} points", stacklevel=2)
    return p, beta


def joint_affinities(cond: np.ndarray) -> np.ndarray:
    n = cond.shape[0]
    return (cond + cond.T) / (2.0 * n)


def kl_divergence(p: np.ndarray, y: np.ndarray) -> float:
    num = 1.0 / (1.0 + squared_distances(y))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), _EPS)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def tsne(features: np.ndarray, config: TsneConfig = TsneConfig(), labels=None, domains=None,
         init: np.ndarray | None = None) -> Embedding2D:
    """Embed ``features`` in 2-D.

    ``init`` overrides the seeded N(0, 1e-4) start; it is the hook for
    permutation tests (permute the data and the init together).
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if x.ndim != 2 or n < 10:
        raise ValueError("t-SNE needs a 2-D array with at least 10 rows")
    if not config.perplexity < (n - 1) / 3.0:
        raise ValueError(f"perplexity {config.perplexity} must be < (n - 1)/3 = {(n - 1) / 3:.2f}")
    rng = np.random.default_rng([config.seed, 500])
    dist = squared_distances(x)
    off = ~np.eye(n, dtype=bool)
    if np.any(dist[off] == 0.0):
        warnings.warn("duplicate rows in t-SNE input; applying 1e-10 jitter", stacklevel=2)
        x = x + 1e-10 * np.random.default_rng([config.seed, 501]).standard_normal(x.shape)
        dist = squared_distances(x)
    cond, _ = conditional_affinities(dist, config.perplexity, config.entropy_tol)
    p = joint_affinities(cond)

    if init is None:
        y = 1e-4 * rng.standard_normal((n, 2))
    else:
        y = np.array(init, dtype=np.float64)
        if y.shape != (n, 2):
            raise ValueError(f"init must have shape ({n}, 2)")
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_trace = []
    for it in range(config.iterations):
        early = it < config.exaggeration_iters
        pe = p * config.exaggeration if early else p
        mom = config.momentum if early else config.final_momentum
        num = 1.0 / (1.0 + squared_distances(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), _EPS)
        w = (pe - q) * num
        grad = 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)
        same = np.sign(grad) == np.sign(update)
        gains = np.maximum(np.where(same, gains * 0.8, gains + 0.2), 0.01)
        update = mom * update - config.learning_rate * gains * grad
        y = y + update
        y = y - y.mean(axis=0)
        kl_trace.append(kl_divergence(p, y))
    if not np.isfinite(y).all():
        raise FloatingPointError("t-SNE diverged")
    labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels)
    domains = np.full(n, "", dtype=object) if domains is None else np.asarray(domains, dtype=object)
    return Embedding2D(y, labels, domains, kl_trace)


def stratified_subsample(labels, domains, per_group: int, seed: int = 0) -> np.ndarray:
    """Indices with at most ``per_group`` rows from every (class, domain) pair, in input order."""
    labels = np.asarray(labels)
    domains = np.asarray(domains, dtype=object)
    rng = np.random.default_rng([seed, 502])
    keep = []
    for c in np.unique(labels):
        for dom in sorted(set(domains.tolist())):
            idx = np.flatnonzero((labels == c) & (domains == dom))
            if len(idx) > per_group:
                idx = rng.choice(idx, per_group, replace=False)
            keep.append(idx)
    return np.sort(np.concatenate(keep)) if keep else np.array([], dtype=np.int64)


def _check(embedding: Embedding2D) -> None:
    if len(embedding) == 0:
        raise ValueError("empty embedding")
    if not np.isfinite(embedding.points).all():
        raise ValueError("embedding has non-finite points")


def _class_name(c) -> str:
    c = int(c)
    return LABELS[c] if 0 <= c < len(LABELS) else str(c)


def export_plot_data(embedding: Embedding2D, path) -> None:
    _check(embedding)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "class", "domain"])
        for (px, py), c, dom in zip(embedding.points, embedding.labels, embedding.domains):
            w.writerow([repr(float(px)), repr(float(py)), _class_name(c), dom])


def render_scatter(embedding: Embedding2D, path, title: str = "") -> None:
    """Self-contained SVG scatter: colour per class, marker per domain."""
    _check(embedding)
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.lines import Line2D

    markers = ["o", "^", "s", "D", "v"]
    colors = plt.get_cmap("tab10").colors
    doms = sorted(set(embedding.domains.tolist()))
    classes = sorted(set(int(c) for c in embedding.labels))
    with matplotlib.rc_context({"svg.hashsalt": "dann-amc", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 5))
        for di, dom in enumerate(doms):
            for c in classes:
                m = (embedding.domains == dom) & (embedding.labels == c)
                if m.any():
                    ax.scatter(embedding.points[m, 0], embedding.points[m, 1], s=10, alpha=0.7,
                               marker=markers[di % len(markers)], color=colors[c % len(colors)])
        handles = [Line2D([], [], ls="", marker="o", color=colors[c % len(colors)], label=_class_name(c))
                   for c in classes]
        handles += [Line2D([], [], ls="", marker=markers[i % len(markers)], color="gray", label=dom or "-")
                    for i, dom in enumerate(doms)]
        ax.legend(handles=handles, fontsize=7, loc="best")
        ax.set_xticks([])
        ax.set_yticks([])
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(Path(path), format="svg", metadata={"Date": None})
        plt.close(fig)
