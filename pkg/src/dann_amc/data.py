"""Dataset loading, source-only standardisation, stratified splits and a synthetic-shift testbed."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import LABELS, NUM_CLASSES
from .errors import DataError, ShapeError, StateError

LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}

_NUM = r"(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?"
_COMPLEX = re.compile(rf"^(?P<re>[+-]?{_NUM})(?P<im>[+-](?:{_NUM})?)[ij]$")
_IMAG = re.compile(rf"^(?P<im>[+-]?(?:{_NUM})?)[ij]$")


def parse_cell(text: str) -> float:
    """Parse a numeric cell; complex forms (``a+bi``, ``a-bj``, ``bi``) become their modulus."""
    s = text.strip().replace(" ", "")
    if not s:
        raise ValueError("empty cell")
    try:
        value = float(s)
    except ValueError:
        m = _COMPLEX.match(s)
        if m:
            re_part = float(m["re"])
            im = m["im"]
        else:
            m = _IMAG.match(s)
            if not m:
                raise ValueError(f"cannot parse {text!r}") from None
            re_part = 0.0
            im = m["im"]
        im_part = float(im + "1") if im in ("", "+", "-") else float(im)
        value = math.hypot(re_part, im_part)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def encode_label(raw: str) -> int:
    key = raw.strip().upper().replace("-", "").replace("_", "").replace(" ", "")
    if key in LABEL_INDEX:
        return LABEL_INDEX[key]
    if key.isdigit() and int(key) < NUM_CLASSES:
        return int(key)
    raise DataError(f"unknown label {raw!r}; valid labels are {', '.join(LABELS)}")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    domain: str = ""
    band: str = ""
    names: tuple = ()

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if f.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {f.shape}")
        if y.shape != (f.shape[0],):
            raise ShapeError(f"{f.shape[0]} rows but {y.shape} labels")
        if y.size and (y.min() < 0 or y.max() >= NUM_CLASSES):
            raise DataError(f"labels must lie in [0, {NUM_CLASSES})")
        if not np.isfinite(f).all():
            r, c = np.argwhere(~np.isfinite(f))[0]
            raise DataError(f"non-finite feature at row {r}, column {c}")
        names = tuple(self.names) or tuple(f"f{i}" for i in range(f.shape[1]))
        if len(names) != f.shape[1]:
            raise ShapeError(f"{len(names)} column names for {f.shape[1]} columns")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "names", names)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, features=self.features[idx], labels=self.labels[idx])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()


def from_feature_matrix(fm) -> Dataset:
    return Dataset(fm.values, fm.labels, fm.domain, fm.band, tuple(fm.names))


def load_csv(path, label_column: str = "label", domain: str = "", band: str = "") -> Dataset:
    """Read a feature CSV: header row, numeric or complex-string cells, one label column.

    Columns other than the label column are features; a ``domain`` column, if
    present, is ignored for features and used as the tag when none is given.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_column in header:
            li = header.index(label_column)
        elif label_column == "label":
            li = len(header) - 1
        else:
            raise DataError(f"{path}: no label column {label_column!r} in header")
        di = header.index("domain") if "domain" in header and header[li] != "domain" else None
        feat_cols = [j for j in range(len(header)) if j not in (li, di)]
        rows, labels, tags = [], [], set()
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{r}: expected {len(header)} cells, got {len(row)}")
            vals = []
            for j in feat_cols:
                try:
                    vals.append(parse_cell(row[j]))
                except ValueError as exc:
                    raise DataError(f"{path}: row {r}, column {j + 1} ({header[j]}): {exc}") from None
            try:
                labels.append(encode_label(row[li]))
            except DataError as exc:
                raise DataError(f"{path}: row {r}: {exc}") from None
            if di is not None:
                tags.add(row[di].strip())
            rows.append(vals)
    if not domain and len(tags) == 1:
        domain = tags.pop()
    feats = np.array(rows, dtype=np.float64).reshape(len(rows), len(feat_cols))
    return Dataset(feats, np.array(labels, dtype=np.int64), domain, band, tuple(header[j] for j in feat_cols))


def export_csv(ds: Dataset, path, label_column: str = "label") -> None:
    """Write ``ds`` in the loader's format; ``repr`` floats make the round trip exact."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(ds.names) + [label_column])
        for row, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [LABELS[y]])


class StandardScaler:
    """Per-column ``(x - mean) / max(std, std_floor)`` with population std."""

    def __init__(self, std_floor: float = 1e-12):
        self.std_floor = std_floor
        self.means: np.ndarray | None = None
        self.stds: np.ndarray | None = None
        self.fitted_on: str | None = None
        self.transformed: list[str] = []

    @property
    def fitted(self) -> bool:
        return self.means is not None

    def fit(self, ds: Dataset) -> "StandardScaler":
        if self.fitted:
            raise StateError(f"scaler already fitted on {self.fitted_on!r}")
        if len(ds) == 0:
            raise ValueError("cannot fit a scaler on an empty dataset")
        x = ds.features
        means = x.mean(axis=0)
        stds = x.std(axis=0)
        const = np.ptp(x, axis=0) == 0
        # exact column value keeps a constant column at exactly zero after transform
        means[const] = x[0, const]
        stds[const] = 0.0
        self.means, self.stds = means, stds
        self.fitted_on = ds.domain
        return self

    def _scale(self) -> np.ndarray:
        return np.maximum(self.stds, self.std_floor)

    def _check(self, ds: Dataset) -> None:
        if not self.fitted:
            raise StateError("scaler is not fitted")
        if ds.dim != self.means.shape[0]:
            raise ShapeError(f"scaler fitted on {self.means.shape[0]} columns, dataset has {ds.dim}")

    def transform(self, ds: Dataset) -> Dataset:
        self._check(ds)
        self.transformed.append(ds.domain)
        return replace(ds, features=(ds.features - self.means) / self._scale())

    def inverse_transform(self, ds: Dataset) -> Dataset:
        self._check(ds)
        return replace(ds, features=ds.features * self._scale() + self.means)

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "stds": self.stds.tolist(),
                "std_floor": self.std_floor, "fitted_on": self.fitted_on}


def fit_scaler(source: Dataset) -> StandardScaler:
    return StandardScaler().fit(source)


def transform(scaler: StandardScaler, ds: Dataset) -> Dataset:
    return scaler.transform(ds)


@dataclass
class SplitPlan:
    source_train: np.ndarray
    source_val: np.ndarray
    target_unlabeled: np.ndarray
    target_eval: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {"seed": self.seed, **{k: getattr(self, k).tolist() for k in
                                      ("source_train", "source_val", "target_unlabeled", "target_eval")}}


def _by_class(labels: np.ndarray, rng: np.random.Generator) -> list[np.ndarray]:
    return [rng.permutation(np.flatnonzero(labels == c)) for c in range(NUM_CLASSES)]


def make_splits(source: Dataset, target: Dataset, seed: int = 0, val_fraction: float = 0.2) -> SplitPlan:
    """Stratified 80/20 source split and 50/50 target split (odd counts favour the unlabeled part)."""
    if len(source) == 0 or len(target) == 0:
        raise ValueError("source and target must be non-empty")
    missing = [LABELS[c] for c in range(NUM_CLASSES) if not np.any(source.labels == c)]
    if missing:
        raise DataError(f"source is missing classes {missing}")
    rng = np.random.default_rng([seed, 0])
    train, val = [], []
    for idx in _by_class(source.labels, rng):
        n_val = int(math.floor(val_fraction * len(idx) + 0.5))
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    rng = np.random.default_rng([seed, 1])
    unl, ev = [], []
    extra_to_unlabeled = True
    for idx in _by_class(target.labels, rng):
        half = len(idx) // 2
        if len(idx) % 2:
            half += int(extra_to_unlabeled)
            extra_to_unlabeled = not extra_to_unlabeled
        unl.append(idx[:half])
        ev.append(idx[half:])
    cat = lambda parts: np.sort(np.concatenate(parts)).astype(np.int64)  # noqa: E731
    return SplitPlan(cat(train), cat(val), cat(unl), cat(ev), seed)


def synth_shift(n_per_class: int, d: int, shift_magnitude: float, seed: int = 0,
                class_separation: float = 3.0, target_scale: float = 1.1) -> tuple[Dataset, Dataset]:
    """Five unit-variance Gaussian classes; the target is translated by ``shift_magnitude``.

    Class means are ``class_separation`` times orthonormal directions (random
    unit vectors when ``d < 5``). Every target class moves along one shared
    random unit direction, and target noise is scaled by ``target_scale``.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    if n_per_class < 10:
        raise ValueError("n_per_class must be >= 10")
    rng = np.random.default_rng([seed, 7])
    if d >= NUM_CLASSES:
        q, _ = np.linalg.qr(rng.standard_normal((d, NUM_CLASSES)))
        dirs = q.T
    else:
        dirs = rng.standard_normal((NUM_CLASSES, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = class_separation * dirs
    shift = rng.standard_normal(d)
    shift *= shift_magnitude / np.linalg.norm(shift)
    labels = np.repeat(np.arange(NUM_CLASSES), n_per_class)
    names = tuple(f"x{i}" for i in range(d))
    src = means[labels] + rng.standard_normal((len(labels), d))
    tgt = means[labels] + shift + target_scale * rng.standard_normal((len(labels), d))
    return (Dataset(src, labels, "source", "synthetic", names),
            Dataset(tgt, labels.copy(), "target", "synthetic", names))


def write_manifest(path, **entries) -> None:
    Path(path).write_text(json.dumps(entries, sort_keys=True, indent=1) + "\n")
