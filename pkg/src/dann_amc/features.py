"""Per-frame real features: amplitude/phase/frequency moments, cumulants, spectral shape.

Feature order is fixed by ``GROUP_NAMES``; headers follow ``<group>_<name>``.

moments (12)
    amplitude ``|x|``, centred phase (wrapped, relative to the circular mean)
    and instantaneous frequency (wrapped phase increments), each summarised
    by mean, variance, skewness and excess kurtosis.
cumulants (7)
    ``|C20|, C21, |C40|, |C41|, C42`` and the normalised forms
    ``-|C40|/C21**2`` and ``C42/C21**2``.
spectral (5)
    centroid and spread (cycles/sample, on the centred axis), flatness of the
    magnitude spectrum, time-domain PAPR (linear), occupied-bandwidth fraction
    at -20 dB.

Every emitted value is invariant to a global phase rotation of the frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signal import FrameSet

VAR_FLOOR = 1e-12
C21_FLOOR = 1e-12
OBW_DB = -20.0

GROUP_PREFIX = {"moments": "mom", "cumulants": "cum", "spectral": "spec"}
GROUP_NAMES = {
    "moments": [f"{sig}_{stat}" for sig in ("amp", "phase", "freq")
                for stat in ("mean", "var", "skew", "kurt")],
    "cumulants": ["c20_abs", "c21", "c40_abs", "c41_abs", "c42", "c40_norm", "c42_norm"],
    "spectral": ["centroid", "spread", "flatness", "papr", "obw_frac"],
}
GROUPS = tuple(GROUP_NAMES)


@dataclass(frozen=True)
class FeatureSpec:
    groups: tuple = GROUPS

    def __post_init__(self):
        groups = tuple(self.groups)
        unknown = [g for g in groups if g not in GROUP_NAMES]
        if unknown:
            raise ValueError(f"unknown feature groups {unknown}; expected a subset of {GROUPS}")
        if not groups:
            raise ValueError("at least one feature group must be enabled")
        # canonical order regardless of how the caller listed them
        object.__setattr__(self, "groups", tuple(g for g in GROUPS if g in groups))

    @property
    def resulting_dim(self) -> int:
        return sum(len(GROUP_NAMES[g]) for g in self.groups)

    def header(self) -> list[str]:
        return [f"{GROUP_PREFIX[g]}_{n}" for g in self.groups for n in GROUP_NAMES[g]]


def _four_moments(v: np.ndarray) -> list[float]:
    mean = v.mean()
    d = v - mean
    var = float(np.mean(d * d))
    if var < VAR_FLOOR:
        return [float(mean), var, 0.0, 0.0]
    sd = np.sqrt(var)
    skew = float(np.mean(d ** 3) / sd ** 3)
    kurt = float(np.mean(d ** 4) / var ** 2 - 3.0)
    return [float(mean), var, skew, kurt]


def moments(frame: np.ndarray) -> np.ndarray:
    x = np.asarray(frame, dtype=np.complex128)
    if x.size < 4:
        raise ValueError("moments need a frame of at least 4 samples")
    amp = np.abs(x)
    nz = amp > 0
    unit = np.where(nz, x / np.where(nz, amp, 1.0), 0.0)
    ref = unit.sum()
    ref = ref / abs(ref) if abs(ref) > 0 else 1.0
    phase = np.angle(x * np.conj(ref))
    freq = np.angle(x[1:] * np.conj(x[:-1]))
    return np.array(_four_moments(amp) + _four_moments(phase) + _four_moments(freq))


@dataclass(frozen=True)
class CumulantEstimate:
    c20: complex
    c21: float
    c40: complex
    c41: complex
    c42: float
    silent: bool

    @property
    def c40_norm(self) -> complex:
        """Complex ``C40 / C21**2`` (zero for a silent frame)."""
        return 0j if self.silent else self.c40 / self.c21 ** 2

    @property
    def c42_norm(self) -> float:
        return 0.0 if self.silent else self.c42 / self.c21 ** 2


def estimate_cumulants(frame: np.ndarray) -> CumulantEstimate:
    """Sample estimates of the second- and fourth-order cumulants (non-centred)."""
    x = np.asarray(frame, dtype=np.complex128)
    x2 = x * x
    p = (x * np.conj(x)).real
    c20 = complex(x2.mean())
    c21 = float(p.mean())
    c40 = complex((x2 * x2).mean()) - 3.0 * c20 ** 2
    c41 = complex((x2 * x * np.conj(x)).mean()) - 3.0 * c20 * c21
    c42 = float((p * p).mean()) - abs(c20) ** 2 - 2.0 * c21 ** 2
    return CumulantEstimate(c20, c21, c40, c41, c42, silent=c21 < C21_FLOOR)


def cumulants(frame: np.ndarray) -> tuple[np.ndarray, bool]:
    """Rotation-invariant cumulant features and a silent-frame flag.

    ``c40_norm`` is emitted as ``-|C40|/C21**2``: for the five constellations
    C40 sits on the negative real axis in canonical orientation, so this is
    the signed normalised value with the carrier phase removed.
    """
    c = estimate_cumulants(frame)
    c40n = 0.0 if c.silent else -abs(c.c40) / c.c21 ** 2
    vec = np.array([abs(c.c20), c.c21, abs(c.c40), abs(c.c41), c.c42, c40n, c.c42_norm])
    return vec, c.silent


def spectral(frame: np.ndarray) -> tuple[np.ndarray, bool]:
    """Spectral shape features and an all-zero flag."""
    x = np.asarray(frame, dtype=np.complex128)
    n = 1 << max(0, int(np.ceil(np.log2(len(x)))))
    mag = np.abs(np.fft.fftshift(np.fft.fft(x, n=n)))
    total = mag.sum()
    if total <= 0:
        return np.zeros(5), True
    f = np.fft.fftshift(np.fft.fftfreq(n))
    w = mag / total
    centroid = float(w @ f)
    spread = float(np.sqrt(max(float(w @ (f - centroid) ** 2), 0.0)))
    flatness = float(np.exp(np.mean(np.log(np.maximum(mag, 1e-300)))) / mag.mean())
    power = (x * np.conj(x)).real
    papr = float(power.max() / power.mean())
    obw = float(np.count_nonzero(mag >= mag.max() * 10.0 ** (OBW_DB / 20.0)) / n)
    return np.array([centroid, spread, flatness, papr, obw]), False


@dataclass
class FeatureMatrix:
    values: np.ndarray                      # (n, d) float64
    labels: np.ndarray                      # (n,) int
    domain: str
    band: str
    names: list[str]
    quality: dict = field(default_factory=dict)  # flag name -> list of row indices

    def __len__(self):
        return self.values.shape[0]


def frame_features(frame: np.ndarray, spec: FeatureSpec) -> tuple[np.ndarray, list[str]]:
    parts, flags = [], []
    for g in spec.groups:
        if g == "moments":
            v = moments(frame)
            if np.var(np.abs(frame)) < VAR_FLOOR:
                flags.append("constant_amplitude")
        elif g == "cumulants":
            v, silent = cumulants(frame)
            if silent:
                flags.append("silent_frame")
        else:
            v, zero = spectral(frame)
            if zero:
                flags.append("zero_spectrum")
        parts.append(v)
    return np.concatenate(parts), flags


def extract(frameset: FrameSet, spec: FeatureSpec | None = None) -> FeatureMatrix:
    """One feature row per frame, in frame order; degenerate frames are flagged, not dropped."""
    spec = spec or FeatureSpec()
    values = np.empty((len(frameset), spec.resulting_dim))
    quality: dict[str, list[int]] = {}
    for i, frame in enumerate(frameset.frames):
        values[i], flags = frame_features(frame, spec)
        for flag in flags:
            quality.setdefault(flag, []).append(i)
    bad = ~np.isfinite(values).all(axis=1)
    if bad.any():
        quality["non_finite"] = np.flatnonzero(bad).tolist()
        values[bad] = np.nan_to_num(values[bad], nan=0.0, posinf=0.0, neginf=0.0)
    return FeatureMatrix(values, frameset.labels.copy(), frameset.domain, frameset.band,
                         spec.header(), quality)
