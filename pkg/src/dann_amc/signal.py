"""Complex-baseband frame generation under Rayleigh/Rician flat fading plus AWGN."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import LABELS

BANDS = ("1MHz", "10MHz", "100MHz", "500MHz", "1GHz")
CHANNEL_MODELS = ("rayleigh", "rician", "awgn_only")
BITS_PER_SYMBOL = {"BPSK": 1, "QPSK": 2, "16QAM": 4, "64QAM": 6, "256QAM": 8}


@dataclass(frozen=True)
class Constellation:
    name: str
    points: np.ndarray
    bits_per_symbol: int


def _gray_position(label: int) -> int:
    # inverse Gray code: position on the axis whose Gray label is `label`
    pos = label
    shift = label >> 1
    while shift:
        pos ^= shift
        shift >>= 1
    return pos


def _pam_levels(bits: int) -> np.ndarray:
    """Gray-mapped PAM levels {-(L-1), ..., L-1}; entry i is the level of bit label i."""
    n = 1 << bits
    return np.array([2 * _gray_position(i) - (n - 1) for i in range(n)], dtype=np.float64)


@lru_cache(maxsize=None)
def _constellation(name: str) -> Constellation:
    if name not in BITS_PER_SYMBOL:
        raise ValueError(f"unknown modulation {name!r}; expected one of {LABELS}")
    k = BITS_PER_SYMBOL[name]
    if name == "BPSK":
        pts = _pam_levels(1).astype(np.complex128)
    else:
        half = k // 2
        levels = _pam_levels(half)
        idx = np.arange(1 << k)
        # high bits select the in-phase level, low bits the quadrature level
        pts = levels[idx >> half] + 1j * levels[idx & ((1 << half) - 1)]
        m = 1 << k
        pts = pts / math.sqrt(2.0 * (m - 1) / 3.0)
    pts.setflags(write=False)
    return Constellation(name, pts, k)


def constellation(name: str) -> Constellation:
    """Unit-average-power, Gray-mapped constellation; ``points[i]`` carries bit label ``i``."""
    return _constellation(name)


def modulate(name: str, num_symbols: int, rng: np.random.Generator) -> np.ndarray:
    if num_symbols < 1:
        raise ValueError("num_symbols must be >= 1")
    c = constellation(name)
    return c.points[rng.integers(0, len(c.points), size=num_symbols)]


@dataclass(frozen=True)
class ChannelConfig:
    model: str = "rayleigh"
    k_factor: float = 4.0
    snr_db: float = 15.0
    fading: str = "block"
    band: str = "100MHz"
    seed: int = 0

    def __post_init__(self):
        if self.model not in CHANNEL_MODELS:
            raise ValueError(f"unknown channel model {self.model!r}; expected one of {CHANNEL_MODELS}")
        if self.k_factor < 0:
            raise ValueError(f"Rician K-factor must be >= 0, got {self.k_factor}")
        if self.fading not in ("block", "per_symbol"):
            raise ValueError(f"fading must be 'block' or 'per_symbol', got {self.fading!r}")
        if self.band not in BANDS:
            raise ValueError(f"unknown band {self.band!r}; expected one of {BANDS}")


def _cn(rng: np.random.Generator, size) -> np.ndarray:
    """Circular complex Gaussian with unit variance."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) * math.sqrt(0.5)


def channel_gains(config: ChannelConfig, size, rng: np.random.Generator) -> np.ndarray:
    """Draw fading gains with E|h|^2 = 1 for the configured model."""
    if config.model == "awgn_only":
        return np.ones(size, dtype=np.complex128)
    scatter = _cn(rng, size)
    if config.model == "rayleigh":
        return scatter
    k = config.k_factor
    return math.sqrt(k / (k + 1.0)) + math.sqrt(1.0 / (k + 1.0)) * scatter


def apply_channel(seq: np.ndarray, config: ChannelConfig, rng: np.random.Generator,
                  return_gain: bool = False):
    """Return ``h * seq + n``.

    Block fading draws one gain per call (per frame); per-symbol fading draws a
    fresh gain for every sample. Noise power is ``10**(-snr_db/10)`` relative to
    unit signal power; ``snr_db = inf`` disables noise. A 2-D ``seq`` is treated
    as a batch of frames along axis 0.
    """
    seq = np.asarray(seq, dtype=np.complex128)
    if seq.size == 0:
        raise ValueError("empty sequence")
    if config.fading == "block":
        gshape = seq.shape[:-1] + (1,) if seq.ndim > 1 else (1,)
    else:
        gshape = seq.shape
    h = channel_gains(config, gshape, rng)
    out = h * seq
    if math.isfinite(config.snr_db):
        sigma = math.sqrt(10.0 ** (-config.snr_db / 10.0))
        out = out + sigma * _cn(rng, seq.shape)
    elif config.snr_db < 0:
        raise ValueError("snr_db = -inf means no signal")
    return (out, np.broadcast_to(h, seq.shape)) if return_gain else out


@dataclass
class FrameSet:
    frames: np.ndarray          # (n, frame_length) complex128
    labels: np.ndarray          # (n,) int class indices into LABELS
    domain: str
    band: str
    meta: dict = field(default_factory=dict)

    @property
    def frame_length(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]

    def to_csv(self, path) -> None:
        """Debug export: interleaved I/Q columns plus label and domain."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = [f"{c}{i}" for i in range(self.frame_length) for c in ("i", "q")]
            w.writerow(header + ["label", "domain"])
            for frame, label in zip(self.frames, self.labels):
                iq = np.empty(2 * len(frame))
                iq[0::2] = frame.real
                iq[1::2] = frame.imag
                w.writerow([repr(float(v)) for v in iq] + [LABELS[label], self.domain])


def gen_frameset(per_class: int, frame_length: int, config: ChannelConfig) -> FrameSet:
    """Balanced frames for all five modulations, deterministic under ``config.seed``."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if frame_length < 1:
        raise ValueError("frame_length must be >= 1")
    if config.model == "awgn_only":
        raise ValueError("framesets are tagged rayleigh or rician; use apply_channel for awgn_only")
    frames = np.empty((per_class * len(LABELS), frame_length), dtype=np.complex128)
    labels = np.repeat(np.arange(len(LABELS)), per_class)
    for ci, name in enumerate(LABELS):
        rng = np.random.default_rng([config.seed, BANDS.index(config.band), ci])
        sym = modulate(name, per_class * frame_length, rng).reshape(per_class, frame_length)
        frames[ci * per_class:(ci + 1) * per_class] = apply_channel(sym, config, rng)
    meta = {"k_factor": config.k_factor, "snr_db": config.snr_db, "fading": config.fading, "seed": config.seed}
    return FrameSet(frames, labels, config.model, config.band, meta)


def domain_config(domain: str, band: str, seed: int, snr_db: float = 15.0, k_factor: float = 4.0,
                  fading: str = "block", band_snr_offset_db: dict | None = None) -> ChannelConfig:
    """Channel preset for one (band, domain) cell of the simulated dataset."""
    offset = (band_snr_offset_db or {}).get(band, 0.0)
    cfg = ChannelConfig(model=domain, k_factor=k_factor, snr_db=snr_db + offset, fading=fading,
                        band=band, seed=seed)
    return replace(cfg, seed=seed * 2 + (0 if domain == "rayleigh" else 1))
