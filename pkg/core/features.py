# core/features.py
"""
Audio features.

- extract_mfcc96: 12 MFCCs (coefficient 0 dropped) and their deltas,
  summarised by mean/std/min/max over frames -> 96 values.
  Layout: v[4*i + s] for coefficient i (0..11), s in (mean, std, min, max);
  the delta block follows at offset 48.
- extract_spectral: ten frame-averaged low-level spectral descriptors.
- NormStats: z-score statistics over a reference population.
"""
import csv
import logging
import struct
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct, rfft, rfftfreq
from scipy.signal.windows import hann

from core.render import SoundBuffer
from utils.errors import FeatureError

FEATURE_DIM = 96
N_MFCC = 13
STATS = ("mean", "std", "min", "max")
DELTA_WIDTH = 2
LOG_FLOOR = 1e-10
STD_FLOOR = 1e-8

SPECTRAL_FRAME = 1024
SPECTRAL_HOP = 512
ROLLOFF_FRACTION = 0.85
SILENCE_FLOOR = 1e-12


@dataclass(frozen=True)
class MfccSettings:
    frame_length: int = 400
    hop_length: int = 160
    n_fft: int = 512
    n_mels: int = 40
    fmin: float = 0.0
    fmax: float = 8000.0


def feature_names() -> List[str]:
    names = []
    for stream in ("mfcc", "delta"):
        for i in range(1, N_MFCC):
            names.extend(f"{stream}{i}_{s}" for s in STATS)
    return names


# ---------- MFCC ----------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular HTK-mel filters on the rfft bin frequencies, shape (n_mels, n_fft//2+1)."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = rfftfreq(n_fft, 1.0 / sample_rate)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_signal(x: np.ndarray, frame_length: int, hop_length: int) -> np.ndarray:
    if x.shape[0] < frame_length:
        raise FeatureError("insufficient frames")
    return sliding_window_view(x, frame_length)[::hop_length]


def mfcc_frames(b: SoundBuffer, settings: MfccSettings = MfccSettings()) -> np.ndarray:
    """Per-frame MFCCs 1..12, shape (frames, 12)."""
    if b.sample_rate != 16000:
        raise FeatureError(f"MFCC extraction expects 16 kHz audio, got {b.sample_rate}")
    frames = frame_signal(np.asarray(b.samples, dtype=np.float64),
                          settings.frame_length, settings.hop_length)
    window = hann(settings.frame_length, sym=False)
    power = np.abs(rfft(frames * window, n=settings.n_fft, axis=-1)) ** 2
    fb = mel_filterbank(b.sample_rate, settings.n_fft, settings.n_mels, settings.fmin, settings.fmax)
    log_energy = np.log(power @ fb.T + LOG_FLOOR)
    cepstra = dct(log_energy, type=2, norm="ortho", axis=-1)[:, :N_MFCC]
    return cepstra[:, 1:]


def deltas(c: np.ndarray, width: int = DELTA_WIDTH) -> np.ndarray:
    """Regression deltas over +-width frames with edge replication."""
    padded = np.pad(c, ((width, width), (0, 0)), mode="edge")
    n = c.shape[0]
    num = np.zeros_like(c)
    for k in range(1, width + 1):
        num += k * (padded[width + k: width + k + n] - padded[width - k: width - k + n])
    return num / (2.0 * sum(k * k for k in range(1, width + 1)))


def _summarise(stream: np.ndarray) -> np.ndarray:
    lo = stream.min(axis=0)
    hi = stream.max(axis=0)
    mean = np.clip(stream.mean(axis=0), lo, hi)
    std = stream.std(axis=0)
    return np.stack([mean, std, lo, hi], axis=1).reshape(-1)


def extract_mfcc96(b: SoundBuffer, settings: MfccSettings = MfccSettings()) -> np.ndarray:
    c = mfcc_frames(b, settings)
    v = np.concatenate([_summarise(c), _summarise(deltas(c))])
    if not np.all(np.isfinite(v)):
        raise FeatureError("non-finite MFCC statistics")
    return v


# ---------- spectral descriptors ----------

@dataclass(frozen=True)
class SpectralFeatureSet:
    centroid: float
    spread: float
    skewness: float
    kurtosis: float
    rolloff: float
    decrease: float
    slope: float
    flux: float
    flatness: float
    crest: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    def get(self, name: str) -> float:
        if name not in SPECTRAL_NAMES:
            raise FeatureError(f"unknown spectral feature '{name}'")
        return float(getattr(self, name))

    @classmethod
    def from_array(cls, values) -> "SpectralFeatureSet":
        return cls(*[float(v) for v in values])


SPECTRAL_NAMES = tuple(f.name for f in fields(SpectralFeatureSet))


def _frame_descriptors(m: np.ndarray, freqs: np.ndarray, prev_norm: Optional[np.ndarray]):
    total = m.sum()
    if total < SILENCE_FLOOR:
        return {"centroid": 0.0, "spread": 0.0, "skewness": 0.0, "kurtosis": 0.0,
                "rolloff": 0.0, "decrease": 0.0, "slope": 0.0, "flux": 0.0,
                "flatness": 1.0, "crest": 0.0}, None

    weights = m / total
    centroid = float(np.sum(freqs * weights))
    dev = freqs - centroid
    spread = float(np.sqrt(np.sum(dev ** 2 * weights)))
    if spread > 0:
        skewness = float(np.sum(dev ** 3 * weights) / spread ** 3)
        kurtosis = float(np.sum(dev ** 4 * weights) / spread ** 4)
    else:
        skewness = kurtosis = 0.0

    power = m ** 2
    cumulative = np.cumsum(power)
    rolloff = float(freqs[np.searchsorted(cumulative, ROLLOFF_FRACTION * cumulative[-1])])

    k = np.arange(1, m.shape[0])
    tail = m[1:].sum()
    decrease = float(np.sum((m[1:] - m[0]) / k) / tail) if tail > 0 else 0.0

    n = m.shape[0]
    denom = n * np.sum(freqs ** 2) - np.sum(freqs) ** 2
    slope = float((n * np.sum(freqs * m) - np.sum(freqs) * total) / denom / total)

    flux = 0.0 if prev_norm is None else float(np.sqrt(np.sum((weights - prev_norm) ** 2)))

    p = power + SILENCE_FLOOR
    flatness = float(np.clip(np.exp(np.mean(np.log(p))) / np.mean(p), 0.0, 1.0))
    crest = float(m.max() / m.mean())
    return {"centroid": centroid, "spread": spread, "skewness": skewness, "kurtosis": kurtosis,
            "rolloff": rolloff, "decrease": decrease, "slope": slope, "flux": flux,
            "flatness": flatness, "crest": crest}, weights


def extract_spectral(b: SoundBuffer) -> SpectralFeatureSet:
    x = np.asarray(b.samples, dtype=np.float64)
    if x.shape[0] == 0:
        raise FeatureError("empty buffer")
    if x.shape[0] < SPECTRAL_FRAME:
        x = np.pad(x, (0, SPECTRAL_FRAME - x.shape[0]))
    frames = sliding_window_view(x, SPECTRAL_FRAME)[::SPECTRAL_HOP]
    mags = np.abs(rfft(frames * hann(SPECTRAL_FRAME, sym=False), axis=-1))
    freqs = rfftfreq(SPECTRAL_FRAME, 1.0 / b.sample_rate)

    rows, prev = [], None
    for m in mags:
        desc, prev = _frame_descriptors(m, freqs, prev)
        rows.append([desc[name] for name in SPECTRAL_NAMES])
    return SpectralFeatureSet.from_array(np.mean(np.array(rows), axis=0))


# ---------- normalisation ----------

@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    floored: np.ndarray     # bool mask of dimensions whose std hit the floor

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "floored": [bool(f) for f in self.floored]}

    @classmethod
    def from_dict(cls, payload: dict) -> "NormStats":
        return cls(np.asarray(payload["mean"], dtype=np.float64),
                   np.asarray(payload["std"], dtype=np.float64),
                   np.asarray(payload["floored"], dtype=bool))


def fit_norm(population) -> NormStats:
    data = np.atleast_2d(np.asarray(population, dtype=np.float64))
    if data.shape[0] == 0:
        raise FeatureError("cannot fit normalisation on an empty population")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    floored = std < STD_FLOOR
    if floored.any():
        logging.info(f"[Features] {int(floored.sum())} zero-variance dimension(s) floored at {STD_FLOOR}")
    return NormStats(mean=mean, std=np.where(floored, STD_FLOOR, std), floored=floored)


def apply_norm(v, stats: NormStats) -> np.ndarray:
    return (np.asarray(v, dtype=np.float64) - stats.mean) / stats.std


# ---------- feature store files ----------

BINARY_MAGIC = b"MF96"
BINARY_HEADER = struct.Struct("<4sII")


def write_feature_csv(path, ids: Sequence[str], matrix: np.ndarray,
                      spectral: Optional[np.ndarray] = None) -> None:
    matrix = np.atleast_2d(matrix)
    header = ["id"] + feature_names()
    if spectral is not None:
        header += list(SPECTRAL_NAMES)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i, sid in enumerate(ids):
            row = [sid] + [repr(float(x)) for x in matrix[i]]
            if spectral is not None:
                row += [repr(float(x)) for x in spectral[i]]
            writer.writerow(row)


def read_feature_csv(path) -> Tuple[List[str], np.ndarray, Optional[np.ndarray]]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or header[0] != "id":
            raise FeatureError(f"{path}: missing feature CSV header")
        has_spectral = len(header) == 1 + FEATURE_DIM + len(SPECTRAL_NAMES)
        ids, rows, spec = [], [], []
        for line in reader:
            ids.append(line[0])
            rows.append([float(x) for x in line[1:1 + FEATURE_DIM]])
            if has_spectral:
                spec.append([float(x) for x in line[1 + FEATURE_DIM:]])
    matrix = np.array(rows, dtype=np.float64).reshape(-1, FEATURE_DIM)
    spectral = np.array(spec, dtype=np.float64).reshape(-1, len(SPECTRAL_NAMES)) if has_spectral else None
    return ids, matrix, spectral


def write_feature_binary(path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(np.atleast_2d(matrix), dtype="<f8")
    with open(path, "wb") as f:
        f.write(BINARY_HEADER.pack(BINARY_MAGIC, matrix.shape[0], matrix.shape[1]))
        f.write(matrix.tobytes())


def read_feature_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < BINARY_HEADER.size:
        raise FeatureError(f"{path}: truncated feature binary")
    magic, count, dim = BINARY_HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC:
        raise FeatureError(f"{path}: bad magic {magic!r}")
    body = raw[BINARY_HEADER.size:]
    if len(body) != count * dim * 8:
        raise FeatureError(f"{path}: expected {count}x{dim} values, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(count, dim).copy()
