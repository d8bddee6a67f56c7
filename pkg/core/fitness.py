# core/fitness.py
"""
Quality scores, all in [0, 1]:

- single reference: cosine similarity to one reference vector, to the power p
- multiple references: mean similarity to the k nearest references, to the power p
- reference-free: six problem detectors plus a compressibility term
"""
import zlib
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import rfft
from scipy.signal.windows import hann

from core.knn_index import ZERO_NORM
from core.refdb import ReferenceStore, query_knn
from core.render import SoundBuffer
from utils.errors import FitnessError

PROBLEM_NAMES = ("clicks", "gaps", "clipping", "noise_bursts", "saturation", "dc_offset")

FRAME = 1024
HOP = 512
CLICK_THRESHOLD = 0.5           # max |second difference|
GAP_RMS = 1e-4
CLIP_LEVEL = 0.999
CLIP_RUN = 3
BURST_SIGMAS = 4.0
BURST_FLATNESS = 0.6
SATURATION_LEVEL = 0.98
SATURATION_SHARE = 0.5
DC_THRESHOLD = 0.05
DEFAULT_COMPRESSION_LEVEL = 9


@dataclass(frozen=True)
class ProblemReport:
    proportions: Dict[str, float]
    frame_counts: Dict[str, int]
    total_frames: int

    def __getitem__(self, name: str) -> float:
        return self.proportions[name]


@dataclass(frozen=True)
class CompressionScore:
    c: float
    raw_bytes: int
    compressed_bytes: int


def _similarity(fs, fr) -> float:
    fs = np.asarray(fs, dtype=np.float64)
    fr = np.asarray(fr, dtype=np.float64)
    ns, nr = np.linalg.norm(fs), np.linalg.norm(fr)
    if ns <= ZERO_NORM or nr <= ZERO_NORM:
        raise FitnessError("quality is undefined for a zero feature vector")
    return float(np.dot(fs, fr) / (ns * nr))


def _powered(similarity: float, p: float) -> float:
    return float(np.clip(similarity, 0.0, 1.0) ** p)


def q_single_ref(fs, fr, p: float = 1.0) -> float:
    if p <= 0:
        raise FitnessError(f"power must be > 0, got {p}")
    return _powered(_similarity(fs, fr), p)


def q_multi_ref(fs, store: ReferenceStore, k: int, p: float = 1.0) -> float:
    if p <= 0:
        raise FitnessError(f"power must be > 0, got {p}")
    if store is None or store.size == 0:
        raise FitnessError("empty reference store")
    if k < 1 or k > store.size:
        raise FitnessError(f"k={k} outside [1, {store.size}]")
    if np.linalg.norm(fs) <= ZERO_NORM:
        raise FitnessError("quality is undefined for a zero feature vector")
    neighbours = query_knn(store, fs, k)
    return _powered(float(np.mean([1.0 - d for _, d in neighbours])), p)


# ---------- reference-free ----------

def _frames(x: np.ndarray) -> np.ndarray:
    if x.shape[0] < FRAME:
        x = np.pad(x, (0, FRAME - x.shape[0]))
    return sliding_window_view(x, FRAME)[::HOP]


def _frame_flatness(frames: np.ndarray) -> np.ndarray:
    # magnitude spectrum: white noise sits near 0.85, tones near 0
    mags = np.abs(rfft(frames * hann(FRAME, sym=False), axis=-1)) + 1e-20
    return np.exp(np.mean(np.log(mags), axis=-1)) / np.mean(mags, axis=-1)


def detect_problems(b: SoundBuffer) -> ProblemReport:
    x = np.asarray(b.samples, dtype=np.float64)
    if x.shape[0] == 0:
        raise FitnessError("cannot analyse an empty buffer")
    frames = _frames(x)
    n = frames.shape[0]
    flags = {}

    second = np.abs(np.diff(frames, n=2, axis=1))
    flags["clicks"] = second.max(axis=1) > CLICK_THRESHOLD

    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    buffer_rms = float(np.sqrt(np.mean(x ** 2)))
    flags["gaps"] = (rms < GAP_RMS) & (buffer_rms >= 10 * GAP_RMS)

    hot = (np.abs(frames) >= CLIP_LEVEL).astype(np.int64)
    runs = sliding_window_view(hot, CLIP_RUN, axis=1).sum(axis=-1)
    flags["clipping"] = (runs >= CLIP_RUN).any(axis=1)

    energy = np.sum(frames ** 2, axis=1)
    mu, sigma = energy.mean(), energy.std()
    loud = (energy > mu + BURST_SIGMAS * sigma) & (sigma > 1e-12 * max(mu, 1e-300))
    flags["noise_bursts"] = loud & (_frame_flatness(frames) > BURST_FLATNESS)

    flags["saturation"] = np.mean(np.abs(frames) >= SATURATION_LEVEL, axis=1) >= SATURATION_SHARE
    flags["dc_offset"] = np.abs(frames.mean(axis=1)) > DC_THRESHOLD

    counts = {name: int(flags[name].sum()) for name in PROBLEM_NAMES}
    return ProblemReport({name: counts[name] / n for name in PROBLEM_NAMES}, counts, n)


def _canonical_pcm(x: np.ndarray) -> bytes:
    pcm = np.round(np.clip(x, -1.0, 1.0) * 32767.0).astype("<i2")
    nonzero = np.flatnonzero(pcm)
    if nonzero.size and pcm[nonzero[0]] < 0:
        pcm = -pcm
    return pcm.tobytes()


def compression_score(b: SoundBuffer, level: int = DEFAULT_COMPRESSION_LEVEL) -> CompressionScore:
    """Compressibility of the 16-bit PCM stream under zlib at a pinned level; polarity canonicalised first."""
    raw = _canonical_pcm(np.asarray(b.samples, dtype=np.float64))
    if not raw:
        return CompressionScore(0.0, 0, 0)
    packed = zlib.compress(raw, level)
    c = max(0.0, 1.0 - len(packed) / len(raw))
    return CompressionScore(c, len(raw), len(packed))


def q_ref_free(b: SoundBuffer, level: int = DEFAULT_COMPRESSION_LEVEL) -> float:
    problems = detect_problems(b)
    c = compression_score(b, level).c
    return (sum(1.0 - problems[name] for name in PROBLEM_NAMES) + c) / 7.0


# ---------- regime wrapper ----------

@dataclass
class FitnessEvaluator:
    """Scores one candidate under the configured regime."""

    regime: str = "ref_free"
    power: float = 1.0
    k: int = 15
    store: Optional[ReferenceStore] = None
    reference_id: str = ""
    compression_level: int = DEFAULT_COMPRESSION_LEVEL
    _reference: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.regime not in ("single_ref", "multi_ref", "ref_free"):
            raise FitnessError(f"unknown fitness regime '{self.regime}'")
        if self.power <= 0:
            raise FitnessError(f"power must be > 0, got {self.power}")
        if self.regime != "ref_free" and self.store is None:
            raise FitnessError(f"regime '{self.regime}' needs a reference store")
        if self.regime == "single_ref":
            self._reference = self.store.normalized_vector(self.reference_id)
        if self.regime == "multi_ref" and not (1 <= self.k <= self.store.size):
            raise FitnessError(f"k={self.k} outside [1, {self.store.size}]")

    def score(self, normalized_vector, buffer: SoundBuffer) -> float:
        if self.regime == "single_ref":
            return q_single_ref(normalized_vector, self._reference, self.power)
        if self.regime == "multi_ref":
            return q_multi_ref(normalized_vector, self.store, self.k, self.power)
        return q_ref_free(buffer, self.compression_level)
