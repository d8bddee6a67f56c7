# modules/synthetic_corpus.py
"""
Seeded synthetic reference corpus for desk-scale runs: tones, chirps,
noise, plucked strings and FM sounds, written as 16-bit WAV files.
"""
import logging
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np
import soundfile as sf
from scipy.signal import butter, chirp, sosfilt

from utils.errors import ElitesError

FAMILIES = ("tone", "chirp", "noise", "pluck", "fm")
PEAK = 0.9


def _envelope(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    attack = max(1, int(sr * rng.uniform(0.005, 0.2)))
    release = max(1, int(sr * rng.uniform(0.05, 0.5)))
    env = np.ones(n)
    env[:min(attack, n)] = np.linspace(0.0, 1.0, min(attack, n))
    tail = min(release, n)
    env[n - tail:] *= np.linspace(1.0, 0.0, tail)
    return env


def _tone(t, sr, rng):
    f0 = rng.uniform(80.0, 2000.0)
    partials = rng.integers(1, 8)
    x = np.zeros_like(t)
    for h in range(1, partials + 1):
        x += np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi)) / h ** rng.uniform(0.5, 2.0)
    return x


def _chirp(t, sr, rng):
    f0, f1 = rng.uniform(50.0, 4000.0, size=2)
    method = rng.choice(["linear", "logarithmic", "quadratic"])
    return chirp(t, f0=f0, t1=t[-1], f1=f1, method=str(method))


def _noise(t, sr, rng):
    x = rng.normal(0.0, 1.0, t.shape[0])
    lo = rng.uniform(50.0, 2000.0)
    hi = min(lo * rng.uniform(1.5, 8.0), 0.45 * sr)
    sos = butter(4, [lo, hi], btype="bandpass", fs=sr, output="sos")
    return sosfilt(sos, x)


def _pluck(t, sr, rng):
    """Karplus-Strong string."""
    f0 = rng.uniform(60.0, 1000.0)
    period = max(2, int(round(sr / f0)))
    decay = rng.uniform(0.95, 0.999)
    n = t.shape[0]
    out = np.zeros(n)
    buf = rng.uniform(-1.0, 1.0, period)
    for i in range(n):
        j = i % period
        out[i] = buf[j]
        buf[j] = decay * 0.5 * (buf[j] + buf[(j + 1) % period])
    return out


def _fm(t, sr, rng):
    carrier = rng.uniform(100.0, 2000.0)
    ratio = rng.choice([0.5, 1.0, 1.5, 2.0, 3.0, 3.5, 7.0])
    index = rng.uniform(0.5, 10.0) * np.exp(-t * rng.uniform(0.0, 3.0))
    return np.sin(2 * np.pi * carrier * t + index * np.sin(2 * np.pi * carrier * ratio * t))


GENERATORS: Dict[str, Callable] = {
    "tone": _tone,
    "chirp": _chirp,
    "noise": _noise,
    "pluck": _pluck,
    "fm": _fm,
}


def synth_sound(family: str, rng: np.random.Generator, duration: float = 4.0, sample_rate: int = 16000) -> np.ndarray:
    if family not in GENERATORS:
        raise ElitesError(f"unknown corpus family '{family}', expected one of {FAMILIES}")
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    x = GENERATORS[family](t, sample_rate, rng) * _envelope(n, sample_rate, rng)
    peak = float(np.max(np.abs(x))) if n else 0.0
    return x * (PEAK / peak) if peak > 0 else x


def synth_corpus(out_dir, count: int = 500, seed: int = 0, duration: float = 4.0,
                 sample_rate: int = 16000) -> List[Path]:
    """Writes `count` sounds cycling through the families; file names are stable per index."""
    if count < 1:
        raise ElitesError("corpus count must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    streams = np.random.SeedSequence(seed).spawn(count)
    paths = []
    for i, stream in enumerate(streams):
        family = FAMILIES[i % len(FAMILIES)]
        x = synth_sound(family, np.random.default_rng(stream), duration, sample_rate)
        path = out_dir / f"{family}_{i:04d}.wav"
        sf.write(str(path), x, sample_rate, subtype="PCM_16", format="WAV")
        paths.append(path)
    logging.info(f"[Corpus] {count} sounds written to {out_dir}")
    return paths
