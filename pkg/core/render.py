# core/render.py
"""
Offline renderer: Genome -> mono buffer.

The CPPN is evaluated over the whole time axis at once (one vector per
node). DSP nodes run in topological order by node id; every node kind is a
causal feed-forward filter, so whole-buffer evaluation equals a
sample-by-sample pass.
"""
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
import soundfile as sf
from scipy.signal import lfilter

from core.genome import (
    INPUT_PITCH,
    INPUT_TIME,
    PARAM_RANGES,
    Genome,
    topological_order,
)
from utils.errors import RenderError

SAMPLE_RATES = (16000, 48000)
DEFAULT_PITCH_HZ = 220.0
TWO_PI = 2.0 * np.pi


@dataclass
class RenderReport:
    nonfinite_count: int = 0
    peak: float = 0.0
    normalized: bool = False


@dataclass
class SoundBuffer:
    samples: np.ndarray
    sample_rate: int
    duration: float
    report: RenderReport = field(default_factory=RenderReport)

    @property
    def length(self) -> int:
        return int(self.samples.shape[0])


# ---------- activations ----------

def _sawtooth(x):
    # period 2*pi, range [-1, 1), zero at x = 0
    phase = x / TWO_PI
    return 2.0 * (phase - np.floor(phase + 0.5))


def _triangle(x):
    return 1.0 - 2.0 * np.abs(_sawtooth(x + np.pi / 2.0))


ACTIVATION_FUNCS = {
    "sine": np.sin,
    "square": lambda x: np.sign(np.sin(x)),
    "sawtooth": _sawtooth,
    "triangle": _triangle,
    "identity": lambda x: x,
}


def _sanitize(x: np.ndarray, report: RenderReport) -> np.ndarray:
    bad = ~np.isfinite(x)
    if bad.any():
        report.nonfinite_count += int(bad.sum())
        x = np.where(bad, 0.0, x)
    return x


# ---------- CPPN ----------

def evaluate_cppn(g: Genome, n: int, sample_rate: int, pitch_hz: float,
                  report: RenderReport) -> Dict[int, np.ndarray]:
    """Signals for every CPPN node, keyed by node id."""
    idx = np.arange(n, dtype=np.float64)
    signals = {
        INPUT_TIME: idx / max(n - 1, 1),
        INPUT_PITCH: np.sin(TWO_PI * pitch_hz * idx / sample_rate),
    }
    incoming: Dict[int, list] = {}
    for c in g.cppn.connections:
        if c.enabled:
            incoming.setdefault(c.target, []).append(c)

    order = topological_order([nd.id for nd in g.cppn.nodes],
                              [(c.source, c.target) for c in g.cppn.connections])
    roles = {nd.id: nd for nd in g.cppn.nodes}
    for node_id in order:
        node = roles[node_id]
        if node.role == "input":
            signals.setdefault(node_id, np.zeros(n))
            continue
        total = np.zeros(n)
        for c in sorted(incoming.get(node_id, ()), key=lambda c: c.innovation):
            total = total + c.weight * signals[c.source]
        with np.errstate(all="ignore"):
            out = ACTIVATION_FUNCS[node.activation](total)
        signals[node_id] = _sanitize(np.asarray(out, dtype=np.float64), report)
    return signals


# ---------- DSP ----------

def _slot_value(kind: str, name: str, slot, taps: Dict[int, np.ndarray]):
    if slot.tap is None:
        return slot.value
    lo, hi = PARAM_RANGES[kind][name]
    return lo + (hi - lo) * (np.clip(taps[slot.tap], -1.0, 1.0) + 1.0) / 2.0


def _biquad_lowpass(x, cutoff, q, sample_rate):
    cutoff = float(np.clip(cutoff, 1.0, 0.45 * sample_rate))
    w0 = TWO_PI * cutoff / sample_rate
    alpha = np.sin(w0) / (2.0 * q)
    cos_w0 = np.cos(w0)
    b = np.array([(1 - cos_w0) / 2, 1 - cos_w0, (1 - cos_w0) / 2])
    a = np.array([1 + alpha, -2 * cos_w0, 1 - alpha])
    return lfilter(b / a[0], a / a[0], x)


def _process(node, x, taps, sample_rate):
    kind = node.kind
    p = {name: _slot_value(kind, name, slot, taps) for name, slot in node.params}
    if kind == "output":
        return x
    if kind == "gain":
        return x * p["gain"]
    if kind == "mix":
        return x * p["level"]
    if kind == "wave-shaper":
        return np.tanh(p["drive"] * x)
    if kind == "delay-line":
        delay = int(round(float(np.mean(p["delay"])) * sample_rate))
        delayed = np.zeros_like(x)
        if delay < x.shape[0]:
            delayed[delay:] = x[: x.shape[0] - delay]
        mix = p["mix"]
        return (1.0 - mix) * x + mix * delayed
    if kind == "biquad-filter":
        return _biquad_lowpass(x, np.mean(p["cutoff"]), float(np.mean(p["q"])), sample_rate)
    raise RenderError(f"unknown DSP node kind '{kind}'")


def render(g: Genome, duration_s: float = 4.0, sample_rate: int = 16000,
           pitch_hz: float = DEFAULT_PITCH_HZ) -> SoundBuffer:
    if duration_s <= 0:
        raise RenderError(f"duration must be > 0, got {duration_s}")
    if sample_rate not in SAMPLE_RATES:
        raise RenderError(f"sample rate must be one of {SAMPLE_RATES}, got {sample_rate}")
    if pitch_hz <= 0:
        raise RenderError(f"pitch must be > 0, got {pitch_hz}")

    n = int(round(sample_rate * duration_s))
    report = RenderReport()
    cppn_signals = evaluate_cppn(g, n, sample_rate, pitch_hz, report)
    taps = {tap: cppn_signals[tap] for tap in g.cppn.output_ids}

    node_edges = [(c.source, c.target) for c in g.dsp.connections if not c.from_tap]
    order = topological_order([nd.id for nd in g.dsp.nodes], node_edges)
    nodes = {nd.id: nd for nd in g.dsp.nodes}
    incoming: Dict[int, list] = {}
    for c in g.dsp.connections:
        if c.enabled:
            incoming.setdefault(c.target, []).append(c)

    audio: Dict[int, np.ndarray] = {}
    for node_id in order:
        x = np.zeros(n)
        for c in sorted(incoming.get(node_id, ()), key=lambda c: c.innovation):
            x = x + (taps[c.source] if c.from_tap else audio[c.source])
        with np.errstate(all="ignore"):
            y = _process(nodes[node_id], x, taps, sample_rate)
        audio[node_id] = _sanitize(np.asarray(y, dtype=np.float64), report)

    out = audio[g.dsp.output_id]
    peak = float(np.max(np.abs(out))) if n else 0.0
    report.peak = peak
    if peak > 1.0:
        out = out / peak
        report.normalized = True
    out = np.clip(out, -1.0, 1.0)
    return SoundBuffer(samples=out, sample_rate=sample_rate, duration=duration_s, report=report)


def write_wav(buffer: SoundBuffer, path) -> None:
    """16-bit PCM mono RIFF."""
    sf.write(str(path), buffer.samples, buffer.sample_rate, subtype="PCM_16", format="WAV")
