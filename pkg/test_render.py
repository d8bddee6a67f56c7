from dataclasses import replace

import numpy as np
import pytest
import soundfile as sf

from core.genome import INPUT_PITCH, CppnConnection, CppnGraph, CppnNode, minimal_genome, mutate
from core.render import render, write_wav
from utils.errors import RenderError


def _pitch_sine_genome():
    g = minimal_genome(0)
    nodes = tuple(replace(n, activation="sine") if n.role == "output" else n for n in g.cppn.nodes)
    cppn = CppnGraph(nodes, (CppnConnection(1, INPUT_PITCH, 2, 1.0, True),))
    return replace(g, cppn=cppn)


def test_minimal_genome_renders_scaled_ramp():
    g = minimal_genome(0)
    buf = render(g, duration_s=4.0, sample_rate=16000)
    assert buf.length == 64000
    w = g.cppn.connections[0].weight
    expected = w * np.arange(64000) / 63999
    assert np.allclose(buf.samples, expected, atol=1e-12)
    # time input spans the closed interval
    assert buf.samples[0] == 0.0
    assert buf.samples[-1] == pytest.approx(w, abs=1e-12)
    assert not buf.report.normalized


def test_sine_tap_on_pitch_input_peaks_at_pitch():
    buf = render(_pitch_sine_genome(), duration_s=1.0, sample_rate=16000, pitch_hz=220.0)
    spectrum = np.abs(np.fft.rfft(buf.samples))
    freqs = np.fft.rfftfreq(buf.length, 1.0 / 16000)
    assert freqs[int(np.argmax(spectrum))] == pytest.approx(220.0, abs=1.0)


def test_render_is_deterministic():
    rng = np.random.default_rng(0)
    g = minimal_genome(3)
    for _ in range(40):
        g = mutate(g, rng)
    a = render(g, duration_s=0.5)
    b = render(g, duration_s=0.5)
    assert np.array_equal(a.samples, b.samples)


def test_random_genomes_stay_in_range():
    rng = np.random.default_rng(1)
    for seed in range(10):
        g = minimal_genome(seed)
        for _ in range(60):
            g = mutate(g, rng)
        buf = render(g, duration_s=0.25)
        assert np.all(np.isfinite(buf.samples))
        assert np.max(np.abs(buf.samples)) <= 1.0


def test_high_rate_render_length():
    buf = render(minimal_genome(0), duration_s=1.0, sample_rate=48000)
    assert buf.length == 48000
    assert buf.sample_rate == 48000


def test_bad_render_arguments():
    g = minimal_genome(0)
    with pytest.raises(RenderError):
        render(g, sample_rate=44100)
    with pytest.raises(RenderError):
        render(g, duration_s=0.0)
    with pytest.raises(RenderError):
        render(g, pitch_hz=-1.0)


def test_write_wav_round_trip(tmp_path):
    buf = render(_pitch_sine_genome(), duration_s=0.5)
    path = tmp_path / "tone.wav"
    write_wav(buf, path)
    data, sr = sf.read(str(path), dtype="float64")
    info = sf.info(str(path))
    assert sr == 16000
    assert info.subtype == "PCM_16"
    assert data.shape == buf.samples.shape
    assert np.max(np.abs(data - buf.samples)) < 1e-3
