# conftest.py: shared fixtures
import numpy as np
import pytest

from core.render import SoundBuffer
from modules.synthetic_corpus import synth_corpus
from utils.config import RunConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running protocol checks (deselect with -m 'not slow')")


def make_buffer(samples, sample_rate=16000) -> SoundBuffer:
    samples = np.asarray(samples, dtype=np.float64)
    return SoundBuffer(samples, sample_rate, samples.shape[0] / sample_rate)


def sine(freq, duration=1.0, amplitude=0.5, sample_rate=16000) -> SoundBuffer:
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    return make_buffer(amplitude * np.sin(2 * np.pi * freq * t), sample_rate)


@pytest.fixture
def wav_dir(tmp_path):
    """Five short synthetic WAVs, one per corpus family."""
    out = tmp_path / "corpus"
    synth_corpus(out, count=5, seed=1, duration=0.5)
    return out


@pytest.fixture
def small_config(tmp_path) -> RunConfig:
    """Mock-scale run: 2 seed generations + 24 evolution generations, retrains at 4, 12, 24."""
    return RunConfig().with_overrides(
        run={"seed": 3, "budget": 32 + 16 * 24, "seed_iterations": 32, "batch_size": 16,
             "grid_size": 8, "checkpoint_every": 10, "workers": 1, "output_dir": str(tmp_path / "run")},
        projection={"regime": "pca_dynamic", "retrain_increment": 4},
    )
