import numpy as np
import pytest
from scipy.signal import chirp

from conftest import make_buffer, sine
from core.features import (
    FEATURE_DIM,
    SPECTRAL_NAMES,
    apply_norm,
    deltas,
    extract_mfcc96,
    extract_spectral,
    fit_norm,
    mfcc_frames,
    read_feature_binary,
    read_feature_csv,
    write_feature_binary,
    write_feature_csv,
)
from utils.errors import FeatureError

SR = 16000


# ---------- straight-line reference ----------

def _reference_mfcc(x):
    frame, hop, n_fft, n_mels = 400, 160, 512, 40
    n_frames = 1 + (len(x) - frame) // hop
    window = np.array([0.5 - 0.5 * np.cos(2 * np.pi * i / frame) for i in range(frame)])

    def mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def inv_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mel_points = np.linspace(mel(0.0), mel(8000.0), n_mels + 2)
    hz_points = [inv_mel(m) for m in mel_points]
    bin_freqs = [k * SR / n_fft for k in range(n_fft // 2 + 1)]
    filters = np.zeros((n_mels, n_fft // 2 + 1))
    for j in range(n_mels):
        lo, mid, hi = hz_points[j], hz_points[j + 1], hz_points[j + 2]
        for k, f in enumerate(bin_freqs):
            if lo < f <= mid:
                filters[j, k] = (f - lo) / (mid - lo)
            elif mid < f < hi:
                filters[j, k] = (hi - f) / (hi - mid)

    dct_matrix = np.zeros((n_mels, n_mels))
    for k in range(n_mels):
        scale = np.sqrt(1.0 / n_mels) if k == 0 else np.sqrt(2.0 / n_mels)
        for m in range(n_mels):
            dct_matrix[k, m] = scale * np.cos(np.pi * k * (2 * m + 1) / (2 * n_mels))

    out = []
    for t in range(n_frames):
        seg = x[t * hop: t * hop + frame] * window
        padded = np.zeros(n_fft)
        padded[:frame] = seg
        power = np.abs(np.fft.rfft(padded)) ** 2
        energies = np.log(filters @ power + 1e-10)
        out.append((dct_matrix @ energies)[1:13])
    return np.array(out)


def _oracle_signals():
    t = np.arange(SR) / SR
    rng = np.random.default_rng(0)
    signals = []
    for f in (110, 220, 440, 880, 1760, 3000, 5000):
        signals.append(0.5 * np.sin(2 * np.pi * f * t))
    for f0, f1 in ((50, 4000), (4000, 100), (300, 7000), (1000, 1200), (20, 8000), (200, 400)):
        signals.append(0.4 * chirp(t, f0=f0, t1=1.0, f1=f1))
    for scale in (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.8):
        signals.append(rng.normal(0.0, scale, SR).clip(-1, 1))
    return signals


def test_mfcc_matches_straight_line_reference():
    signals = _oracle_signals()
    assert len(signals) == 20
    for x in signals:
        ours = mfcc_frames(make_buffer(x))
        ref = _reference_mfcc(x)
        assert ours.shape == ref.shape
        assert np.max(np.abs(ours - ref)) < 1e-6


# ---------- mfcc96 ----------

def test_four_second_buffer_gives_398_frames():
    c = mfcc_frames(sine(440, duration=4.0))
    assert c.shape == (398, 12)


def test_mfcc96_shape_and_ordering():
    v = extract_mfcc96(sine(330, duration=1.0))
    assert v.shape == (FEATURE_DIM,)
    stats = v.reshape(24, 4)
    mean, std, lo, hi = stats.T
    assert np.all(lo <= mean) and np.all(mean <= hi)
    assert np.all(std >= 0)


def test_mfcc_statistics_survive_small_time_shift():
    t = np.arange(SR + 400) / SR
    tone = sum(np.sin(2 * np.pi * 220.0 * h * t) / h for h in (1, 2, 3, 5))
    x = 0.3 * tone * (1.0 + 0.5 * np.sin(2 * np.pi * 4.0 * t))
    a = extract_mfcc96(make_buffer(x[:SR]))
    b = extract_mfcc96(make_buffer(x[80:SR + 80]))  # half a hop later
    assert a @ b / (np.linalg.norm(a) * np.linalg.norm(b)) > 0.99
    mean_a, mean_b = a.reshape(24, 4)[:12, 0], b.reshape(24, 4)[:12, 0]
    assert np.linalg.norm(mean_a - mean_b) < 0.05 * np.linalg.norm(mean_a)


def test_constant_signal_has_zero_delta_block():
    v = extract_mfcc96(make_buffer(np.full(SR, 0.25)))
    assert np.allclose(v[48:], 0.0)


def test_deltas_of_linear_ramp():
    c = np.arange(10, dtype=float)[:, None] * np.array([[1.0, 2.0]])
    d = deltas(c)
    assert np.allclose(d[2:-2], [[1.0, 2.0]] * 6)


def test_too_short_buffer_fails():
    with pytest.raises(FeatureError, match="insufficient frames"):
        extract_mfcc96(make_buffer(np.zeros(300)))


def test_wrong_rate_fails():
    with pytest.raises(FeatureError):
        mfcc_frames(make_buffer(np.zeros(48000), sample_rate=48000))


# ---------- spectral ----------

def test_tone_centroid_near_its_frequency():
    s = extract_spectral(sine(1000.0))
    assert s.centroid == pytest.approx(1000.0, abs=15.625)


def test_white_noise_is_flat():
    rng = np.random.default_rng(5)
    values = [extract_spectral(make_buffer(rng.normal(0, 0.3, SR))).flatness for _ in range(20)]
    assert np.mean(values) > 0.5
    assert extract_spectral(sine(1000.0)).flatness < 0.1


def test_silence_descriptors():
    s = extract_spectral(make_buffer(np.zeros(SR)))
    assert s.centroid == 0.0
    assert s.flatness == 1.0


def test_spectral_names_and_lookup():
    s = extract_spectral(sine(500.0))
    assert len(SPECTRAL_NAMES) == 10
    assert s.get("rolloff") == s.rolloff
    with pytest.raises(FeatureError):
        s.get("brightness")


# ---------- normalisation ----------

def test_fit_and_apply_norm():
    stats = fit_norm([[1.0, 2.0], [3.0, 2.0]])
    assert np.allclose(stats.mean, [2.0, 2.0])
    assert np.allclose(stats.std, [1.0, 1e-8])
    assert stats.floored.tolist() == [False, True]
    assert np.allclose(apply_norm([3.0, 2.0], stats), [1.0, 0.0])


def test_two_point_population():
    data = np.array([[0.0, 0.0, 0.0], [2.0, 2.0, 2.0]])
    assert np.allclose(apply_norm(data, fit_norm(data)), [[-1.0] * 3, [1.0] * 3])


def test_identical_vectors_normalise_to_zero():
    data = np.tile(np.arange(5.0), (10, 1))
    stats = fit_norm(data)
    assert stats.floored.all()
    assert np.array_equal(apply_norm(data, stats), np.zeros_like(data))


def test_norm_of_population_is_standard():
    data = np.random.default_rng(2).normal(5.0, 3.0, size=(1000, 96))
    z = apply_norm(data, fit_norm(data))
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    assert np.allclose(z.std(axis=0), 1.0)


# ---------- files ----------

def test_feature_files(tmp_path):
    rng = np.random.default_rng(1)
    matrix = rng.normal(size=(3, FEATURE_DIM))
    spectral = rng.uniform(size=(3, len(SPECTRAL_NAMES)))
    ids = ["a", "b/c", "d"]

    write_feature_binary(tmp_path / "f.bin", matrix)
    assert np.array_equal(read_feature_binary(tmp_path / "f.bin"), matrix)

    write_feature_csv(tmp_path / "f.csv", ids, matrix, spectral)
    got_ids, got, got_spec = read_feature_csv(tmp_path / "f.csv")
    assert got_ids == ids
    assert np.array_equal(got, matrix)
    assert np.array_equal(got_spec, spectral)


def test_truncated_binary(tmp_path):
    path = tmp_path / "f.bin"
    write_feature_binary(path, np.ones((2, FEATURE_DIM)))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FeatureError):
        read_feature_binary(path)
