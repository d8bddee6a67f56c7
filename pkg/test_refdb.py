import logging

import numpy as np
import pytest
import soundfile as sf

from core.refdb import ingest, load_audio, load_store, query_knn, save_store, store_digest
from utils.errors import ErrorLedger, RefdbError


def test_ingest_one_entry_per_wav(wav_dir):
    store = ingest(wav_dir)
    assert store.size == 5
    assert store.ids == ["chirp_0001", "fm_0004", "noise_0002", "pluck_0003", "tone_0000"]
    assert store.features.shape == (5, 96)
    assert store.spectral.shape == (5, 10)
    assert all(len(d) == 64 for d in store.digests)
    assert np.allclose(store.normalized.mean(axis=0), 0.0, atol=1e-9)


def test_corrupt_file_is_skipped_and_logged(wav_dir, tmp_path, caplog):
    (wav_dir / "broken.wav").write_bytes(b"RIFF....not really audio")
    ledger = ErrorLedger(tmp_path / "errors.db")
    with caplog.at_level(logging.INFO):
        store = ingest(wav_dir, ledger=ledger)
    assert store.size == 5
    assert "broken" not in store.ids
    assert [p for p, _ in store.skipped] == ["broken.wav"]
    assert any("Skipping broken.wav" in r.getMessage() for r in caplog.records)
    assert ledger.count() == 1


def test_ingest_is_reproducible(wav_dir):
    a, b = ingest(wav_dir), ingest(wav_dir)
    assert a.ids == b.ids
    assert np.array_equal(a.features, b.features)
    assert store_digest(a) == store_digest(b)


def test_nested_directories_use_relative_ids(wav_dir):
    sub = wav_dir / "sub"
    sub.mkdir()
    (wav_dir / "tone_0000.wav").rename(sub / "tone_0000.wav")
    store = ingest(wav_dir)
    assert "sub/tone_0000" in store.ids
    assert store.paths[store.position("sub/tone_0000")] == "sub/tone_0000.wav"


def test_query_finds_itself(wav_dir):
    store = ingest(wav_dir)
    for i, sid in enumerate(store.ids):
        (best, dist), *_ = query_knn(store, store.normalized[i], 1)
        assert best == sid
        assert dist == pytest.approx(0.0, abs=1e-9)
    assert len(query_knn(store, store.normalized[0], 5)) == 5


def test_save_and_load_round_trip(wav_dir, tmp_path):
    store = ingest(wav_dir)
    out = save_store(store, tmp_path / "store")
    assert {p.name for p in out.iterdir()} >= {"manifest.json", "features.bin", "features.csv", "index.bin"}
    loaded = load_store(out)
    assert loaded.ids == store.ids
    assert np.array_equal(loaded.features, store.features)
    assert np.array_equal(loaded.norm.mean, store.norm.mean)
    assert np.allclose(loaded.spectral, store.spectral)
    assert store_digest(loaded) == store_digest(store)
    q = store.normalized[2]
    assert query_knn(loaded, q, 3) == query_knn(store, q, 3)


def test_missing_or_empty_directory(tmp_path):
    with pytest.raises(RefdbError):
        ingest(tmp_path / "nowhere")
    (tmp_path / "empty").mkdir()
    with pytest.raises(RefdbError):
        ingest(tmp_path / "empty")
    with pytest.raises(RefdbError):
        load_store(tmp_path / "empty")


def test_unknown_reference_id(wav_dir):
    store = ingest(wav_dir)
    with pytest.raises(RefdbError):
        store.normalized_vector("nope")


def test_load_audio_resamples_and_downmixes(tmp_path):
    t = np.arange(48000) / 48000
    stereo = np.stack([0.3 * np.sin(2 * np.pi * 440 * t)] * 2, axis=1)
    sf.write(str(tmp_path / "s.wav"), stereo, 48000, subtype="PCM_16")
    buf = load_audio(tmp_path / "s.wav")
    assert buf.sample_rate == 16000
    assert buf.length == 16000
    assert np.max(np.abs(buf.samples)) == pytest.approx(0.3, abs=0.02)
