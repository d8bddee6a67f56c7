# core/refdb.py
"""
Reference sound store: features of a WAV corpus, z-score statistics over
all of it, and an HNSW index over the normalised vectors.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import soundfile as sf
from scipy.signal import resample_poly

from core.features import (
    FEATURE_DIM,
    SPECTRAL_NAMES,
    MfccSettings,
    NormStats,
    apply_norm,
    extract_mfcc96,
    extract_spectral,
    fit_norm,
    read_feature_binary,
    write_feature_binary,
    write_feature_csv,
)
from core.knn_index import KnnIndex
from core.render import SoundBuffer
from utils.errors import ElitesError, RefdbError

STORE_VERSION = 1
FEATURE_RATE = 16000


@dataclass(frozen=True)
class KnnParams:
    m: int = 16
    ef_construction: int = 200
    ef_search: int = 64
    seed: int = 0


@dataclass
class ReferenceStore:
    ids: List[str]
    paths: List[str]
    digests: List[str]
    features: np.ndarray          # raw 96-dim vectors, one row per entry
    spectral: np.ndarray          # (n, 10) spectral descriptors
    norm: NormStats
    index: KnnIndex
    skipped: List[Tuple[str, str]] = field(default_factory=list)
    knn: KnnParams = field(default_factory=KnnParams)

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise RefdbError("reference ids must be unique")
        if len(self.index) != len(self.ids):
            raise RefdbError(f"index size {len(self.index)} != entry count {len(self.ids)}")
        self._positions = {sid: i for i, sid in enumerate(self.ids)}

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def normalized(self) -> np.ndarray:
        return apply_norm(self.features, self.norm)

    def position(self, sid: str) -> int:
        try:
            return self._positions[sid]
        except KeyError:
            raise RefdbError(f"unknown reference id '{sid}'")

    def normalized_vector(self, sid: str) -> np.ndarray:
        return apply_norm(self.features[self.position(sid)], self.norm)


# ---------- audio loading ----------

def load_audio(path, target_rate: int = FEATURE_RATE) -> SoundBuffer:
    """Decode a WAV file, downmix to mono and resample to `target_rate`."""
    data, rate = sf.read(str(path), dtype="float64", always_2d=True)
    if data.shape[0] == 0:
        raise RefdbError(f"{path}: no samples")
    mono = data.mean(axis=1)
    if rate != target_rate:
        g = gcd(int(rate), int(target_rate))
        mono = resample_poly(mono, target_rate // g, int(rate) // g)
    return SoundBuffer(samples=mono, sample_rate=target_rate, duration=mono.shape[0] / target_rate)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _wav_files(root: Path) -> List[Path]:
    return sorted((p for p in root.rglob("*") if p.is_file() and p.suffix.lower() == ".wav"),
                  key=lambda p: p.relative_to(root).as_posix())


# ---------- ingest ----------

def build_store(ids, paths, digests, features, spectral, knn: KnnParams = KnnParams(),
                skipped=None) -> ReferenceStore:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    norm = fit_norm(features)
    index = KnnIndex.build(apply_norm(features, norm), knn.m, knn.ef_construction, knn.ef_search, knn.seed)
    return ReferenceStore(list(ids), list(paths), list(digests), features,
                          np.atleast_2d(np.asarray(spectral, dtype=np.float64)).reshape(-1, len(SPECTRAL_NAMES)),
                          norm, index, list(skipped or []), knn)


def ingest(dir_path, knn: KnnParams = KnnParams(), settings: MfccSettings = MfccSettings(),
           ledger=None) -> ReferenceStore:
    root = Path(dir_path)
    if not root.is_dir():
        raise RefdbError(f"reference directory not found: {root}")

    ids, paths, digests, feats, spec, skipped = [], [], [], [], [], []
    for path in _wav_files(root):
        rel = path.relative_to(root).as_posix()
        try:
            buffer = load_audio(path)
            vector = extract_mfcc96(buffer, settings)
            spectral = extract_spectral(buffer).as_array()
        except (ElitesError, RuntimeError, ValueError, sf.LibsndfileError) as e:
            skipped.append((rel, str(e)))
            logging.warning(f"[RefDB] Skipping {rel}: {e}")
            if ledger is not None:
                ledger.report_error("RefDB", f"skipped {rel}: {e}")
            continue
        ids.append(rel[: -len(path.suffix)])
        paths.append(rel)
        digests.append(file_digest(path))
        feats.append(vector)
        spec.append(spectral)

    if not ids:
        raise RefdbError(f"no decodable WAV files in {root} ({len(skipped)} skipped)")

    store = build_store(ids, paths, digests, np.array(feats), np.array(spec), knn, skipped)
    logging.info(f"[RefDB] Ingested {store.size} sounds from {root}, skipped {len(skipped)}")
    return store


def query_knn(store: ReferenceStore, v, k: int) -> List[Tuple[str, float]]:
    """k nearest references to a normalised vector, as (id, cosine distance)."""
    if store.size == 0:
        raise RefdbError("empty reference store")
    return [(store.ids[row], dist) for row, dist in store.index.search(v, k)]


# ---------- persistence ----------

def _manifest(store: ReferenceStore) -> dict:
    return {
        "version": STORE_VERSION,
        "feature_dim": FEATURE_DIM,
        "count": store.size,
        "ids": store.ids,
        "paths": store.paths,
        "digests": store.digests,
        "norm": store.norm.to_dict(),
        "spectral_names": list(SPECTRAL_NAMES),
        "spectral": store.spectral.tolist(),
        "skipped": [{"path": p, "reason": r} for p, r in store.skipped],
        "knn": {"m": store.knn.m, "ef_construction": store.knn.ef_construction,
                "ef_search": store.knn.ef_search, "seed": store.knn.seed},
    }


def store_digest(store: ReferenceStore) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(store.ids).encode("utf-8"))
    h.update(np.ascontiguousarray(store.features, dtype="<f8").tobytes())
    return h.hexdigest()


def save_store(store: ReferenceStore, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(_manifest(store), f, ensure_ascii=False, indent=2)
    write_feature_binary(out / "features.bin", store.features)
    write_feature_csv(out / "features.csv", store.ids, store.features, store.spectral)
    store.index.save(out / "index.bin")
    logging.info(f"[RefDB] Saved store ({store.size} entries) to {out}")
    return out


def load_store(store_dir) -> ReferenceStore:
    root = Path(store_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise RefdbError(f"no reference store at {root} (manifest.json missing)")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("version") != STORE_VERSION:
        raise RefdbError(f"unsupported store version {manifest.get('version')}")
    features = read_feature_binary(root / "features.bin")
    if features.shape[0] != manifest["count"]:
        raise RefdbError("features.bin does not match manifest count")
    knn = KnnParams(**manifest["knn"])
    index = KnnIndex.load(root / "index.bin")
    return ReferenceStore(
        ids=list(manifest["ids"]),
        paths=list(manifest["paths"]),
        digests=list(manifest["digests"]),
        features=features,
        spectral=np.asarray(manifest["spectral"], dtype=np.float64).reshape(-1, len(SPECTRAL_NAMES)),
        norm=NormStats.from_dict(manifest["norm"]),
        index=index,
        skipped=[(s["path"], s["reason"]) for s in manifest["skipped"]],
        knn=knn,
    )
