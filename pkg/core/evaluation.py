# core/evaluation.py
"""
Candidate evaluation: render -> features -> fitness.

`SoundEvaluator` fans a batch out over a process pool; results come back
in batch order. `MockEvaluator` derives features and fitness from a hash of
the genome so the engine loop can be exercised without audio.
"""
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.signal import resample_poly

from core.features import FEATURE_DIM, MfccSettings, apply_norm, extract_mfcc96, extract_spectral
from core.fitness import FitnessEvaluator
from core.genome import Genome, serialize
from core.render import SoundBuffer, render
from utils.errors import ElitesError

FEATURE_RATE = 16000


@dataclass
class CandidateResult:
    index: int
    ok: bool
    features: Optional[np.ndarray] = None     # raw 96-dim vector
    spectral: Optional[np.ndarray] = None
    fitness: float = 0.0
    error: str = ""
    nonfinite: int = 0


@dataclass(frozen=True)
class EvalContext:
    duration: float
    sample_rate: int
    pitch: float
    mfcc: MfccSettings
    fitness: FitnessEvaluator


def to_feature_rate(buffer: SoundBuffer) -> SoundBuffer:
    if buffer.sample_rate == FEATURE_RATE:
        return buffer
    samples = resample_poly(buffer.samples, 1, buffer.sample_rate // FEATURE_RATE)
    return SoundBuffer(samples, FEATURE_RATE, buffer.duration, buffer.report)


def evaluate_one(ctx: EvalContext, index: int, genome: Optional[Genome]) -> CandidateResult:
    if genome is None:
        return CandidateResult(index, False, error="mutation failed")
    try:
        buffer = render(genome, ctx.duration, ctx.sample_rate, ctx.pitch)
        analysed = to_feature_rate(buffer)
        raw = extract_mfcc96(analysed, ctx.mfcc)
        spectral = extract_spectral(analysed).as_array()
        if ctx.fitness.regime == "ref_free":
            fitness = ctx.fitness.score(None, buffer)
        else:
            fitness = ctx.fitness.score(apply_norm(raw, ctx.fitness.store.norm), buffer)
    except (ElitesError, ValueError, FloatingPointError) as e:
        return CandidateResult(index, False, error=f"{type(e).__name__}: {e}")
    return CandidateResult(index, True, raw, spectral, float(fitness), nonfinite=buffer.report.nonfinite_count)


# ---------- worker pool ----------

_WORKER_CTX: Optional[EvalContext] = None


def _init_worker(ctx: EvalContext):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _evaluate_in_worker(job):
    index, genome = job
    return evaluate_one(_WORKER_CTX, index, genome)


class SoundEvaluator:
    def __init__(self, ctx: EvalContext, workers: int = 1):
        self.ctx = ctx
        self.workers = max(1, int(workers))
        self._pool: Optional[ProcessPoolExecutor] = None

    def evaluate(self, genomes: Sequence[Optional[Genome]]) -> List[CandidateResult]:
        jobs = list(enumerate(genomes))
        if self.workers == 1 or len(jobs) <= 1:
            return [evaluate_one(self.ctx, i, g) for i, g in jobs]
        if self._pool is None:
            self._pool = ProcessPoolExecutor(max_workers=self.workers,
                                             initializer=_init_worker, initargs=(self.ctx,))
            logging.info(f"[Evaluator] Started {self.workers} worker processes")
        chunk = max(1, len(jobs) // (4 * self.workers))
        return list(self._pool.map(_evaluate_in_worker, jobs, chunksize=chunk))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


class MockEvaluator:
    """Pseudo-random features and fitness keyed on the genome's content."""

    def __init__(self, seed: int = 0, invalid_rate: float = 0.0):
        self.seed = seed
        self.invalid_rate = invalid_rate

    def evaluate(self, genomes: Sequence[Optional[Genome]]) -> List[CandidateResult]:
        out = []
        for i, g in enumerate(genomes):
            if g is None:
                out.append(CandidateResult(i, False, error="mutation failed"))
                continue
            key = zlib.crc32(serialize(g)) ^ (self.seed * 0x9E3779B1 & 0xFFFFFFFF)
            rng = np.random.default_rng(key)
            if rng.random() < self.invalid_rate:
                out.append(CandidateResult(i, False, error="mock failure"))
                continue
            features = rng.normal(0.0, 1.0, FEATURE_DIM)
            spectral = rng.uniform(0.0, 1.0, 10)
            out.append(CandidateResult(i, True, features, spectral, float(rng.uniform(0.0, 1.0))))
        return out

    def close(self):
        pass
