# utils/config.py
"""
Run configuration: sectioned .cfg files (configparser) plus a few
environment overrides loaded through python-dotenv.
"""
import configparser
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Tuple

import psutil
from dotenv import load_dotenv

from core.features import MfccSettings
from core.genome import MutationRates
from core.refdb import KnnParams
from utils.errors import ConfigError

load_dotenv()

PROJECTION_REGIMES = ("manual", "pca_static", "pca_dynamic", "ae_static", "ae_dynamic")
FITNESS_REGIMES = ("single_ref", "multi_ref", "ref_free")
SAMPLE_RATES = (16000, 48000)

# keys that do not change results and stay out of the config hash
PRESENTATION_KEYS = {("run", "workers"), ("run", "output_dir"), ("run", "label")}


def default_workers() -> int:
    env = os.getenv("ELITES_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"ELITES_WORKERS must be an integer, got '{env}'")
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


def output_root() -> Path:
    return Path(os.getenv("ELITES_OUTPUT_ROOT", "runs"))


def env_log_level() -> str:
    return os.getenv("ELITES_LOG_LEVEL", "INFO").upper()


# ---------- sections ----------

@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    budget: int = 300000
    seed_iterations: int = 512
    batch_size: int = 64
    grid_size: int = 100
    seed_mutation_rounds: int = 4
    checkpoint_every: int = 500
    max_invalid_fraction: float = 0.5
    workers: int = 0            # 0 = default_workers()
    output_dir: str = "default"
    label: str = ""


@dataclass(frozen=True)
class ProjectionSection:
    regime: str = "pca_dynamic"
    manual_features: Tuple[str, str] = ("slope", "rolloff")
    retrain_increment: int = 50
    ae_epochs: int = 200
    ae_finetune_epochs: int = 50
    ae_lr: float = 1e-3
    ae_batch_size: int = 32


@dataclass(frozen=True)
class FitnessSection:
    regime: str = "ref_free"
    k: int = 15
    power: float = 1.0
    reference_id: str = ""
    refdb: str = ""
    compression_level: int = 9


@dataclass(frozen=True)
class RenderSection:
    duration: float = 4.0
    sample_rate: int = 16000
    pitch: float = 220.0


@dataclass(frozen=True)
class ArchiveSection:
    protection_generations: int = 10
    protection_factor: float = 1.1


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    projection: ProjectionSection = field(default_factory=ProjectionSection)
    fitness: FitnessSection = field(default_factory=FitnessSection)
    render: RenderSection = field(default_factory=RenderSection)
    mutation: MutationRates = field(default_factory=MutationRates)
    archive: ArchiveSection = field(default_factory=ArchiveSection)
    features: MfccSettings = field(default_factory=MfccSettings)
    knn: KnnParams = field(default_factory=KnnParams)

    # ---------- derived ----------
    @property
    def seed_generations(self) -> int:
        return math.ceil(self.run.seed_iterations / self.run.batch_size)

    @property
    def evolution_generations(self) -> int:
        return math.ceil((self.run.budget - self.run.seed_iterations) / self.run.batch_size)

    @property
    def total_generations(self) -> int:
        return self.seed_generations + self.evolution_generations

    @property
    def is_dynamic(self) -> bool:
        return self.projection.regime.endswith("_dynamic")

    @property
    def workers(self) -> int:
        return self.run.workers or default_workers()

    def output_path(self) -> Path:
        path = Path(self.run.output_dir)
        return path if path.is_absolute() else output_root() / path

    def validate(self) -> "RunConfig":
        r = self.run
        if r.batch_size < 1:
            raise ConfigError("run.batch_size must be >= 1")
        if r.seed_iterations < 1:
            raise ConfigError("run.seed_iterations must be >= 1")
        if r.budget < r.seed_iterations:
            raise ConfigError("run.budget must be >= run.seed_iterations")
        if r.grid_size < 1:
            raise ConfigError("run.grid_size must be >= 1")
        if r.checkpoint_every < 1:
            raise ConfigError("run.checkpoint_every must be >= 1")
        if not (0.0 < r.max_invalid_fraction <= 1.0):
            raise ConfigError("run.max_invalid_fraction must be in (0, 1]")
        if r.workers < 0:
            raise ConfigError("run.workers must be >= 0")
        if self.projection.regime not in PROJECTION_REGIMES:
            raise ConfigError(f"projection.regime must be one of {PROJECTION_REGIMES}")
        if self.projection.retrain_increment < 2 or self.projection.retrain_increment % 2:
            raise ConfigError("projection.retrain_increment must be an even integer >= 2")
        if self.projection.ae_lr <= 0:
            raise ConfigError("projection.ae_lr must be > 0")
        if self.fitness.regime not in FITNESS_REGIMES:
            raise ConfigError(f"fitness.regime must be one of {FITNESS_REGIMES}")
        if self.fitness.power <= 0:
            raise ConfigError("fitness.power must be > 0")
        if self.fitness.k < 1:
            raise ConfigError("fitness.k must be >= 1")
        if self.fitness.regime != "ref_free" and not self.fitness.refdb:
            raise ConfigError(f"fitness.refdb is required for regime '{self.fitness.regime}'")
        if self.fitness.regime == "single_ref" and not self.fitness.reference_id:
            raise ConfigError("fitness.reference_id is required for regime 'single_ref'")
        if not (0 <= self.fitness.compression_level <= 9):
            raise ConfigError("fitness.compression_level must be in [0, 9]")
        if self.render.sample_rate not in SAMPLE_RATES:
            raise ConfigError(f"render.sample_rate must be one of {SAMPLE_RATES}")
        if self.render.duration <= 0 or self.render.pitch <= 0:
            raise ConfigError("render.duration and render.pitch must be > 0")
        if self.archive.protection_generations < 0 or self.archive.protection_factor < 1.0:
            raise ConfigError("archive protection settings out of range")
        if all(rate == 0.0 for _, rate in self.mutation.items()):
            raise ConfigError("at least one mutation rate must be > 0")
        if self.knn.m < 2 or self.knn.ef_construction < 1 or self.knn.ef_search < 1:
            raise ConfigError("knn parameters out of range")
        return self

    # ---------- echo / hash ----------
    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            section = asdict(getattr(self, f.name))
            out[f.name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return out

    def config_hash(self) -> str:
        echo = self.to_dict()
        for section, key in PRESENTATION_KEYS:
            echo[section].pop(key, None)
        canonical = json.dumps(echo, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, **sections) -> "RunConfig":
        """with_overrides(run={"budget": 100}) -> new config, re-validated."""
        updated = {}
        for name, values in sections.items():
            current = getattr(self, name)
            updated[name] = replace(current, **values)
        return replace(self, **updated).validate()


_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def _coerce(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = tuple(p.strip() for p in raw.split(",") if p.strip())
            if len(parts) != len(default):
                raise ValueError(f"expected {len(default)} comma-separated names")
            return parts
        return raw.strip()
    except ValueError as e:
        raise ConfigError(f"[{section}] {key} = '{raw}': {e}") from e


def config_from_dict(payload: dict) -> RunConfig:
    sections = {}
    for name, values in payload.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        defaults = _SECTIONS[name]()
        known = {f.name for f in fields(defaults)}
        for key in values:
            if key not in known:
                raise ConfigError(f"unknown key '{key}' in section [{name}]")
        typed = {}
        for key, value in values.items():
            default = getattr(defaults, key)
            typed[key] = _coerce(name, key, value, default) if isinstance(value, str) else (
                tuple(value) if isinstance(default, tuple) else value
            )
        try:
            sections[name] = replace(defaults, **typed)
        except Exception as e:
            raise ConfigError(f"section [{name}]: {e}") from e
    return RunConfig(**sections).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    payload = {s: dict(parser.items(s)) for s in parser.sections()}
    config = config_from_dict(payload)
    logging.info(f"[Config] Loaded {path} (hash {config.config_hash()[:12]})")
    return config

