# core/engine.py
"""
QD run orchestration.

Generations 1..seed_generations evaluate the seed population (buffered, then
projected and placed once the initial projector exists). Every later
generation selects parents uniformly from occupied cells, mutates them,
evaluates the batch (possibly on a worker pool) and commits results in
batch order. Dynamic regimes retrain the projector at the scheduled
generations and remap the archive.
"""
import csv
import json
import logging
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.archive import PLACED_NEW, REPLACED, Archive, Elite, write_lineage_csv
from core.evaluation import CandidateResult, EvalContext, SoundEvaluator
from core.event_bus import ArchiveEvent, EventBus
from core.features import NormStats, apply_norm, fit_norm
from core.fitness import FitnessEvaluator
from core.genome import Genome, genome_to_dict, minimal_genome, mutate
from core.projection import (
    Projector,
    RetrainSchedule,
    fit_autoencoder,
    fit_pca,
    manual_projector,
    next_retrain_generation,
    project_many,
    projector_to_dict,
)
from core.refdb import ReferenceStore, load_store, store_digest
from modules.analysis import diversity
from utils.config import RunConfig, config_from_dict
from utils.errors import CheckpointError, ConfigError, EngineAbort, ErrorLedger, MutationError, ProjectionError
from utils.manifest import build_manifest, load_manifest, save_manifest, verify_manifest
from utils.run_logger import RunLogger

CHECKPOINT_VERSION = 1

METRICS_HEADER = ("generation", "evaluations", "occupied", "coverage", "diversity",
                  "grid_mean_fitness", "qd_score", "goal_switches", "invalid", "retrained")


@dataclass
class RunState:
    archive: Archive
    schedule: RetrainSchedule
    rng_variation: np.random.Generator
    rng_selection: np.random.Generator
    generation: int = 0
    evaluations: int = 0
    invalid_total: int = 0
    goal_switches: int = 0
    projector: Optional[Projector] = None
    norm: Optional[NormStats] = None
    metrics: List[dict] = field(default_factory=list)
    retrain_generations: List[int] = field(default_factory=list)


@dataclass
class RunReport:
    run_dir: Optional[Path]
    generations: int
    evaluations: int
    invalid: int
    coverage: float
    diversity: float
    grid_mean_fitness: float
    qd_score: float
    goal_switches: int
    retrain_generations: List[int]


# ---------- checkpoint format ----------

def checkpoint(state: RunState, config: RunConfig) -> bytes:
    payload = {"version": CHECKPOINT_VERSION, "config_hash": config.config_hash(), "state": state}
    return pickle.dumps(payload, protocol=pickle.HIGHEST_PROTOCOL)


def resume(data: bytes, config: RunConfig) -> RunState:
    try:
        payload = pickle.loads(data)
    except Exception as e:
        raise CheckpointError(f"unreadable checkpoint: {e}") from e
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        version = payload.get("version") if isinstance(payload, dict) else None
        raise CheckpointError(f"checkpoint version {version} != supported {CHECKPOINT_VERSION}")
    if payload.get("config_hash") != config.config_hash():
        raise CheckpointError("checkpoint was written under a different config (hash mismatch)")
    return payload["state"]


def fresh_state(config: RunConfig, bus: Optional[EventBus] = None) -> RunState:
    variation, selection = np.random.SeedSequence(config.run.seed).spawn(2)
    archive = Archive(config.run.grid_size, bus or EventBus(),
                      config.archive.protection_generations, config.archive.protection_factor)
    return RunState(
        archive=archive,
        schedule=RetrainSchedule(config.projection.retrain_increment),
        rng_variation=np.random.default_rng(variation),
        rng_selection=np.random.default_rng(selection),
    )


def build_evaluator(config: RunConfig, store: Optional[ReferenceStore]) -> SoundEvaluator:
    fitness = FitnessEvaluator(
        regime=config.fitness.regime,
        power=config.fitness.power,
        k=config.fitness.k,
        store=store,
        reference_id=config.fitness.reference_id,
        compression_level=config.fitness.compression_level,
    )
    ctx = EvalContext(config.render.duration, config.render.sample_rate, config.render.pitch,
                      config.features, fitness)
    return SoundEvaluator(ctx, config.workers)


class Engine:
    def __init__(self, config: RunConfig, store: Optional[ReferenceStore] = None, evaluator=None,
                 run_dir=None, write_outputs: bool = True, state: Optional[RunState] = None):
        self.config = config
        self.store = store
        if evaluator is None:
            if config.fitness.regime != "ref_free" and store is None:
                raise ConfigError(f"fitness regime '{config.fitness.regime}' needs a reference store")
            evaluator = build_evaluator(config, store)
        self.evaluator = evaluator
        self.run_dir = Path(run_dir) if run_dir is not None else config.output_path()
        self.write_outputs = write_outputs
        self.resumed = state is not None
        self.state = state if state is not None else fresh_state(config)
        self.logger: Optional[RunLogger] = None
        self.ledger: Optional[ErrorLedger] = None
        self.state.archive.bus.subscribe(PLACED_NEW, self._count_goal_switch)
        self.state.archive.bus.subscribe(REPLACED, self._count_goal_switch)

    # ---------- construction from disk ----------
    @classmethod
    def from_checkpoint(cls, path, config: Optional[RunConfig] = None, store: Optional[ReferenceStore] = None,
                        evaluator=None, workers: Optional[int] = None) -> "Engine":
        path = Path(path)
        if not path.is_file():
            raise CheckpointError(f"checkpoint not found: {path}")
        run_dir = path.parent.parent
        manifest = load_manifest(run_dir)
        if config is None:
            config = config_from_dict(manifest["config"])
        if workers is not None:
            config = config.with_overrides(run={"workers": workers})
        if store is None and config.fitness.refdb:
            store = load_store(config.fitness.refdb)
        verify_manifest(manifest, config, store_digest(store) if store is not None else None)
        state = resume(path.read_bytes(), config)
        logging.info(f"[Engine] Resuming {run_dir} at generation {state.generation}")
        return cls(config, store, evaluator, run_dir=run_dir, state=state)

    # ---------- bookkeeping ----------
    def _count_goal_switch(self, event: ArchiveEvent):
        d = event.data
        parent = d.get("parent_cell")
        if d.get("origin") == "mutation" and parent is not None and tuple(parent) != (d["row"], d["col"]):
            self.state.goal_switches += 1

    def _report(self, description: str, severity: str = "WARNING"):
        if self.ledger is not None:
            self.ledger.report_error("Engine", description, severity)
        else:
            logging.log(getattr(logging, severity, logging.WARNING), f"[Engine] {description}")

    def _open_outputs(self):
        if not self.write_outputs:
            return
        self.run_dir.mkdir(parents=True, exist_ok=True)
        for sub in ("checkpoints", "snapshots", "projectors"):
            (self.run_dir / sub).mkdir(exist_ok=True)
        self.logger = RunLogger(self.run_dir, append=self.resumed)
        self.logger.attach(self.state.archive.bus)
        self.ledger = ErrorLedger(self.run_dir / "errors.db")
        if self.resumed:
            self.logger.rewrite_events(self.state.archive.events)
            self._rewrite_metrics()
        else:
            digest = store_digest(self.store) if self.store is not None else None
            save_manifest(self.run_dir, build_manifest(self.config, digest))
            self._rewrite_metrics()

    def _close_outputs(self):
        if self.logger is not None:
            self.logger.close()
            self.logger = None

    def _rewrite_metrics(self):
        with open(self.run_dir / "metrics.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(METRICS_HEADER)
            for row in self.state.metrics:
                writer.writerow([_fmt(row[k]) for k in METRICS_HEADER])

    def _record_metrics(self, generation: int, invalid: int, retrained: bool):
        archive = self.state.archive
        elites = archive.elites()
        row = {
            "generation": generation,
            "evaluations": self.state.evaluations,
            "occupied": len(elites),
            "coverage": archive.coverage(),
            "diversity": diversity([e.features for e in elites]),
            "grid_mean_fitness": archive.grid_mean_fitness(),
            "qd_score": archive.qd_score(),
            "goal_switches": self.state.goal_switches,
            "invalid": invalid,
            "retrained": int(retrained),
        }
        self.state.metrics.append(row)
        if self.write_outputs:
            with open(self.run_dir / "metrics.csv", "a", newline="", encoding="utf-8") as f:
                csv.writer(f).writerow([_fmt(row[k]) for k in METRICS_HEADER])

    def _save_projector(self, projector: Projector):
        if not self.write_outputs:
            return
        path = self.run_dir / "projectors" / f"projector_g{projector.generation:06d}.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(projector_to_dict(projector), f, ensure_ascii=False, indent=2)

    def save_checkpoint(self) -> Optional[Path]:
        if not self.write_outputs:
            return None
        gen = self.state.generation
        path = self.run_dir / "checkpoints" / f"ckpt_g{gen:06d}.pkl"
        path.write_bytes(checkpoint(self.state, self.config))
        self.state.archive.write_snapshot(self.run_dir / "snapshots" / f"grid_g{gen:06d}.csv")
        if self.logger is not None:
            self.logger.flush()
        logging.info(f"[Engine] Checkpoint written: {path}")
        return path

    # ---------- evaluation ----------
    def _check_invalid(self, generation: int, results: Sequence[CandidateResult]) -> int:
        bad = [r for r in results if not r.ok]
        for r in bad:
            self._report(f"generation {generation} candidate {r.index} invalid: {r.error}")
        self.state.invalid_total += len(bad)
        limit = self.config.run.max_invalid_fraction * len(results)
        if results and len(bad) > limit:
            sample = "; ".join(r.error for r in bad[:3])
            raise EngineAbort(f"generation {generation}: {len(bad)}/{len(results)} candidates invalid "
                              f"(limit {self.config.run.max_invalid_fraction:.0%}); first errors: {sample}")
        return len(bad)

    def _coords(self, normalized: np.ndarray, spectral: np.ndarray):
        p = self.state.projector
        return project_many(p, spectral if p.uses_spectral else normalized, self.config.run.grid_size)

    # ---------- seed phase ----------
    def _fit_initial(self, normalized: np.ndarray, spectral: np.ndarray, generation: int) -> Projector:
        pc = self.config.projection
        if pc.regime == "manual":
            calibration = self.store.spectral if self.store is not None else spectral
            fx, fy = pc.manual_features
            return manual_projector(fx, fy, calibration, generation)
        if pc.regime.startswith("pca"):
            return fit_pca(normalized, generation)
        return fit_autoencoder(normalized, None, pc.ae_epochs, pc.ae_lr, pc.ae_batch_size,
                               self.config.run.seed, generation)

    def _seed_phase(self):
        cfg = self.config
        st = self.state
        batch = cfg.run.batch_size
        seeds = st.rng_variation.integers(0, 2 ** 32, size=cfg.run.seed_iterations)
        candidates: List[Genome] = []
        for s in seeds:
            g = minimal_genome(int(s))
            for _ in range(cfg.run.seed_mutation_rounds):
                g = mutate(g, st.rng_variation, cfg.mutation)
            candidates.append(g)

        evaluated: List[Tuple[Genome, CandidateResult]] = []
        invalid = 0
        for gen in range(1, cfg.seed_generations + 1):
            chunk = candidates[(gen - 1) * batch: gen * batch]
            results = self.evaluator.evaluate(chunk)
            invalid += self._check_invalid(gen, results)
            evaluated.extend(zip(chunk, results))
            st.evaluations += len(chunk)
            st.generation = gen
            logging.info(f"[Engine] Seed generation {gen}/{cfg.seed_generations}: {len(chunk)} evaluated")

        valid = [(g, r) for g, r in evaluated if r.ok]
        if not valid:
            raise EngineAbort("no valid candidate in the seed phase")
        raw = np.array([r.features for _, r in valid])
        spectral = np.array([r.spectral for _, r in valid])
        st.norm = self.store.norm if self.store is not None else fit_norm(raw)
        normalized = apply_norm(raw, st.norm)
        st.projector = self._fit_initial(normalized, spectral, st.generation)
        self._save_projector(st.projector)

        coords = self._coords(normalized, spectral)
        for (g, r), vec, spec, coord in zip(valid, normalized, spectral, coords):
            st.archive.try_place(Elite(g, g.lineage_id, r.fitness, vec, coord, spectral=spec,
                                       parent_id=g.parent_id, origin="seed"), st.generation)

        if cfg.is_dynamic:
            while next_retrain_generation(st.schedule) <= st.generation:
                logging.info(f"[Engine] Retrain event at generation {next_retrain_generation(st.schedule)} "
                              f"falls inside the seed phase, skipped")
                st.schedule.advance()
        self._record_metrics(st.generation, invalid, False)
        logging.info(f"[Engine] Seed phase done: {len(st.archive)} cells occupied "
                     f"from {len(valid)} valid seeds")

    # ---------- evolution ----------
    def select_parents(self, n: int) -> List[Elite]:
        archive = self.state.archive
        occupied = archive.occupied_cells()
        if not occupied:
            raise EngineAbort("archive is empty, nothing to select")
        picks = self.state.rng_selection.integers(len(occupied), size=n)
        return [archive.cells[occupied[i]] for i in picks]

    def _retrain(self, generation: int):
        st = self.state
        pc = self.config.projection
        training = np.array([e.features for e in st.archive.elites()])
        try:
            if pc.regime.startswith("pca"):
                new = fit_pca(training, generation)
            else:
                new = fit_autoencoder(training, st.projector, pc.ae_finetune_epochs, pc.ae_lr,
                                      pc.ae_batch_size, self.config.run.seed + generation, generation)
        except ProjectionError as e:
            self._report(f"retrain at generation {generation} failed, projector kept: {e}")
            return False
        st.projector = new
        st.archive.remap(new, generation)
        st.retrain_generations.append(generation)
        self._save_projector(new)
        return True

    def step(self, generation: int):
        cfg = self.config
        st = self.state
        n = min(cfg.run.batch_size, cfg.run.budget - st.evaluations)
        parents = self.select_parents(n)

        children: List[Optional[Genome]] = []
        for p in parents:
            try:
                children.append(mutate(p.genome, st.rng_variation, cfg.mutation))
            except MutationError as e:
                self._report(f"generation {generation}: mutation of {p.genome_id} failed: {e}")
                children.append(None)

        results = self.evaluator.evaluate(children)
        invalid = self._check_invalid(generation, results)
        valid = [i for i, r in enumerate(results) if r.ok]
        if valid:
            normalized = apply_norm(np.array([results[i].features for i in valid]), st.norm)
            spectral = np.array([results[i].spectral for i in valid])
            coords = self._coords(normalized, spectral)
            for i, vec, spec, coord in zip(valid, normalized, spectral, coords):
                child, parent = children[i], parents[i]
                st.archive.try_place(Elite(child, child.lineage_id, results[i].fitness, vec, coord,
                                           parent_cell=parent.cell, spectral=spec,
                                           parent_id=parent.genome_id), generation)
        st.evaluations += n
        st.generation = generation

        retrained = False
        if cfg.is_dynamic:
            if generation == next_retrain_generation(st.schedule):
                retrained = self._retrain(generation)
                st.schedule.advance()
        self._record_metrics(generation, invalid, retrained)
        if generation % 50 == 0:
            last = st.metrics[-1]
            logging.info(f"[Engine] Generation {generation}/{cfg.total_generations}: "
                         f"coverage {last['coverage']:.4f}, diversity {last['diversity']:.4f}, "
                         f"mean fitness {last['grid_mean_fitness']:.4f}")

    # ---------- run ----------
    def run(self, until_generation: Optional[int] = None) -> RunReport:
        cfg = self.config
        target = cfg.total_generations if until_generation is None else min(until_generation, cfg.total_generations)
        self._open_outputs()
        try:
            if self.state.generation < cfg.seed_generations:
                self._seed_phase()
            while self.state.generation < target:
                gen = self.state.generation + 1
                self.step(gen)
                if gen % cfg.run.checkpoint_every == 0:
                    self.save_checkpoint()
            if self.state.generation >= cfg.total_generations:
                self._finalize()
            elif self.write_outputs:
                self.save_checkpoint()
        finally:
            self.evaluator.close()
            self._close_outputs()
        return self.report()

    def report(self) -> RunReport:
        st = self.state
        last = st.metrics[-1] if st.metrics else {}
        return RunReport(
            run_dir=self.run_dir if self.write_outputs else None,
            generations=st.generation,
            evaluations=st.evaluations,
            invalid=st.invalid_total,
            coverage=last.get("coverage", 0.0),
            diversity=last.get("diversity", 0.0),
            grid_mean_fitness=last.get("grid_mean_fitness", 0.0),
            qd_score=last.get("qd_score", 0.0),
            goal_switches=st.goal_switches,
            retrain_generations=list(st.retrain_generations),
        )

    def _finalize(self):
        if not self.write_outputs:
            return
        from modules.plots import write_run_plots
        from modules.run_report import write_run_report

        st = self.state
        if st.generation % self.config.run.checkpoint_every != 0:
            self.save_checkpoint()
        st.archive.write_snapshot(self.run_dir / "grid.csv")
        write_lineage_csv(self.run_dir / "lineage.csv", st.archive.lineage_rows())
        export_elites(st.archive, self.run_dir / "elites.json")
        manifest = load_manifest(self.run_dir)
        manifest["final"] = {"generation": st.generation, "evaluations": st.evaluations,
                             "invalid": st.invalid_total,
                             "retrain_generations": st.retrain_generations}
        save_manifest(self.run_dir, manifest)
        plots = write_run_plots(self.run_dir, st.metrics, st.archive)
        write_run_report(self.run_dir, self.config, self.report(), plots)
        logging.info(f"[Engine] Run complete: {st.generation} generations, {st.evaluations} evaluations, "
                     f"outputs in {self.run_dir}")


def export_elites(archive: Archive, path) -> None:
    records = []
    for e in archive.elites():
        records.append({
            "genome_id": e.genome_id,
            "parent_id": e.parent_id,
            "fitness": float(e.fitness),
            "row": e.cell[0],
            "col": e.cell[1],
            "generation": e.generation,
            "features": [float(x) for x in e.features],
            "spectral": None if e.spectral is None else [float(x) for x in e.spectral],
            "genome": genome_to_dict(e.genome) if e.genome is not None else None,
        })
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"grid_size": archive.grid_size, "elites": records}, f, ensure_ascii=False)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)
