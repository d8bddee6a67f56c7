# modules/analysis.py
"""
Run analyses: diversity, coverage, goal switches, remapping into a manual
behaviour space, spectral feature ranking, dataset projection coverage and
cross-run comparison.
"""
import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.archive import goal_switch_stats, read_snapshot_csv
from core.evaluation import to_feature_rate
from core.features import SPECTRAL_NAMES, extract_spectral
from core.genome import genome_from_dict
from core.projection import Projector, manual_projector, project_many, projector_from_dict
from core.refdb import load_store
from core.render import render
from utils.errors import ElitesError
from utils.run_logger import read_events

ZERO_NORM = 1e-12
RANK_LAMBDA = 0.5


# ---------- metrics ----------

def diversity(vectors) -> float:
    """
    Mean pairwise cosine distance. Uses sum_{i<j} u_i.u_j = (|sum u|^2 - n) / 2
    over unit vectors, so the cost is linear in the number of elites.
    """
    data = np.asarray(list(vectors), dtype=np.float64)
    if data.size == 0:
        return 0.0
    data = np.atleast_2d(data)
    norms = np.linalg.norm(data, axis=1)
    zero = norms <= ZERO_NORM
    if zero.any():
        logging.warning(f"[Analysis] {int(zero.sum())} zero feature vector(s) excluded from diversity")
        data, norms = data[~zero], norms[~zero]
    n = data.shape[0]
    if n < 2:
        return 0.0
    total = (data / norms[:, None]).sum(axis=0)
    mean_similarity = (float(total @ total) - n) / (n * (n - 1))
    return float(np.clip(1.0 - mean_similarity, 0.0, 2.0))


def coverage(archive) -> float:
    return archive.coverage()


# ---------- run artifacts ----------

def read_metrics(run_dir) -> List[dict]:
    path = Path(run_dir) / "metrics.csv"
    if not path.is_file():
        raise ElitesError(f"no metrics.csv in {run_dir}")
    with open(path, "r", newline="", encoding="utf-8") as f:
        rows = []
        for raw in csv.DictReader(f):
            rows.append({k: (float(v) if k in ("coverage", "diversity", "grid_mean_fitness", "qd_score")
                             else int(v)) for k, v in raw.items()})
    return rows


def read_elites(run_dir) -> Tuple[int, List[dict]]:
    path = Path(run_dir) / "elites.json"
    if not path.is_file():
        raise ElitesError(f"no elites.json in {run_dir} (run not finished?)")
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    return int(payload["grid_size"]), payload["elites"]


# ---------- remapping into a manual space ----------

@dataclass
class RemapResult:
    grid_size: int
    counts: np.ndarray            # occupancy count per cell of the manual grid
    coverage: float
    native_coverage: float
    skipped: int


def _spectral_from_genome(genome_dict: dict, render_settings) -> np.ndarray:
    duration, sample_rate, pitch = render_settings
    buffer = render(genome_from_dict(genome_dict), duration, sample_rate, pitch)
    return extract_spectral(to_feature_rate(buffer)).as_array()


def remap_to_manual(elites: Sequence[dict], projector, grid_size: int,
                    render_settings=(4.0, 16000, 220.0), native_grid_size: Optional[int] = None) -> RemapResult:
    """
    Project elite records (as exported in elites.json) through a manual
    projector. Records without spectral descriptors are re-rendered from
    their genome; records with neither are skipped.
    """
    rows, skipped = [], 0
    for e in elites:
        spectral = e.get("spectral")
        if spectral is None:
            if e.get("genome") is None:
                logging.warning(f"[Analysis] Elite {e.get('genome_id')} has no spectral data and no genome, skipped")
                skipped += 1
                continue
            try:
                spectral = _spectral_from_genome(e["genome"], render_settings)
            except ElitesError as err:
                logging.warning(f"[Analysis] Elite {e.get('genome_id')} could not be re-rendered: {err}")
                skipped += 1
                continue
        rows.append(np.asarray(spectral, dtype=np.float64))

    counts = np.zeros((grid_size, grid_size), dtype=np.int64)
    if rows:
        for coord in project_many(projector, np.array(rows), grid_size):
            counts[coord.row, coord.col] += 1
    occupied = int(np.count_nonzero(counts))
    native_cells = native_grid_size if native_grid_size else grid_size
    return RemapResult(grid_size, counts, occupied / grid_size ** 2,
                       len(elites) / native_cells ** 2, skipped)


def remap_projector(run_dir, config, fx: str, fy: str, elites: Sequence[dict], refdb=None) -> Projector:
    """
    Manual projector for re-plotting a run on (fx, fy). A manual run asked
    for its own descriptors gets the projector it placed elites with;
    otherwise min/max come from the reference store (`refdb`, else the
    run's configured one) and, failing that, from the elites themselves.
    """
    if config.projection.regime == "manual" and (fx, fy) == tuple(config.projection.manual_features):
        saved = sorted((Path(run_dir) / "projectors").glob("projector_g*.json"))
        if saved:
            with open(saved[-1], "r", encoding="utf-8") as f:
                projector = projector_from_dict(json.load(f))
            logging.info(f"[Analysis] Reusing run projector {saved[-1].name}")
            return projector
        logging.warning(f"[Analysis] No saved projector in {run_dir}, recalibrating")

    store_dir = refdb or config.fitness.refdb
    if store_dir and (refdb or Path(store_dir).is_dir()):
        calibration = load_store(store_dir).spectral
        logging.info(f"[Analysis] Calibrating {fx},{fy} on reference store {store_dir}")
    else:
        if store_dir:
            logging.warning(f"[Analysis] Reference store {store_dir} not found, calibrating on the elites")
        calibration = np.array([e["spectral"] for e in elites if e.get("spectral") is not None])
    if len(calibration) == 0:
        raise ElitesError(f"no spectral data to calibrate the {fx},{fy} space")
    return manual_projector(fx, fy, calibration)


# ---------- feature ranking ----------

@dataclass(frozen=True)
class FeatureRank:
    name: str
    variance: float
    max_abs_corr: float
    score: float


def rank_features(table, names: Sequence[str] = SPECTRAL_NAMES, lam: float = RANK_LAMBDA) -> List[FeatureRank]:
    """
    Variance of min-max normalised values, penalised by the strongest
    absolute correlation with another feature (score = variance - lam * max|corr|).
    Constant features get variance 0 and sort last.
    """
    data = np.atleast_2d(np.asarray(table, dtype=np.float64))
    if data.shape[0] < 2:
        raise ElitesError("feature ranking needs at least 2 sounds")
    lo, hi = data.min(axis=0), data.max(axis=0)
    span = hi - lo
    constant = span <= 0
    scaled = np.where(constant, 0.0, (data - lo) / np.where(constant, 1.0, span))
    variance = scaled.var(axis=0)

    d = data.shape[1]
    corr = np.zeros((d, d))
    live = np.flatnonzero(~constant)
    if live.size >= 2:
        corr[np.ix_(live, live)] = np.corrcoef(scaled[:, live], rowvar=False)
    np.fill_diagonal(corr, 0.0)
    max_corr = np.abs(corr).max(axis=1) if d > 1 else np.zeros(d)

    ranks = [FeatureRank(names[j], float(variance[j]), float(max_corr[j]),
                         float(variance[j] - lam * max_corr[j])) for j in range(d)]
    return sorted(ranks, key=lambda r: (r.variance == 0.0, -r.score, r.name))


# ---------- dataset coverage ----------

def dataset_projection_coverage(store, fx: str, fy: str, grid_size: int = 100) -> Tuple[float, np.ndarray]:
    projector = manual_projector(fx, fy, store.spectral)
    density = np.zeros((grid_size, grid_size), dtype=np.int64)
    for coord in project_many(projector, store.spectral, grid_size):
        density[coord.row, coord.col] += 1
    return float(np.count_nonzero(density)) / grid_size ** 2, density


# ---------- comparisons ----------

FINAL_KEYS = ("coverage", "diversity", "grid_mean_fitness", "goal_switches")


def run_label(run_dir) -> str:
    try:
        with open(Path(run_dir) / "manifest.json", "r", encoding="utf-8") as f:
            label = json.load(f)["config"]["run"].get("label", "")
    except (OSError, KeyError, json.JSONDecodeError):
        label = ""
    return label or Path(run_dir).name


def compare(run_dirs: Sequence, labels: Optional[Sequence[str]] = None) -> List[dict]:
    """Mean and std of final metrics per configuration label."""
    groups: Dict[str, List[dict]] = {}
    for i, run_dir in enumerate(run_dirs):
        label = labels[i] if labels else run_label(run_dir)
        metrics = read_metrics(run_dir)
        if not metrics:
            logging.warning(f"[Analysis] {run_dir} has no metrics rows, skipped")
            continue
        groups.setdefault(label, []).append(metrics[-1])

    out = []
    for label, finals in sorted(groups.items()):
        row = {"label": label, "runs": len(finals)}
        for key in FINAL_KEYS:
            values = np.array([f[key] for f in finals], dtype=np.float64)
            row[f"{key}_mean"] = float(values.mean())
            row[f"{key}_std"] = float(values.std())
        out.append(row)
    return out


def write_rows_csv(path, rows: List[dict]) -> Path:
    path = Path(path)
    if not rows:
        path.write_text("", encoding="utf-8")
        return path
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return path


def goal_switch_table(run_dir) -> List[dict]:
    """Goal-switch counts for the cells occupied at the end of the run (grid.csv)."""
    grid = Path(run_dir) / "grid.csv"
    if not grid.is_file():
        raise ElitesError(f"no grid.csv in {run_dir} (run not finished?)")
    occupied = [(row[0], row[1]) for row in read_snapshot_csv(grid)]
    stats = goal_switch_stats(read_events(Path(run_dir) / "events.ndjson"), occupied)
    return [{"row": r, "col": c, "new_elites": n, "cross_cell": cross} for (r, c), (n, cross) in stats.items()]
