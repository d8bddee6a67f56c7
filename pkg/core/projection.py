# core/projection.py
"""
Behaviour descriptors: 96-dim features (or spectral descriptors) -> (x, y)
in [0, 1]^2 -> grid cell.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from core.autoencoder import model_from_lists, state_to_lists, train_autoencoder
from core.features import SPECTRAL_NAMES
from utils.errors import ProjectionError

PROJECTOR_KINDS = ("manual", "pca", "autoencoder")
RANK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class BehaviourCoord:
    x: float
    y: float
    row: int
    col: int
    clamped: bool = False

    @property
    def cell(self) -> Tuple[int, int]:
        return (self.row, self.col)


def cell_of(x: float, y: float, grid_size: int) -> Tuple[int, int]:
    row = min(int(np.floor(x * grid_size)), grid_size - 1)
    col = min(int(np.floor(y * grid_size)), grid_size - 1)
    return max(row, 0), max(col, 0)


@dataclass
class Projector:
    kind: str
    params: Dict[str, Any]
    lo: np.ndarray
    hi: np.ndarray
    generation: int = 0
    _model: Any = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in PROJECTOR_KINDS:
            raise ProjectionError(f"unknown projector kind '{self.kind}'")
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if not np.all(self.hi > self.lo):
            raise ProjectionError(f"calibration min must be < max per axis (lo={self.lo}, hi={self.hi})")

    @property
    def uses_spectral(self) -> bool:
        return self.kind == "manual"

    def model(self):
        if self._model is None:
            self._model = model_from_lists(self.params["state"], int(self.params["input_dim"]))
        return self._model

    def raw(self, data) -> np.ndarray:
        """Uncalibrated 2-D outputs, shape (n, 2)."""
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        if self.kind == "manual":
            cols = [SPECTRAL_NAMES.index(n) for n in self.params["features"]]
            return data[:, cols]
        if self.kind == "pca":
            return (data - self.params["mean"]) @ self.params["components"]
        with torch.no_grad():
            return self.model().encode(torch.from_numpy(data)).numpy()

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_model"] = None
        return state


def _calibration(outputs: np.ndarray, widen: bool) -> Tuple[np.ndarray, np.ndarray]:
    lo = outputs.min(axis=0)
    hi = outputs.max(axis=0)
    flat = ~(hi > lo)
    if flat.any():
        if not widen:
            raise ProjectionError("degenerate training set")
        logging.warning(f"[Projection] Constant calibration on axis {np.flatnonzero(flat).tolist()}, widened to unit range")
        hi = np.where(flat, lo + 1.0, hi)
    return lo, hi


# ---------- fitting ----------

def fit_pca(training, generation: int = 0) -> Projector:
    x = np.atleast_2d(np.asarray(training, dtype=np.float64))
    if x.shape[0] < 3:
        raise ProjectionError(f"PCA needs at least 3 training vectors, got {x.shape[0]}")
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    if eigvals[0] <= 0 or eigvals[1] <= RANK_TOLERANCE * eigvals[0]:
        raise ProjectionError("degenerate training set")
    components = eigvecs[:, :2].copy()
    for j in range(2):
        if components[np.argmax(np.abs(components[:, j])), j] < 0:
            components[:, j] = -components[:, j]
    params = {"mean": mean, "components": components,
              "explained_variance": eigvals[:2].copy()}
    lo, hi = _calibration(centred @ components, widen=False)
    return Projector("pca", params, lo, hi, generation)


def fit_autoencoder(training, prior: Optional[Projector] = None, epochs: Optional[int] = None,
                    lr: float = 1e-3, batch_size: int = 32, seed: int = 0,
                    generation: int = 0) -> Projector:
    x = np.atleast_2d(np.asarray(training, dtype=np.float64))
    if x.shape[0] < 8:
        raise ProjectionError(f"autoencoder needs at least 8 training vectors, got {x.shape[0]}")
    if prior is not None and prior.kind != "autoencoder":
        raise ProjectionError(f"cannot fine-tune from a '{prior.kind}' projector")
    if epochs is None:
        epochs = 50 if prior is not None else 200
    model, report = train_autoencoder(x, epochs, lr, batch_size, seed,
                                      prior.model() if prior is not None else None)
    with torch.no_grad():
        codes = model.encode(torch.from_numpy(x)).numpy()
    lo, hi = _calibration(codes, widen=True)
    params = {
        "input_dim": x.shape[1],
        "state": state_to_lists(model),
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
    }
    return Projector("autoencoder", params, lo, hi, generation, _model=model)


def manual_projector(fx: str, fy: str, calibration, generation: int = 0) -> Projector:
    """
    Reads two named spectral descriptors; `calibration` is an (n, 10)
    spectral table (e.g. the reference corpus) providing per-axis min/max.
    """
    for name in (fx, fy):
        if name not in SPECTRAL_NAMES:
            raise ProjectionError(f"unknown spectral feature '{name}' (known: {', '.join(SPECTRAL_NAMES)})")
    table = np.atleast_2d(np.asarray(calibration, dtype=np.float64))
    cols = [SPECTRAL_NAMES.index(fx), SPECTRAL_NAMES.index(fy)]
    lo, hi = _calibration(table[:, cols], widen=True)
    return Projector("manual", {"features": [fx, fy]}, lo, hi, generation)


# ---------- projecting ----------

def project_many(p: Projector, data, grid_size: int) -> List[BehaviourCoord]:
    raw = p.raw(data)
    if not np.all(np.isfinite(raw)):
        raise ProjectionError("projection produced non-finite coordinates")
    scaled = (raw - p.lo) / (p.hi - p.lo)
    clamped = np.any((scaled < 0.0) | (scaled > 1.0), axis=1)
    scaled = np.clip(scaled, 0.0, 1.0)
    out = []
    for (x, y), c in zip(scaled, clamped):
        row, col = cell_of(x, y, grid_size)
        out.append(BehaviourCoord(float(x), float(y), row, col, bool(c)))
    return out


def project(p: Projector, v, grid_size: int = 100) -> BehaviourCoord:
    """v is a 96-dim vector, or a SpectralFeatureSet / 10-value array for manual projectors."""
    if hasattr(v, "as_array"):
        v = v.as_array()
    return project_many(p, v, grid_size)[0]


# ---------- retraining schedule ----------

@dataclass
class RetrainSchedule:
    """Event k fires at generation (increment / 2) * k * (k + 1): 50, 150, 300, 500, 750, ..."""

    increment: int = 50
    n: int = 1

    def event_generation(self, k: int) -> int:
        return (self.increment // 2) * k * (k + 1)

    def advance(self) -> int:
        self.n += 1
        return self.n

    def events_until(self, generation: int) -> List[int]:
        out, k = [], 1
        while self.event_generation(k) <= generation:
            out.append(self.event_generation(k))
            k += 1
        return out


def next_retrain_generation(sched: RetrainSchedule) -> int:
    if sched.n < 1:
        raise ProjectionError("retrain event index starts at 1")
    return sched.event_generation(sched.n)


# ---------- checkpoint files ----------

def projector_to_dict(p: Projector) -> dict:
    params = {}
    for k, v in p.params.items():
        params[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return {"kind": p.kind, "parameters": params, "calibration": {"min": p.lo.tolist(), "max": p.hi.tolist()},
            "generation": p.generation}


def projector_from_dict(payload: dict) -> Projector:
    kind = payload["kind"]
    params = dict(payload["parameters"])
    if kind == "pca":
        for key in ("mean", "components", "explained_variance"):
            params[key] = np.asarray(params[key], dtype=np.float64)
    return Projector(kind, params, payload["calibration"]["min"], payload["calibration"]["max"],
                     int(payload.get("generation", 0)))
