# core/archive.py
"""
MAP-Elites grid: one elite per cell, novelty protection, remapping after a
projector is retrained, and an event log that replays to the grid state.
"""
import csv
import logging
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from core.event_bus import ArchiveEvent, EventBus
from core.genome import Genome
from core.projection import BehaviourCoord, Projector, project_many
from utils.errors import ArchiveError

Cell = Tuple[int, int]

PLACED_NEW = "placed_new"
REPLACED = "replaced"
REJECTED = "rejected"
REMAP_BEGIN = "remap_begin"
REMAP_PLACE = "remap_place"
REMAP_MOVE = "remap_move"
DISPLACED = "displaced"

STATE_EVENTS = (PLACED_NEW, REPLACED, REMAP_PLACE, REMAP_MOVE)

SNAPSHOT_HEADER = ("row", "col", "fitness", "genome_id", "generation")
LINEAGE_HEADER = ("genome_id", "parent_id", "generation", "row", "col", "fitness", "origin")


@dataclass(frozen=True)
class Elite:
    genome: Optional[Genome]
    genome_id: str
    fitness: float
    features: np.ndarray                 # normalised 96-dim vector
    coord: BehaviourCoord
    generation: int = 0
    parent_cell: Optional[Cell] = None
    protection_until: int = 0
    spectral: Optional[np.ndarray] = None
    parent_id: Optional[str] = None
    origin: str = "mutation"             # seed | mutation

    @property
    def cell(self) -> Cell:
        return self.coord.cell


class Archive:
    def __init__(self, grid_size: int = 100, bus: Optional[EventBus] = None,
                 protection_generations: int = 10, protection_factor: float = 1.1):
        self.grid_size = grid_size
        self.bus = bus or EventBus()
        self.protection_generations = protection_generations
        self.protection_factor = protection_factor
        self.cells: Dict[Cell, Elite] = {}
        self.events: List[ArchiveEvent] = []
        self._seq = 0

    # ---------- views ----------
    def __len__(self):
        return len(self.cells)

    def occupied_cells(self) -> List[Cell]:
        return sorted(self.cells)

    def elites(self) -> List[Elite]:
        return [self.cells[c] for c in self.occupied_cells()]

    def coverage(self) -> float:
        return len(self.cells) / float(self.grid_size ** 2)

    def grid_mean_fitness(self) -> float:
        return float(np.mean([e.fitness for e in self.cells.values()])) if self.cells else 0.0

    def qd_score(self) -> float:
        return float(sum(e.fitness for e in self.cells.values()))

    def fitness_grid(self) -> np.ndarray:
        grid = np.full((self.grid_size, self.grid_size), np.nan)
        for (r, c), e in self.cells.items():
            grid[r, c] = e.fitness
        return grid

    # ---------- events ----------
    def _emit(self, category: str, generation: int, **data) -> ArchiveEvent:
        self._seq += 1
        event = ArchiveEvent(self._seq, category, generation, data)
        self.events.append(event)
        self.bus.emit(event)
        return event

    @staticmethod
    def _record(e: Elite) -> dict:
        return {
            "genome_id": e.genome_id,
            "parent_id": e.parent_id,
            "fitness": float(e.fitness),
            "placed_generation": int(e.generation),
            "protection_until": int(e.protection_until),
            "row": e.cell[0],
            "col": e.cell[1],
            "x": float(e.coord.x),
            "y": float(e.coord.y),
        }

    # ---------- placement ----------
    def is_protected(self, occupant: Elite, current_gen: int) -> bool:
        return current_gen < occupant.protection_until

    def _beats(self, candidate: Elite, occupant: Elite, current_gen: int) -> bool:
        if self.is_protected(occupant, current_gen):
            return (candidate.fitness >= self.protection_factor * occupant.fitness
                    and candidate.fitness > occupant.fitness)
        return candidate.fitness > occupant.fitness

    def try_place(self, candidate: Elite, current_gen: int) -> str:
        row, col = candidate.cell
        if not (0 <= row < self.grid_size and 0 <= col < self.grid_size):
            raise ArchiveError(f"cell {candidate.cell} outside a {self.grid_size}x{self.grid_size} grid")
        occupant = self.cells.get(candidate.cell)
        if occupant is not None and not self._beats(candidate, occupant, current_gen):
            return REJECTED

        placed = replace(candidate, generation=current_gen,
                         protection_until=current_gen + self.protection_generations)
        self.cells[candidate.cell] = placed
        category = PLACED_NEW if occupant is None else REPLACED
        extra = {"previous_genome_id": occupant.genome_id} if occupant is not None else {}
        parent_cell = list(placed.parent_cell) if placed.parent_cell is not None else None
        self._emit(category, current_gen, origin=placed.origin, parent_cell=parent_cell,
                   **self._record(placed), **extra)
        return category

    # ---------- remapping ----------
    def remap(self, p_new: Projector, current_gen: int) -> List[Elite]:
        """
        Re-project every elite through `p_new`. Elites are reinserted in
        descending fitness order (ties by genome id); survivors are stamped
        with a fresh protection period. Returns the displaced elites.
        """
        ordered = sorted(self.cells.values(), key=lambda e: (-e.fitness, e.genome_id))
        self._emit(REMAP_BEGIN, current_gen, count=len(ordered), projector=p_new.kind)
        if not ordered:
            return []
        if p_new.uses_spectral:
            if any(e.spectral is None for e in ordered):
                raise ArchiveError("manual remap needs spectral descriptors for every elite")
            data = np.array([e.spectral for e in ordered])
        else:
            data = np.array([e.features for e in ordered])
        coords = project_many(p_new, data, self.grid_size)

        self.cells = {}
        displaced = []
        for elite, coord in zip(ordered, coords):
            moved = replace(elite, coord=coord, protection_until=current_gen + self.protection_generations)
            occupant = self.cells.get(coord.cell)
            # earlier entries are at least as fit; the first to claim a cell keeps it
            if occupant is not None:
                displaced.append(elite)
                self._emit(DISPLACED, current_gen, genome_id=elite.genome_id, fitness=float(elite.fitness),
                           row=coord.row, col=coord.col, winner=occupant.genome_id,
                           from_cell=list(elite.cell))
                continue
            self.cells[coord.cell] = moved
            category = REMAP_PLACE if coord.cell == elite.cell else REMAP_MOVE
            self._emit(category, current_gen, from_cell=list(elite.cell), **self._record(moved))

        logging.info(f"[Archive] Remap at generation {current_gen}: {len(self.cells)} kept, "
                     f"{len(displaced)} displaced")
        return displaced

    # ---------- exports ----------
    def snapshot_rows(self) -> List[tuple]:
        return [(r, c, float(e.fitness), e.genome_id, int(e.generation))
                for (r, c), e in sorted(self.cells.items())]

    def write_snapshot(self, path) -> None:
        write_snapshot_csv(path, self.snapshot_rows())

    def lineage_rows(self) -> List[tuple]:
        """Every elite that ever settled, in settlement order."""
        rows = []
        for ev in self.events:
            if ev.category in (PLACED_NEW, REPLACED):
                d = ev.data
                rows.append((d["genome_id"], d.get("parent_id") or "", ev.generation,
                             d["row"], d["col"], d["fitness"], d.get("origin", "")))
        return rows


def write_snapshot_csv(path, rows: Iterable[tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SNAPSHOT_HEADER)
        for r, c, fit, gid, gen in rows:
            writer.writerow([r, c, repr(float(fit)), gid, gen])


def read_snapshot_csv(path) -> List[tuple]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        next(reader, None)
        return [(int(r), int(c), float(fit), gid, int(gen)) for r, c, fit, gid, gen in reader]


def write_lineage_csv(path, rows: Iterable[tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(LINEAGE_HEADER)
        for row in rows:
            writer.writerow(row)


# ---------- event-log analyses ----------

def replay(events: Iterable[ArchiveEvent]) -> List[tuple]:
    """Rebuild the grid from its event log; returns snapshot rows."""
    cells: Dict[Cell, tuple] = {}
    for ev in events:
        if ev.category == REMAP_BEGIN:
            cells = {}
        elif ev.category in STATE_EVENTS:
            d = ev.data
            cells[(d["row"], d["col"])] = (d["row"], d["col"], float(d["fitness"]),
                                           d["genome_id"], int(d["placed_generation"]))
    return [cells[c] for c in sorted(cells)]


def goal_switch_stats(events: Iterable[ArchiveEvent],
                      occupied: Optional[Iterable[Cell]] = None) -> Dict[Cell, Tuple[int, int]]:
    """
    Per cell: (settlements, settlements whose parent lived in another cell).
    Remap moves are not settlements; seed placements have no parent cell.
    Without `occupied` the result also holds cells emptied by a remap;
    passing the current occupied cells restricts it to those.
    """
    stats: Dict[Cell, List[int]] = {}
    for ev in events:
        if ev.category not in (PLACED_NEW, REPLACED):
            continue
        d = ev.data
        cell = (d["row"], d["col"])
        entry = stats.setdefault(cell, [0, 0])
        entry[0] += 1
        parent = d.get("parent_cell")
        if d.get("origin") == "mutation" and parent is not None and tuple(parent) != cell:
            entry[1] += 1
    keep = None if occupied is None else set(map(tuple, occupied))
    return {cell: (n, cross) for cell, (n, cross) in sorted(stats.items()) if keep is None or cell in keep}


def total_goal_switches(events: Iterable[ArchiveEvent]) -> int:
    return sum(cross for _, cross in goal_switch_stats(events).values())
