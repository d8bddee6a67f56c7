import itertools

import numpy as np
import pytest

from core.archive import (
    DISPLACED,
    PLACED_NEW,
    REJECTED,
    REMAP_BEGIN,
    REPLACED,
    Archive,
    Elite,
    goal_switch_stats,
    read_snapshot_csv,
    replay,
    total_goal_switches,
    write_snapshot_csv,
)
from core.event_bus import ArchiveEvent
from core.features import FEATURE_DIM, SPECTRAL_NAMES
from core.projection import BehaviourCoord, manual_projector, project_many
from utils.errors import ArchiveError

GRID = 10


def _elite(gid, fitness, cell, parent_cell=None, origin="mutation", spectral=None):
    row, col = cell
    coord = BehaviourCoord((row + 0.5) / GRID, (col + 0.5) / GRID, row, col)
    return Elite(None, gid, fitness, np.zeros(FEATURE_DIM), coord, parent_cell=parent_cell,
                 origin=origin, spectral=spectral)


def _spectral(centroid, flatness):
    v = np.zeros(len(SPECTRAL_NAMES))
    v[SPECTRAL_NAMES.index("centroid")] = centroid
    v[SPECTRAL_NAMES.index("flatness")] = flatness
    return v


def _manual():
    table = np.array([_spectral(0.0, 0.0), _spectral(1.0, 1.0)])
    return manual_projector("centroid", "flatness", table)


def _placed_through(projector, gid, fitness, spectral):
    coord = project_many(projector, spectral, GRID)[0]
    return Elite(None, gid, fitness, np.zeros(FEATURE_DIM), coord, spectral=spectral)


# ---------- placement ----------

def test_empty_cell_takes_candidate():
    archive = Archive(GRID)
    assert archive.try_place(_elite("a", 0.3, (1, 2)), current_gen=4) == PLACED_NEW
    placed = archive.cells[(1, 2)]
    assert placed.generation == 4
    assert placed.protection_until == 14
    assert archive.coverage() == pytest.approx(0.01)


def test_strict_improvement_replaces_unprotected_occupant():
    archive = Archive(GRID)
    archive.try_place(_elite("a", 0.5, (0, 0)), current_gen=0)
    assert archive.try_place(_elite("tie", 0.5, (0, 0)), current_gen=20) == REJECTED
    assert archive.try_place(_elite("b", 0.51, (0, 0)), current_gen=20) == REPLACED
    assert archive.cells[(0, 0)].genome_id == "b"


def test_protected_occupant_needs_ten_percent_more():
    archive = Archive(GRID)
    archive.try_place(_elite("a", 0.5, (3, 3)), current_gen=5)
    assert archive.try_place(_elite("b", 0.54, (3, 3)), current_gen=6) == REJECTED
    assert archive.try_place(_elite("c", 0.56, (3, 3)), current_gen=6) == REPLACED
    # protection lapses at generation 16 for "c"
    assert archive.try_place(_elite("d", 0.57, (3, 3)), current_gen=16) == REPLACED


def test_protected_zero_fitness_tie_is_rejected():
    archive = Archive(GRID)
    archive.try_place(_elite("a", 0.0, (0, 1)), current_gen=0)
    assert archive.try_place(_elite("b", 0.0, (0, 1)), current_gen=1) == REJECTED


def test_cell_outside_grid():
    archive = Archive(GRID)
    with pytest.raises(ArchiveError):
        archive.try_place(_elite("a", 0.5, (GRID, 0)), current_gen=0)


def test_placement_events_reach_subscribers():
    archive = Archive(GRID)
    seen = []
    archive.bus.subscribe("*", seen.append)
    archive.try_place(_elite("a", 0.5, (0, 0)), 0)
    archive.try_place(_elite("b", 0.1, (0, 0)), 20)
    assert [e.category for e in seen] == [PLACED_NEW]
    assert seen[0].data["genome_id"] == "a"


# ---------- remapping ----------

def test_identity_remap_only_refreshes_protection():
    p = _manual()
    archive = Archive(GRID)
    rng = np.random.default_rng(0)
    for i in range(15):
        archive.try_place(_placed_through(p, f"g{i:02d}", float(rng.uniform()), _spectral(*rng.uniform(size=2))), 0)
    before = {cell: (e.genome_id, e.fitness, e.generation) for cell, e in archive.cells.items()}
    displaced = archive.remap(p, current_gen=30)
    assert displaced == []
    assert {cell: (e.genome_id, e.fitness, e.generation) for cell, e in archive.cells.items()} == before
    assert all(e.protection_until == 40 for e in archive.cells.values())


def test_collision_keeps_fitter_elite():
    p = _manual()
    archive = Archive(GRID)
    archive.try_place(_elite("strong", 0.9, (0, 0), spectral=_spectral(0.55, 0.55)), 0)
    archive.try_place(_elite("weak", 0.4, (9, 9), spectral=_spectral(0.56, 0.56)), 0)
    displaced = archive.remap(p, current_gen=50)
    assert [e.genome_id for e in displaced] == ["weak"]
    assert archive.cells[(5, 5)].genome_id == "strong"
    assert len(archive) == 1
    assert archive.events[-1].category == DISPLACED
    assert archive.events[-1].data["winner"] == "strong"


def test_three_way_collision_winner_is_order_independent():
    fits = {"x": 0.3, "y": 0.8, "z": 0.6}
    for order in itertools.permutations(fits):
        archive = Archive(GRID)
        for i, gid in enumerate(order):
            archive.try_place(_elite(gid, fits[gid], (i, 0), spectral=_spectral(0.21, 0.71)), 0)
        displaced = archive.remap(_manual(), current_gen=10)
        assert archive.cells[(2, 7)].genome_id == max(fits, key=fits.get)
        assert sorted(e.genome_id for e in displaced) == ["x", "z"]


def test_manual_remap_needs_spectral():
    archive = Archive(GRID)
    archive.try_place(_elite("a", 0.5, (0, 0)), 0)
    with pytest.raises(ArchiveError):
        archive.remap(_manual(), current_gen=1)


# ---------- event log ----------

def test_replay_matches_snapshot():
    p = _manual()
    archive = Archive(GRID)
    rng = np.random.default_rng(1)
    for gen in range(40):
        spectral = _spectral(*rng.uniform(size=2))
        archive.try_place(_placed_through(p, f"g{gen:03d}", float(rng.uniform()), spectral), gen)
        if gen == 20:
            archive.remap(p, gen)
    assert replay(archive.events) == archive.snapshot_rows()
    assert any(e.category == REMAP_BEGIN for e in archive.events)


def test_snapshot_csv_round_trip(tmp_path):
    archive = Archive(GRID)
    archive.try_place(_elite("a", 0.25, (1, 1)), 3)
    archive.try_place(_elite("b", 1 / 3, (2, 5)), 4)
    path = tmp_path / "grid.csv"
    archive.write_snapshot(path)
    assert read_snapshot_csv(path) == archive.snapshot_rows()
    write_snapshot_csv(path, [])
    assert read_snapshot_csv(path) == []


def test_lineage_rows_follow_settlements():
    archive = Archive(GRID)
    archive.try_place(_elite("a", 0.2, (0, 0), origin="seed"), 0)
    archive.try_place(_elite("b", 0.1, (0, 0)), 1)
    archive.try_place(_elite("c", 0.5, (0, 0), parent_cell=(0, 0)), 20)
    assert [r[0] for r in archive.lineage_rows()] == ["a", "c"]


# ---------- goal switches ----------

def test_same_cell_lineage_has_no_goal_switches():
    archive = Archive(GRID)
    archive.try_place(_elite("g0", 0.1, (4, 4), origin="seed"), 0)
    for i in range(1, 6):
        archive.try_place(_elite(f"g{i}", 0.1 + 0.1 * i, (4, 4), parent_cell=(4, 4)), 20 * i)
    assert goal_switch_stats(archive.events) == {(4, 4): (6, 0)}


def test_child_settling_elsewhere_counts_once():
    archive = Archive(GRID)
    archive.try_place(_elite("a", 0.5, (1, 1), origin="seed"), 0)
    archive.try_place(_elite("b", 0.4, (2, 2), parent_cell=(1, 1)), 1)
    stats = goal_switch_stats(archive.events)
    assert stats[(2, 2)] == (1, 1)
    assert stats[(1, 1)] == (1, 0)


def _ev(seq, category, gen, cell, parent=None, origin="mutation"):
    return ArchiveEvent(seq, category, gen, {"row": cell[0], "col": cell[1], "genome_id": f"e{seq}",
                                             "fitness": 0.1 * seq, "placed_generation": gen,
                                             "parent_cell": list(parent) if parent else None,
                                             "origin": origin})


def test_scripted_log_tally():
    events = [
        _ev(1, PLACED_NEW, 0, (0, 0), origin="seed"),
        _ev(2, PLACED_NEW, 0, (1, 1), origin="seed"),
        _ev(3, PLACED_NEW, 1, (2, 2), parent=(0, 0)),     # cross
        _ev(4, REPLACED, 1, (0, 0), parent=(0, 0)),       # same cell
        _ev(5, REJECTED, 2, (1, 1), parent=(0, 0)),       # not a settlement
        _ev(6, REPLACED, 2, (2, 2), parent=(1, 1)),       # cross
        ArchiveEvent(7, REMAP_BEGIN, 3, {"count": 3}),
        _ev(8, "remap_move", 3, (3, 3)),                  # not a settlement
        _ev(9, PLACED_NEW, 4, (1, 2), parent=(3, 3)),     # cross
        _ev(10, REPLACED, 5, (1, 2), parent=(1, 2)),      # same cell
    ]
    assert goal_switch_stats(events) == {(0, 0): (2, 0), (1, 1): (1, 0), (1, 2): (2, 1), (2, 2): (2, 2)}
    assert total_goal_switches(events) == 3


def test_tally_restricted_to_occupied_cells():
    events = [
        _ev(1, PLACED_NEW, 0, (0, 0), origin="seed"),
        _ev(2, PLACED_NEW, 1, (2, 2), parent=(0, 0)),
        ArchiveEvent(3, REMAP_BEGIN, 2, {"count": 2}),
        _ev(4, "remap_move", 2, (0, 0)),                  # (2, 2) emptied, its elite now shares (0, 0)
    ]
    assert set(goal_switch_stats(events)) == {(0, 0), (2, 2)}
    assert goal_switch_stats(events, occupied=[(0, 0)]) == {(0, 0): (1, 0)}
    assert goal_switch_stats(events, occupied=[]) == {}
    # cumulative count keeps every settlement
    assert total_goal_switches(events) == 1
