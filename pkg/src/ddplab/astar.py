"""Grid A* planning on costmaps, sub-goal extraction, and the synthetic
dataset generator.

Planning is 8-connected with an octile heuristic. Edge cost is
``step_length * (1 + w_cost * mean(cell cost of the two endpoints))`` in
cell units, so the heuristic stays admissible for any ``w_cost >= 0``.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .grid import (
    LETHAL,
    CostMap,
    MapGenParams,
    cell_to_world,
    generate_random_map,
    load_pgm,
    save_pgm,
)

SQRT2 = math.sqrt(2.0)
DEFAULT_SUBGOAL_STEPS = (30, 50, 70)
DEFAULT_W_COST = 4.0

# (dx, dy, step length in cells)
_NEIGHBORS = (
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, SQRT2),
    (1, -1, SQRT2),
    (-1, 1, SQRT2),
    (-1, -1, SQRT2),
)


class PlanningError(ValueError):
    """Raised when start or goal is out of bounds or lethal."""


@dataclass(frozen=True)
class GridPath:
    """An 8-connected cell path with its accumulated traversal cost."""

    cells: tuple[tuple[int, int], ...]
    cost: float

    def __len__(self) -> int:
        return len(self.cells)


@dataclass(frozen=True)
class SubGoalSet:
    """Sub-goal world positions taken at fixed path step indices.

    Indices past the end of the path clamp to the final cell.
    """

    positions: tuple[tuple[float, float], ...]
    steps: tuple[int, ...]


@dataclass(frozen=True)
class DatasetRecord:
    """One training example: a costmap, a border goal, and its sub-goals."""

    costmap: CostMap
    goal: tuple[float, float]
    subgoals: SubGoalSet


def octile(a: tuple[int, int], b: tuple[int, int]) -> float:
    """Octile distance between two cells, in cell units."""
    dx = abs(a[0] - b[0])
    dy = abs(a[1] - b[1])
    return max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy)


def plan(
    m: CostMap,
    start: tuple[int, int],
    goal: tuple[int, int],
    w_cost: float = DEFAULT_W_COST,
    lethal_threshold: float = LETHAL,
) -> GridPath | None:
    """A* from ``start`` to ``goal``; None when the goal is unreachable.

    Ties on f are broken toward larger g so output is deterministic.
    """
    w, h = m.width_cells, m.height_cells
    for name, cell in (("start", start), ("goal", goal)):
        if not (0 <= cell[0] < w and 0 <= cell[1] < h):
            raise PlanningError(f"{name} cell {cell} out of bounds")
        if m.cost[cell[1], cell[0]] >= lethal_threshold:
            raise PlanningError(f"{name} cell {cell} is lethal")
    if start == goal:
        return GridPath((start,), 0.0)

    cost = m.cost
    free = cost < lethal_threshold
    n = w * h
    g = np.full(n, np.inf)
    came = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=bool)
    s_idx = start[1] * w + start[0]
    goal_idx = goal[1] * w + goal[0]
    g[s_idx] = 0.0
    open_heap: list[tuple[float, float, int]] = [(octile(start, goal), 0.0, s_idx)]
    gx, gy = goal

    while open_heap:
        f, neg_g, idx = heapq.heappop(open_heap)
        if closed[idx]:
            continue
        if -neg_g > g[idx]:
            continue
        closed[idx] = True
        if idx == goal_idx:
            break
        ix = idx % w
        iy = idx // w
        c_here = cost[iy, ix]
        for dx, dy, step in _NEIGHBORS:
            nx, ny = ix + dx, iy + dy
            if nx < 0 or ny < 0 or nx >= w or ny >= h:
                continue
            nidx = ny * w + nx
            if closed[nidx] or not free[ny, nx]:
                continue
            new_g = g[idx] + step * (1.0 + w_cost * 0.5 * (c_here + cost[ny, nx]))
            if new_g < g[nidx]:
                g[nidx] = new_g
                came[nidx] = idx
                ddx = abs(nx - gx)
                ddy = abs(ny - gy)
                hval = max(ddx, ddy) + (SQRT2 - 1.0) * min(ddx, ddy)
                heapq.heappush(open_heap, (new_g + hval, -new_g, nidx))
    else:
        return None
    if not closed[goal_idx]:
        return None

    cells: list[tuple[int, int]] = []
    idx = goal_idx
    while idx != -1:
        cells.append((idx % w, idx // w))
        idx = came[idx]
    cells.reverse()
    return GridPath(tuple(cells), float(g[goal_idx]))


def extract_subgoals(
    path: GridPath,
    m: CostMap,
    steps: Sequence[int] = DEFAULT_SUBGOAL_STEPS,
) -> SubGoalSet:
    """World positions of the path cells at ``steps``, clamped to the end."""
    if len(path) == 0:
        raise ValueError("path is empty")
    positions = tuple(
        cell_to_world(m, path.cells[min(s, len(path) - 1)]) for s in steps
    )
    return SubGoalSet(positions, tuple(steps))


def border_ring_cells(m: CostMap, ring_width: int = 2) -> list[tuple[int, int]]:
    """Cells of the outermost ``ring_width``-cell border ring, row-major."""
    w, h = m.width_cells, m.height_cells
    out = []
    for iy in range(h):
        for ix in range(w):
            if ix < ring_width or iy < ring_width or ix >= w - ring_width or iy >= h - ring_width:
                out.append((ix, iy))
    return out


@dataclass
class DatasetStats:
    maps_generated: int = 0
    records_emitted: int = 0
    goals_discarded: int = 0
    maps_skipped: int = 0


def generate_dataset(
    n_maps: int,
    gen: MapGenParams,
    goals_per_map: int = 4,
    seed: int = 0,
    subgoal_steps: Sequence[int] = DEFAULT_SUBGOAL_STEPS,
    w_cost: float = DEFAULT_W_COST,
    stats: DatasetStats | None = None,
) -> Iterator[DatasetRecord]:
    """Stream dataset records: random maps with A* sub-goals to border goals.

    Paths always start at the map center. Unreachable goals are
    discarded; a map with no reachable border goal is skipped (counted in
    ``stats``). Deterministic per ``seed``.
    """
    if n_maps < 1:
        raise ValueError("n_maps must be >= 1")
    if stats is None:
        stats = DatasetStats()
    for i in range(n_maps):
        map_seed = int(np.random.SeedSequence((seed, i)).generate_state(1)[0])
        m = generate_random_map(replace(gen, seed=map_seed))
        stats.maps_generated += 1
        rng = np.random.default_rng(np.random.SeedSequence((seed, i, 1)))
        ring = border_ring_cells(m)
        free_ring = [c for c in ring if m.cost[c[1], c[0]] < LETHAL]
        start = (m.width_cells // 2, m.height_cells // 2)
        emitted = 0
        attempts = 0
        while emitted < goals_per_map and attempts < goals_per_map * 10 and free_ring:
            attempts += 1
            goal = free_ring[int(rng.integers(len(free_ring)))]
            path = plan(m, start, goal, w_cost=w_cost)
            if path is None:
                stats.goals_discarded += 1
                continue
            yield DatasetRecord(
                costmap=m,
                goal=cell_to_world(m, goal),
                subgoals=extract_subgoals(path, m, subgoal_steps),
            )
            emitted += 1
            stats.records_emitted += 1
        if emitted == 0:
            stats.maps_skipped += 1


def write_dataset(records: Iterable[DatasetRecord], out_dir: str | Path) -> int:
    """Write records as maps/NNNNNN.pgm(+.json) and records.jsonl.

    Identical maps shared by consecutive records are stored once.
    Returns the number of records written.
    """
    out_dir = Path(out_dir)
    maps_dir = out_dir / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)
    n_written = 0
    map_index = -1
    last_map: CostMap | None = None
    with (out_dir / "records.jsonl").open("w") as fh:
        for rec in records:
            if last_map is not rec.costmap:
                map_index += 1
                save_pgm(rec.costmap, maps_dir / f"{map_index:06d}.pgm")
                last_map = rec.costmap
            line = {
                "map": f"maps/{map_index:06d}.pgm",
                "goal": [rec.goal[0], rec.goal[1]],
                "subgoals": [[p[0], p[1]] for p in rec.subgoals.positions],
                "steps": list(rec.subgoals.steps),
            }
            fh.write(json.dumps(line) + "\n")
            n_written += 1
    return n_written


def read_dataset(dataset_dir: str | Path) -> Iterator[DatasetRecord]:
    """Stream records back from a directory written by :func:`write_dataset`."""
    dataset_dir = Path(dataset_dir)
    cache_path: str | None = None
    cache_map: CostMap | None = None
    with (dataset_dir / "records.jsonl").open() as fh:
        for raw in fh:
            line = json.loads(raw)
            if line["map"] != cache_path:
                cache_map = load_pgm(dataset_dir / line["map"])
                cache_path = line["map"]
            assert cache_map is not None
            yield DatasetRecord(
                costmap=cache_map,
                goal=tuple(line["goal"]),
                subgoals=SubGoalSet(
                    tuple(tuple(p) for p in line["subgoals"]),
                    tuple(line["steps"]),
                ),
            )
