import math

import numpy as np
import pytest

from conftest import make_map
from oracles import dijkstra_cost

from ddplab.astar import (
    DatasetStats,
    PlanningError,
    border_ring_cells,
    extract_subgoals,
    generate_dataset,
    octile,
    plan,
    read_dataset,
    write_dataset,
)
from ddplab.grid import LETHAL, MapGenParams, cell_to_world


class TestOctile:
    def test_axis_aligned(self):
        assert octile((0, 0), (5, 0)) == 5.0

    def test_pure_diagonal(self):
        assert octile((0, 0), (4, 4)) == pytest.approx(4 * math.sqrt(2))

    def test_mixed(self):
        assert octile((0, 0), (3, 1)) == pytest.approx(3 + (math.sqrt(2) - 1))


class TestPlan:
    def test_start_equals_goal(self):
        m = make_map(np.zeros((10, 10)))
        path = plan(m, (3, 3), (3, 3))
        assert path.cells == ((3, 3),)
        assert path.cost == 0.0

    def test_free_space_straight_line(self):
        m = make_map(np.zeros((200, 200)))
        path = plan(m, (100, 100), (100, 150))
        assert len(path) == 51
        assert path.cells[0] == (100, 100)
        assert path.cells[-1] == (100, 150)
        assert path.cost == pytest.approx(50.0)

    def test_admissibility_guard_w_cost_zero(self):
        # on an empty map with w_cost=0 the path cost equals octile distance
        m = make_map(np.zeros((64, 64)))
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = tuple(int(v) for v in rng.integers(0, 64, 2))
            b = tuple(int(v) for v in rng.integers(0, 64, 2))
            path = plan(m, a, b, w_cost=0.0)
            assert path.cost == pytest.approx(octile(a, b))

    def test_path_cells_connected_and_free(self):
        rng = np.random.default_rng(8)
        cost = (rng.random((40, 40)) < 0.2).astype(float)
        cost[5, 5] = cost[35, 30] = 0.0
        m = make_map(cost)
        path = plan(m, (5, 5), (30, 35))
        if path is None:
            pytest.skip("instance happened to be unreachable")
        for (ax, ay), (bx, by) in zip(path.cells, path.cells[1:]):
            assert max(abs(ax - bx), abs(ay - by)) == 1
        for cx, cy in path.cells:
            assert m.cost[cy, cx] < LETHAL

    def test_lethal_start_raises(self):
        cost = np.zeros((10, 10))
        cost[2, 2] = 1.0
        m = make_map(cost)
        with pytest.raises(PlanningError):
            plan(m, (2, 2), (5, 5))

    def test_out_of_bounds_goal_raises(self):
        m = make_map(np.zeros((10, 10)))
        with pytest.raises(PlanningError):
            plan(m, (0, 0), (10, 3))

    def test_unreachable_returns_none(self):
        cost = np.zeros((11, 11))
        cost[5, :] = 1.0  # full horizontal wall
        m = make_map(cost)
        assert plan(m, (5, 2), (5, 8)) is None

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_dijkstra(self, seed):
        rng = np.random.default_rng(seed)
        size = int(rng.integers(10, 65))
        cost = rng.random((size, size))
        cost[cost > 0.75] = 1.0  # ~25% lethal
        cost[cost < 0.5] = 0.0
        free_y, free_x = np.nonzero(cost < LETHAL)
        if free_x.size < 2:
            pytest.skip("degenerate map")
        i, j = rng.choice(free_x.size, size=2, replace=False)
        start = (int(free_x[i]), int(free_y[i]))
        goal = (int(free_x[j]), int(free_y[j]))
        m = make_map(cost)
        path = plan(m, start, goal)
        expected = dijkstra_cost(m, start, goal, w_cost=4.0)
        if expected is None:
            assert path is None
        else:
            assert path is not None
            assert path.cost == pytest.approx(expected, abs=1e-9)


class TestExtractSubgoals:
    def test_long_path_picks_exact_steps(self):
        m = make_map(np.zeros((200, 200)))
        path = plan(m, (100, 100), (100, 199))
        sg = extract_subgoals(path, m)
        assert sg.steps == (30, 50, 70)
        for pos, step in zip(sg.positions, sg.steps):
            assert pos == cell_to_world(m, path.cells[step])

    def test_short_path_clamps_to_end(self):
        m = make_map(np.zeros((50, 50)))
        path = plan(m, (10, 10), (10, 19))  # 10 cells
        sg = extract_subgoals(path, m)
        end = cell_to_world(m, path.cells[-1])
        assert sg.positions == (end, end, end)

    def test_straight_line_metric_distances(self):
        # 0.05 m cells: steps 30/50/70 are 1.5/2.5/3.5 m along the line
        m = make_map(np.zeros((200, 200)))
        path = plan(m, (100, 100), (100, 190))
        sg = extract_subgoals(path, m)
        start = cell_to_world(m, (100, 100))
        dists = [p[1] - start[1] for p in sg.positions]
        assert dists == pytest.approx([1.5, 2.5, 3.5])

    def test_empty_path_rejected(self):
        from ddplab.astar import GridPath

        m = make_map(np.zeros((10, 10)))
        with pytest.raises(ValueError):
            extract_subgoals(GridPath((), 0.0), m)


class TestBorderRing:
    def test_ring_size(self):
        m = make_map(np.zeros((10, 10)))
        ring = border_ring_cells(m)
        assert len(ring) == 10 * 10 - 6 * 6

    def test_ring_membership(self):
        m = make_map(np.zeros((8, 8)))
        for ix, iy in border_ring_cells(m):
            assert ix < 2 or iy < 2 or ix >= 6 or iy >= 6


class TestGenerateDataset:
    def test_free_map_straight_paths(self):
        gen = MapGenParams(obstacle_count=(0, 0))
        records = list(generate_dataset(1, gen, goals_per_map=4, seed=0))
        assert len(records) == 4
        for rec in records:
            center = cell_to_world(rec.costmap, (100, 100))
            ray = np.array(rec.goal) - np.array(center)
            for pos, dist in zip(rec.subgoals.positions, (1.5, 2.5, 3.5)):
                # each of the path's steps covers between 1 and sqrt(2)
                # cells, so step k lands between k and k*sqrt(2) cells out,
                # heading within 45 degrees of the goal ray
                v = np.array(pos) - np.array(center)
                r = np.hypot(*v)
                assert dist - 1e-9 <= r <= dist * math.sqrt(2) + 1e-9
                cos = float(v @ ray) / (r * np.hypot(*ray))
                assert cos >= math.cos(math.pi / 4) - 1e-9

    def test_same_seed_identical_streams(self):
        gen = MapGenParams()
        a = list(generate_dataset(3, gen, goals_per_map=2, seed=5))
        b = list(generate_dataset(3, gen, goals_per_map=2, seed=5))
        assert len(a) == len(b)
        for ra, rb in zip(a, b):
            assert ra.goal == rb.goal
            assert ra.subgoals == rb.subgoals
            assert np.array_equal(ra.costmap.cost, rb.costmap.cost)

    def test_subgoals_on_non_lethal_cells(self):
        from ddplab.grid import world_to_cell

        gen = MapGenParams()
        for rec in generate_dataset(10, gen, goals_per_map=4, seed=3):
            for pos in rec.subgoals.positions:
                cell = world_to_cell(rec.costmap, pos)
                assert cell is not None
                assert not rec.costmap.is_lethal(cell)

    def test_goal_on_border_ring(self):
        from ddplab.grid import world_to_cell

        gen = MapGenParams()
        for rec in generate_dataset(5, gen, goals_per_map=3, seed=1):
            cell = world_to_cell(rec.costmap, rec.goal)
            w, h = rec.costmap.width_cells, rec.costmap.height_cells
            assert (
                cell[0] < 2 or cell[1] < 2 or cell[0] >= w - 2 or cell[1] >= h - 2
            )

    def test_stats_accounting(self):
        stats = DatasetStats()
        records = list(
            generate_dataset(4, MapGenParams(), goals_per_map=3, seed=2, stats=stats)
        )
        assert stats.maps_generated == 4
        assert stats.records_emitted == len(records)


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        gen = MapGenParams()
        records = list(generate_dataset(3, gen, goals_per_map=2, seed=7))
        n = write_dataset(records, tmp_path)
        assert n == len(records)
        back = list(read_dataset(tmp_path))
        assert len(back) == len(records)
        for orig, loaded in zip(records, back):
            assert loaded.goal == pytest.approx(orig.goal)
            assert loaded.subgoals.steps == orig.subgoals.steps
            for a, b in zip(loaded.subgoals.positions, orig.subgoals.positions):
                assert a == pytest.approx(b)
            assert np.array_equal(loaded.costmap.cost, orig.costmap.cost)

    def test_layout(self, tmp_path):
        records = list(
            generate_dataset(2, MapGenParams(), goals_per_map=2, seed=11)
        )
        write_dataset(records, tmp_path)
        assert (tmp_path / "records.jsonl").exists()
        pgms = sorted((tmp_path / "maps").glob("*.pgm"))
        assert pgms and all(p.with_suffix(".json").exists() for p in pgms)
