import json
import math

import numpy as np
import pytest

from ddplab.sim import (
    Box,
    CycleConfig,
    Cylinder,
    RunResult,
    World,
    execute,
    load_scenario,
    local_costmap,
    project_goal,
    shift_controls,
    world_from_dict,
    write_run_result,
)
from ddplab.subgoal import OracleProvider


def straight_world(length=10.0, obstacles=()):
    return World(tuple(obstacles), ((0.0, 0.0), (length, 0.0)))


class TestWorld:
    def test_course_length(self):
        w = World((), ((0.0, 0.0), (3.0, 4.0), (3.0, 10.0)))
        assert w.course_length() == pytest.approx(11.0)

    def test_reversed(self):
        w = straight_world()
        assert w.reversed().waypoints == ((10.0, 0.0), (0.0, 0.0))

    def test_needs_two_waypoints(self):
        with pytest.raises(ValueError):
            World((), ((0.0, 0.0),))

    def test_collision_queries(self):
        w = straight_world(obstacles=[Cylinder(5.0, 0.0, 1.0), Box(8.0, 2.0, 2.0, 2.0)])
        assert w.collides(5.5, 0.0)
        assert not w.collides(5.0, 1.5)
        assert w.collides(8.9, 2.9)
        assert not w.collides(8.0, 3.1)

    def test_rotated_box(self):
        b = Box(0.0, 0.0, 4.0, 1.0, yaw=math.pi / 2)
        assert b.contains(0.0, 1.8)
        assert not b.contains(1.8, 0.0)


class TestCycleConfig:
    def test_commit_latency_is_three_ticks(self):
        # 4 epochs x 75 ms = 0.3 s of simulated optimization, which the
        # 10 Hz executor covers in 3 ticks
        cfg = CycleConfig()
        assert cfg.epochs_per_cycle * cfg.epoch_budget_s == pytest.approx(0.3)
        assert cfg.commit_ticks == 3

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError):
            CycleConfig(subgoal_mode="pairs")


class TestLocalCostmap:
    def test_free_world_uniform(self):
        cfg = CycleConfig()
        cmap, dfield = local_costmap(straight_world(), (2.0, 1.0, 0.3), cfg)
        assert (cmap.cost == 0.0).all()
        assert (dfield.dist > 10.0).all()

    def test_robot_at_center_cell_midpoint(self):
        cfg = CycleConfig()
        pose = (3.7, -1.2, 0.0)
        cmap, _ = local_costmap(straight_world(), pose, cfg)
        from ddplab.grid import cell_to_world, world_to_cell

        c = world_to_cell(cmap, pose[:2])
        assert c == (100, 100)
        assert cell_to_world(cmap, c) == pytest.approx(pose[:2])

    def test_cylinder_rasterized_area(self):
        cfg = CycleConfig()
        w = straight_world(obstacles=[Cylinder(5.0, 0.0, 0.5)])
        cmap, _ = local_costmap(w, (5.0, 0.0, 0.0), cfg)
        lethal = (cmap.cost >= 1.0).sum()
        expect = math.pi * 0.5**2 / cfg.resolution**2
        assert lethal == pytest.approx(expect, rel=0.05)

    def test_inflation_band(self):
        cfg = CycleConfig()
        w = straight_world(obstacles=[Cylinder(5.0, 0.0, 0.5)])
        cmap, dfield = local_costmap(w, (5.0, 0.0, 0.0), cfg)
        band = (cmap.cost > 0.0) & (cmap.cost < 1.0)
        assert band.any()
        assert (dfield.dist[band] < cfg.inflation_radius_m).all()

    def test_translation_equivariance(self):
        cfg = CycleConfig()
        shift = (11.0, -4.0)
        w0 = straight_world(obstacles=[Cylinder(5.0, 1.0, 0.8), Box(3.0, -1.0, 2.0, 1.0)])
        w1 = World(
            (
                Cylinder(5.0 + shift[0], 1.0 + shift[1], 0.8),
                Box(3.0 + shift[0], -1.0 + shift[1], 2.0, 1.0),
            ),
            ((shift[0], shift[1]), (10.0 + shift[0], shift[1])),
        )
        c0, _ = local_costmap(w0, (4.0, 0.0, 0.0), cfg)
        c1, _ = local_costmap(w1, (4.0 + shift[0], shift[1], 0.0), cfg)
        # rounding of the shifted origin may flip cells that sit exactly
        # on an obstacle boundary, but nothing beyond that
        lethal_flips = ((c0.cost >= 1.0) != (c1.cost >= 1.0)).sum()
        assert lethal_flips <= 4
        changed = (np.abs(c0.cost - c1.cost) > 1.0 / 255.0).mean()
        assert changed < 0.01

    def test_far_obstacles_skipped(self):
        cfg = CycleConfig()
        w = straight_world(obstacles=[Cylinder(500.0, 0.0, 1.0)])
        cmap, _ = local_costmap(w, (0.0, 0.0, 0.0), cfg)
        assert (cmap.cost == 0.0).all()


class TestProjectGoal:
    def test_in_map_waypoint_returned_verbatim(self):
        cfg = CycleConfig()
        w = straight_world(4.0)
        cmap, _ = local_costmap(w, (1.0, 0.0, 0.0), cfg)
        assert project_goal(w, (1.0, 0.0, 0.0), cmap, 1) == (4.0, 0.0)

    def test_far_waypoint_projected_to_border(self):
        cfg = CycleConfig()
        w = straight_world(100.0)
        pose = (20.0, 0.0, 0.0)
        cmap, _ = local_costmap(w, pose, cfg)
        gx, gy = project_goal(w, pose, cmap, 1)
        assert gx == pytest.approx(cmap.extent[2])
        assert gy == pytest.approx(0.0)

    def test_projection_follows_segment_line(self):
        # course turns a corner well outside the map: the goal sits where
        # the current leg's line exits the window, not on the robot ray
        cfg = CycleConfig()
        w = World((), ((0.0, 0.0), (100.0, 0.0), (100.0, 50.0)))
        pose = (50.0, 2.0, 0.0)  # off the leg line
        cmap, _ = local_costmap(w, pose, cfg)
        gx, gy = project_goal(w, pose, cmap, 1)
        assert gy == pytest.approx(0.0)  # on the leg, not on the robot ray
        assert gx == pytest.approx(cmap.extent[2])

    def test_exhausted_waypoints_rejected(self):
        cfg = CycleConfig()
        w = straight_world()
        cmap, _ = local_costmap(w, (0.0, 0.0, 0.0), cfg)
        with pytest.raises(ValueError):
            project_goal(w, (0.0, 0.0, 0.0), cmap, 2)


class TestShiftControls:
    def test_zero_shift_is_copy(self):
        u = np.arange(10.0).reshape(5, 2)
        out = shift_controls(u, 0)
        assert np.array_equal(out, u)
        assert out is not u

    def test_shift_repeats_tail(self):
        u = np.arange(10.0).reshape(5, 2)
        out = shift_controls(u, 2)
        assert np.array_equal(out[:3], u[2:])
        assert np.array_equal(out[3], u[-1])
        assert np.array_equal(out[4], u[-1])

    def test_overlong_shift_saturates(self):
        u = np.arange(10.0).reshape(5, 2)
        out = shift_controls(u, 99)
        assert np.array_equal(out, np.tile(u[-1], (5, 1)))


def u_pocket_obstacles(wall_x=7.0):
    """Three 2 m cubes forming a wall with two arms opening backward."""
    return (
        Box(wall_x, -2.0, 2.0, 2.0),
        Box(wall_x, 0.0, 2.0, 2.0),
        Box(wall_x, 2.0, 2.0, 2.0),
        Box(wall_x - 2.0, 2.5, 2.0, 2.0),
        Box(wall_x - 2.0, -2.5, 2.0, 2.0),
    )


class TestExecute:
    def test_free_course_completes_both_modes(self):
        # 10 m straight line at <= 1.5 m/s with a 1.0 m arrival radius:
        # at least 6 s of driving, under 9 s with optimizer latency
        w = straight_world(10.0)
        for mode, provider in (("ddp", None), ("ddpen", OracleProvider())):
            res = execute(w, mode, CycleConfig(), seed=0, provider=provider)
            assert res.completed, (mode, res.failure)
            assert 6.0 <= res.elapsed_s <= 9.0
            assert res.failure == "none"

    def test_deterministic_given_seed(self):
        w = straight_world(10.0)
        a = execute(w, "ddp", CycleConfig(), seed=7)
        b = execute(w, "ddp", CycleConfig(), seed=7)
        assert a.path == b.path
        assert a.elapsed_s == b.elapsed_s

    def test_seed_changes_initial_pose(self):
        w = straight_world(10.0)
        a = execute(w, "ddp", CycleConfig(), seed=1)
        b = execute(w, "ddp", CycleConfig(), seed=2)
        assert a.path[0] != b.path[0]

    def test_pocket_stalls_vanilla(self):
        w = World(u_pocket_obstacles(), ((0.0, 0.0), (14.0, 0.0)))
        res = execute(w, "ddp", CycleConfig(max_sim_time_s=240.0), seed=0)
        assert not res.completed
        assert res.failure == "stall-local-minimum"
        # it stalled at the pocket, not at the start
        xs = [p[1] for p in res.path]
        assert 3.0 < max(xs) < 7.0

    def test_pocket_escaped_with_subgoals(self):
        w = World(u_pocket_obstacles(), ((0.0, 0.0), (14.0, 0.0)))
        res = execute(
            w,
            "ddpen",
            CycleConfig(max_sim_time_s=240.0),
            seed=0,
            provider=OracleProvider(),
        )
        assert res.completed, res.failure
        assert res.failure == "none"

    def test_requires_provider_for_ddpen(self):
        with pytest.raises(ValueError):
            execute(straight_world(), "ddpen", CycleConfig(), seed=0)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            execute(straight_world(), "mpc", CycleConfig(), seed=0)


class TestRunResult:
    def test_completed_with_failure_rejected(self):
        with pytest.raises(ValueError):
            RunResult(True, 1.0, [], "collision", {})

    def test_write_run_result(self, tmp_path):
        res = RunResult(
            True, 8.4, [(0.0, 0.0, 0.0, 0.0), (0.1, 0.15, 0.0, 0.0)], "none", {"seed": 3}
        )
        write_run_result(res, tmp_path, stem="demo")
        payload = json.loads((tmp_path / "demo.json").read_text())
        assert payload["completed"] is True
        assert payload["elapsed_s"] == 8.4
        lines = (tmp_path / "demo_path.csv").read_text().splitlines()
        assert lines[0] == "t,x,y,heading"
        assert len(lines) == 3


class TestScenarioIO:
    def test_world_from_dict(self):
        spec = {
            "waypoints": [[0, 0], [5, 0]],
            "obstacles": [
                {"type": "cylinder", "pose": [2.0, 0.5], "size": 1.0},
                {"type": "box", "pose": [4.0, -1.0, 0.5], "size": [2.0, 1.0]},
                {"type": "box", "pose": [1.0, 1.0], "size": 2.0},
            ],
        }
        world, overrides = world_from_dict(spec)
        assert len(world.obstacles) == 3
        assert isinstance(world.obstacles[0], Cylinder)
        box = world.obstacles[1]
        assert (box.size_x, box.size_y, box.yaw) == (2.0, 1.0, 0.5)
        assert world.obstacles[2].size_x == 2.0
        assert overrides == {}

    def test_unknown_obstacle_type(self):
        with pytest.raises(ValueError):
            world_from_dict(
                {"waypoints": [[0, 0], [1, 0]], "obstacles": [{"type": "sphere"}]}
            )

    def test_load_scenario_with_overrides(self, tmp_path):
        spec = {
            "name": "demo",
            "waypoints": [[0, 0], [5, 0]],
            "obstacles": [],
            "cycle": {"stall_timeout_s": 30.0, "cost": {"w_subgoal": 2.0}},
        }
        path = tmp_path / "demo.json"
        path.write_text(json.dumps(spec))
        world, cfg, name = load_scenario(path)
        assert name == "demo"
        assert cfg.stall_timeout_s == 30.0
        assert cfg.cost.w_subgoal == 2.0
        assert world.course_length() == pytest.approx(5.0)
