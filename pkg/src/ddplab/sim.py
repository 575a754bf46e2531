"""Deterministic 2D world with a receding-horizon control loop.

The loop interleaves two roles in simulated time: an optimizer that
re-plans a fixed-horizon trajectory every few epochs (each epoch is
charged a fixed simulated budget, 75 ms by default), and an executor
that consumes the latest committed trajectory at 10 Hz. The optimizer
commit is an atomic whole-trajectory swap, so the loop's observable
behavior would not change if the two roles ran concurrently.

All timing is simulated: runs are bit-deterministic and independent of
wall-clock speed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import distance_transform_edt

from . import ddp
from .ddp import CostParams, OptimizeAbort, OptimizeContext
from .dynamics import DEFAULT_DT, DEFAULT_HORIZON, State, Trajectory, step_array
from .grid import LETHAL, CostMap, DistanceField, quantize
from .subgoal import ProviderError, SubGoalPrediction, SubGoalQuery


@dataclass(frozen=True)
class Cylinder:
    x: float
    y: float
    radius: float

    def contains(self, px: float, py: float) -> bool:
        return (px - self.x) ** 2 + (py - self.y) ** 2 <= self.radius**2


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    size_x: float
    size_y: float
    yaw: float = 0.0

    def contains(self, px: float, py: float) -> bool:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        lx = c * (px - self.x) + s * (py - self.y)
        ly = -s * (px - self.x) + c * (py - self.y)
        return abs(lx) <= self.size_x / 2 and abs(ly) <= self.size_y / 2


Obstacle = Cylinder | Box


@dataclass(frozen=True)
class World:
    obstacles: tuple[Obstacle, ...]
    waypoints: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.waypoints) < 2:
            raise ValueError("need at least two waypoints")
        if len(set(self.waypoints)) != len(self.waypoints):
            raise ValueError("waypoints must be pairwise distinct")
        if self.course_length() <= 0:
            raise ValueError("course length must be > 0")

    def course_length(self) -> float:
        pts = np.asarray(self.waypoints)
        return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))

    def reversed(self) -> "World":
        return World(self.obstacles, tuple(reversed(self.waypoints)))

    def collides(self, px: float, py: float) -> bool:
        return any(o.contains(px, py) for o in self.obstacles)


@dataclass(frozen=True)
class CycleConfig:
    epochs_per_cycle: int = 4
    epoch_budget_s: float = 0.075
    executor_rate_hz: float = 10.0
    horizon: int = DEFAULT_HORIZON
    dt: float = DEFAULT_DT
    arrival_radius_m: float = 1.0
    stall_timeout_s: float = 60.0
    max_sim_time_s: float = 900.0
    map_cells: int = 200
    resolution: float = 0.05
    inflation_radius_m: float = 0.5
    iters_per_epoch: int = 8
    cost: CostParams = field(default_factory=CostParams)
    # "single": one sub-goal prediction used for every step (the nearest,
    # 30-step one by default: it carries the clearest detour direction);
    # "thirds": the three predictions spread over horizon thirds
    subgoal_mode: str = "single"
    subgoal_index: int = 0
    initial_perturbation_m: float = 0.15

    def __post_init__(self) -> None:
        if self.epochs_per_cycle < 1:
            raise ValueError("epochs_per_cycle must be >= 1")
        if self.epoch_budget_s <= 0 or self.executor_rate_hz <= 0:
            raise ValueError("budgets and rates must be positive")
        if self.subgoal_mode not in ("single", "thirds"):
            raise ValueError(f"unknown subgoal_mode {self.subgoal_mode!r}")

    @property
    def commit_ticks(self) -> int:
        """Executor ticks per optimization cycle (simulated latency)."""
        latency = self.epochs_per_cycle * self.epoch_budget_s
        return max(1, round(latency * self.executor_rate_hz))


@dataclass
class RunResult:
    completed: bool
    elapsed_s: float
    path: list[tuple[float, float, float, float]]  # (t, x, y, heading)
    failure: str  # none | stall-local-minimum | collision | divergence
    config: dict
    optimizer_errors: int = 0
    degraded_queries: int = 0

    def __post_init__(self) -> None:
        if self.completed and self.failure != "none":
            raise ValueError("completed runs cannot carry a failure reason")


def local_costmap(
    world: World,
    pose: Sequence[float],
    cfg: CycleConfig,
) -> tuple[CostMap, DistanceField]:
    """Robot-centered costmap plus its distance field in one pass.

    The robot sits exactly at the center cell's midpoint. Obstacles are
    rasterized lethal at cell centers, then inflated linearly.
    """
    cells = cfg.map_cells
    res = cfg.resolution
    half = cells // 2
    ox = pose[0] - (half + 0.5) * res
    oy = pose[1] - (half + 0.5) * res
    xs = ox + (np.arange(cells) + 0.5) * res
    ys = oy + (np.arange(cells) + 0.5) * res
    lethal = np.zeros((cells, cells), dtype=bool)
    xmin, xmax = xs[0], xs[-1]
    ymin, ymax = ys[0], ys[-1]
    for obs in world.obstacles:
        if isinstance(obs, Cylinder):
            reach = obs.radius
            cx, cy = obs.x, obs.y
        else:
            reach = math.hypot(obs.size_x, obs.size_y) / 2
            cx, cy = obs.x, obs.y
        if (
            cx + reach < xmin
            or cx - reach > xmax
            or cy + reach < ymin
            or cy - reach > ymax
        ):
            continue
        i0 = max(int((cx - reach - ox) / res) - 1, 0)
        i1 = min(int((cx + reach - ox) / res) + 2, cells)
        j0 = max(int((cy - reach - oy) / res) - 1, 0)
        j1 = min(int((cy + reach - oy) / res) + 2, cells)
        gx, gy = np.meshgrid(xs[i0:i1], ys[j0:j1])
        if isinstance(obs, Cylinder):
            mask = (gx - cx) ** 2 + (gy - cy) ** 2 <= obs.radius**2
        else:
            c, s = math.cos(obs.yaw), math.sin(obs.yaw)
            lx = c * (gx - cx) + s * (gy - cy)
            ly = -s * (gx - cx) + c * (gy - cy)
            mask = (np.abs(lx) <= obs.size_x / 2) & (np.abs(ly) <= obs.size_y / 2)
        lethal[j0:j1, i0:i1] |= mask

    if lethal.any():
        dist = distance_transform_edt(~lethal) * res
    else:
        dist = np.full((cells, cells), (cells + cells) * res)
    radius = cfg.inflation_radius_m
    if radius > 0 and lethal.any():
        frac = np.clip(dist / radius, 0.0, 1.0)
        cost = quantize(np.where(dist < radius, 1.0 - frac, 0.0))
        cost[lethal] = LETHAL
    else:
        cost = np.where(lethal, LETHAL, 0.0)
    cmap = CostMap(cells, cells, res, (ox, oy), cost)
    dfield = DistanceField(cells, cells, res, (ox, oy), dist)
    return cmap, dfield


def project_goal(
    world: World,
    pose: Sequence[float],
    cmap: CostMap,
    wp_index: int,
) -> tuple[float, float]:
    """Local optimization goal: the next waypoint if it is inside the
    map, else the far intersection of the previous-to-next waypoint line
    with the map border."""
    if wp_index >= len(world.waypoints):
        raise ValueError("no unvisited waypoint")
    nxt = world.waypoints[wp_index]
    xmin, ymin, xmax, ymax = cmap.extent
    if xmin <= nxt[0] <= xmax and ymin <= nxt[1] <= ymax:
        return nxt
    prev = world.waypoints[wp_index - 1] if wp_index > 0 else (pose[0], pose[1])
    dx = nxt[0] - prev[0]
    dy = nxt[1] - prev[1]
    if dx == 0.0 and dy == 0.0:
        # degenerate segment: aim along the ray from the pose through next
        prev = (pose[0], pose[1])
        dx = nxt[0] - prev[0]
        dy = nxt[1] - prev[1]
    hit = _line_box_far_intersection(prev, (dx, dy), cmap.extent)
    if hit is None:
        # segment line misses the local window; fall back to the ray
        # from the robot toward the next waypoint (always intersects)
        prev = (pose[0], pose[1])
        dx = nxt[0] - prev[0]
        dy = nxt[1] - prev[1]
        hit = _line_box_far_intersection(prev, (dx, dy), cmap.extent)
        assert hit is not None
    return hit


def _line_box_far_intersection(
    p: tuple[float, float],
    d: tuple[float, float],
    extent: tuple[float, float, float, float],
) -> tuple[float, float] | None:
    """Liang-Barsky: farthest-along-direction intersection of a line
    with an axis-aligned box, or None when the line misses it."""
    xmin, ymin, xmax, ymax = extent
    t0, t1 = -math.inf, math.inf
    for pi, di, lo, hi in (
        (p[0], d[0], xmin, xmax),
        (p[1], d[1], ymin, ymax),
    ):
        if di == 0.0:
            if pi < lo or pi > hi:
                return None
            continue
        ta = (lo - pi) / di
        tb = (hi - pi) / di
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    if t0 > t1:
        return None
    return (p[0] + t1 * d[0], p[1] + t1 * d[1])


def shift_controls(controls: NDArray[np.float64], k: int) -> NDArray[np.float64]:
    """Warm start: drop the first k controls, repeat the last to refill."""
    if k <= 0:
        return controls.copy()
    n = controls.shape[0]
    k = min(k, n)
    return np.vstack([controls[k:], np.repeat(controls[-1:], k, axis=0)])


@dataclass
class CycleOutcome:
    trajectory: Trajectory
    total_iterations: int
    epochs_run: int
    final_cost: float
    prediction: SubGoalPrediction | None = None
    aborted: bool = False


def run_cycle(
    state: NDArray[np.float64],
    warm_controls: NDArray[np.float64],
    dfield: DistanceField,
    goal: tuple[float, float],
    cfg: CycleConfig,
    prediction: SubGoalPrediction | None = None,
) -> CycleOutcome:
    """One optimization cycle: epochs_per_cycle optimizer epochs from a
    warm-started control sequence. Raises OptimizeAbort upward."""
    params = cfg.cost
    subgoal = None
    schedule = None
    if prediction is not None:
        if cfg.subgoal_mode == "thirds":
            n = cfg.horizon
            schedule = np.empty((n, 2))
            bounds = (n // 3, 2 * n // 3, n)
            start = 0
            for p, end in zip(prediction.positions, bounds):
                schedule[start:end] = p
                start = end
        else:
            subgoal = prediction.positions[cfg.subgoal_index]
    else:
        params = ddp.CostParams(
            **{**_params_dict(params), "w_subgoal": 0.0}
        )
    ctx = OptimizeContext(
        dfield, goal, subgoal=subgoal, params=params, subgoal_schedule=schedule
    )
    controls = warm_controls
    total_iters = 0
    cost = math.nan
    report = None
    for _ in range(cfg.epochs_per_cycle):
        report = ddp.optimize(state, controls, ctx, max_iters=cfg.iters_per_epoch, dt=cfg.dt)
        controls = report.trajectory.controls
        total_iters += report.iterations
        cost = report.costs[-1]
        if report.converged:
            break
    assert report is not None
    return CycleOutcome(
        trajectory=report.trajectory,
        total_iterations=total_iters,
        epochs_run=cfg.epochs_per_cycle,
        final_cost=cost,
        prediction=prediction,
    )


def _params_dict(p: CostParams) -> dict:
    return {
        "w_control": p.w_control,
        "w_goal": p.w_goal,
        "w_obstacle": p.w_obstacle,
        "w_subgoal": p.w_subgoal,
        "obstacle_influence": p.obstacle_influence,
        "control_enabled": p.control_enabled,
        "goal_enabled": p.goal_enabled,
        "obstacle_enabled": p.obstacle_enabled,
        "subgoal_enabled": p.subgoal_enabled,
    }


def _interp_control(traj: Trajectory, time_from_base: float) -> tuple[float, float]:
    """Linear interpolation in control space along the trajectory."""
    n = traj.horizon
    pos = time_from_base / traj.dt
    i = int(pos)
    if i >= n - 1:
        return (float(traj.controls[n - 1, 0]), float(traj.controls[n - 1, 1]))
    frac = pos - i
    u = traj.controls[i] * (1.0 - frac) + traj.controls[i + 1] * frac
    return (float(u[0]), float(u[1]))


def initial_pose(world: World, rng: np.random.Generator, cfg: CycleConfig) -> NDArray[np.float64]:
    """Start at the first waypoint facing the second, with a small seeded
    lateral and heading perturbation (the stand-in for run-to-run
    simulation noise)."""
    p0 = np.asarray(world.waypoints[0], dtype=np.float64)
    p1 = np.asarray(world.waypoints[1], dtype=np.float64)
    heading = math.atan2(p1[1] - p0[1], p1[0] - p0[0])
    lateral = rng.uniform(-cfg.initial_perturbation_m, cfg.initial_perturbation_m)
    dheading = rng.uniform(-0.1, 0.1)
    normal = np.array([-math.sin(heading), math.cos(heading)])
    pos = p0 + lateral * normal
    return np.array([pos[0], pos[1], heading + dheading])


def execute(
    world: World,
    mode: str,
    cfg: CycleConfig,
    seed: int,
    provider=None,
) -> RunResult:
    """Run the full course in simulated time.

    mode "ddp" disables the sub-goal term; mode "ddpen" queries the
    provider once per optimization cycle.
    """
    if mode not in ("ddp", "ddpen"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "ddpen" and provider is None:
        raise ValueError("ddpen mode requires a sub-goal provider")

    rng = np.random.default_rng(seed)
    pose = initial_pose(world, rng, cfg)
    dt = cfg.dt
    commit_ticks = cfg.commit_ticks
    max_ticks = int(round(cfg.max_sim_time_s / dt))
    stall_ticks = int(round(cfg.stall_timeout_s / dt))
    snapshot = {
        "mode": mode,
        "seed": seed,
        "provider": getattr(provider, "name", None),
        "cycle": {
            **{
                k: v
                for k, v in asdict(cfg).items()
                if k != "cost"
            },
            "cost": _params_dict(cfg.cost),
        },
        "course_length_m": world.course_length(),
    }

    result = RunResult(
        completed=False, elapsed_s=0.0, path=[], failure="none", config=snapshot
    )

    wp_index = 1
    last_progress_tick = 0
    # progress = new minimum distance to the next waypoint (5 cm ratchet),
    # so long legs are not mistaken for stalls while a wedged robot
    # jittering in place still trips the timeout
    best_dist = math.inf
    progress_eps = 0.05

    def solve(state: NDArray[np.float64], warm: NDArray[np.float64]) -> CycleOutcome | None:
        nonlocal wp_index
        cmap, dfield = local_costmap(world, state, cfg)
        goal = project_goal(world, state, cmap, wp_index)
        prediction = None
        if mode == "ddpen":
            try:
                prediction = provider(SubGoalQuery(cmap, goal))
            except ProviderError:
                # e.g. the predicted pose clips a lethal cell; keep the
                # last committed trajectory and let the monitors decide
                result.optimizer_errors += 1
                return None
            if prediction.degraded:
                result.degraded_queries += 1
        try:
            return run_cycle(state, warm, dfield, goal, cfg, prediction)
        except OptimizeAbort:
            result.optimizer_errors += 1
            return None

    committed = solve(pose, np.zeros((cfg.horizon, 2)))
    if committed is None:
        result.failure = "divergence"
        return result
    base_tick = 0
    pending: CycleOutcome | None = None

    for tick in range(max_ticks):
        t = tick * dt
        result.path.append((t, float(pose[0]), float(pose[1]), float(pose[2])))

        # failure monitors
        if not np.isfinite(pose).all():
            result.failure = "divergence"
            result.elapsed_s = t
            return result
        if world.collides(float(pose[0]), float(pose[1])):
            result.failure = "collision"
            result.elapsed_s = t
            return result

        # waypoint progress
        while wp_index < len(world.waypoints):
            dist_wp = math.hypot(
                pose[0] - world.waypoints[wp_index][0],
                pose[1] - world.waypoints[wp_index][1],
            )
            if dist_wp < cfg.arrival_radius_m:
                wp_index += 1
                best_dist = math.inf
                last_progress_tick = tick
                continue
            if dist_wp < best_dist - progress_eps:
                best_dist = dist_wp
                last_progress_tick = tick
            break
        if wp_index >= len(world.waypoints):
            result.completed = True
            result.elapsed_s = t
            return result
        if tick - last_progress_tick > stall_ticks:
            result.failure = "stall-local-minimum"
            result.elapsed_s = t
            return result

        # optimizer: launch a new cycle at every commit boundary using
        # the state the robot is predicted to occupy at commit time
        if tick % commit_ticks == 0:
            predicted = committed.trajectory.states[
                min(tick + commit_ticks - base_tick, committed.trajectory.horizon)
            ]
            warm = shift_controls(
                committed.trajectory.controls, tick + commit_ticks - base_tick
            )
            pending = solve(predicted, warm)

        # executor: latest committed trajectory, interpolated controls
        u = _interp_control(committed.trajectory, (tick - base_tick) * dt)
        pose = step_array(pose, u, dt)

        # atomic commit at the cycle boundary
        if (tick + 1) % commit_ticks == 0 and pending is not None:
            committed = pending
            base_tick = tick + 1
            pending = None

    result.failure = "stall-local-minimum"
    result.elapsed_s = max_ticks * dt
    return result


# --- scenario file I/O ----------------------------------------------------


def world_from_dict(spec: dict) -> tuple[World, dict]:
    """Parse a scenario dict into a World plus cycle-config overrides."""
    obstacles: list[Obstacle] = []
    for o in spec.get("obstacles", []):
        if o["type"] == "cylinder":
            obstacles.append(Cylinder(o["pose"][0], o["pose"][1], float(o["size"])))
        elif o["type"] == "box":
            pose = o["pose"]
            yaw = pose[2] if len(pose) > 2 else 0.0
            size = o["size"]
            sx, sy = (size, size) if np.isscalar(size) else (size[0], size[1])
            obstacles.append(Box(pose[0], pose[1], float(sx), float(sy), float(yaw)))
        else:
            raise ValueError(f"unknown obstacle type {o['type']!r}")
    world = World(
        tuple(obstacles),
        tuple((float(x), float(y)) for x, y in spec["waypoints"]),
    )
    return world, spec.get("cycle", {})


def load_scenario(path: str | Path) -> tuple[World, CycleConfig, str]:
    """Load a scenario JSON file: world, cycle config, scenario name."""
    spec = json.loads(Path(path).read_text())
    world, overrides = world_from_dict(spec)
    cost_overrides = overrides.pop("cost", {})
    cfg = CycleConfig(
        **overrides,
        **({"cost": CostParams(**cost_overrides)} if cost_overrides else {}),
    )
    return world, cfg, spec.get("name", Path(path).stem)


def write_run_result(result: RunResult, out_dir: str | Path, stem: str = "run") -> None:
    """Persist a RunResult as JSON plus the executed path as CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "completed": result.completed,
        "elapsed_s": round(result.elapsed_s, 6),
        "failure": result.failure,
        "optimizer_errors": result.optimizer_errors,
        "degraded_queries": result.degraded_queries,
        "config": result.config,
    }
    (out_dir / f"{stem}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    with (out_dir / f"{stem}_path.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "heading"])
        for t, x, y, heading in result.path:
            writer.writerow([f"{t:.9g}", f"{x:.9g}", f"{y:.9g}", f"{heading:.9g}"])
