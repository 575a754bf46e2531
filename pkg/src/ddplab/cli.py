"""Command-line interface: dataset generation, single-shot planning,
approximator training, provider evaluation, closed-loop simulation, and
the benchmark matrix."""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import astar, bench, ddp, dynamics, grid, sim, subgoal


def _parse_floats(value: str, n: int, label: str) -> tuple[float, ...]:
    parts = value.split(",")
    if len(parts) != n:
        raise click.BadParameter(f"{label} must be {n} comma-separated numbers")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise click.BadParameter(f"{label}: {exc}") from exc


@click.group()
def main() -> None:
    """Trajectory optimization with grid-planner sub-goals."""


@main.group()
def dataset() -> None:
    """Synthetic costmap/sub-goal dataset tools."""


@dataset.command("generate")
@click.option("--n", "n_maps", type=int, required=True, help="Number of random maps.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--goals-per-map", type=int, default=4, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
def dataset_generate(n_maps: int, seed: int, goals_per_map: int, out_dir: Path) -> None:
    """Generate random maps with A* sub-goal records."""
    stats = astar.DatasetStats()
    records = astar.generate_dataset(
        n_maps, grid.MapGenParams(seed=seed), goals_per_map=goals_per_map,
        seed=seed, stats=stats,
    )
    n = astar.write_dataset(records, out_dir)
    click.echo(
        f"wrote {n} records from {stats.maps_generated} maps to {out_dir} "
        f"({stats.goals_discarded} unreachable goals discarded, "
        f"{stats.maps_skipped} maps skipped)"
    )


@main.command("plan")
@click.option("--map", "map_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--start", required=True, help="X,Y,TH world pose.")
@click.option("--goal", required=True, help="X,Y world position.")
@click.option("--subgoal", default=None, help="X,Y explicit sub-goal position.")
@click.option("--ddpen", is_flag=True, help="Enable the sub-goal cost term (oracle-provided when --subgoal is absent).")
@click.option("--horizon", type=int, default=dynamics.DEFAULT_HORIZON, show_default=True)
@click.option("--max-iters", type=int, default=100, show_default=True)
@click.option("--out", "traj_out", type=click.Path(path_type=Path), required=True)
@click.option("--report", "report_out", type=click.Path(path_type=Path), default=None)
def plan_cmd(map_path, start, goal, subgoal, ddpen, horizon, max_iters, traj_out, report_out):
    """Optimize one trajectory on a stored costmap."""
    s0 = _parse_floats(start, 3, "--start")
    goal_p = _parse_floats(goal, 2, "--goal")
    m = grid.load_pgm(map_path)
    df = grid.distance_field(m)
    sg = None
    if subgoal is not None:
        sg = _parse_floats(subgoal, 2, "--subgoal")
    elif ddpen:
        pred = subgoal.OracleProvider()(subgoal.SubGoalQuery(m, goal_p))
        sg = pred.positions[0]
        click.echo(f"oracle sub-goal: ({sg[0]:.3f}, {sg[1]:.3f})"
                   + (" [degraded]" if pred.degraded else ""))
    params = ddp.CostParams() if (ddpen or subgoal is not None) else ddp.CostParams(subgoal_enabled=False)
    ctx = ddp.OptimizeContext(df, goal_p, subgoal=sg, params=params)
    try:
        report = ddp.optimize(np.asarray(s0), np.zeros((horizon, 2)), ctx, max_iters=max_iters)
    except ddp.OptimizeAbort as exc:
        raise click.ClickException(str(exc)) from exc
    dynamics.export_csv(report.trajectory, traj_out)
    final = report.trajectory.states[-1]
    click.echo(
        f"final cost {report.costs[-1]:.6f} after {report.iterations} iterations "
        f"({report.accepted} accepted, {report.rejected} rejected); "
        f"end state ({final[0]:.3f}, {final[1]:.3f}, {final[2]:.3f})"
    )
    if report_out is not None:
        payload = {
            "costs": report.costs,
            "iterations": report.iterations,
            "accepted": report.accepted,
            "rejected": report.rejected,
            "mu_trace": report.mu_trace,
            "converged": report.converged,
            "goal": list(goal_p),
            "subgoal": list(sg) if sg is not None else None,
        }
        Path(report_out).write_text(json.dumps(payload, indent=2) + "\n")


@main.command("train")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--epochs", type=int, default=None, help="Override training epochs.")
@click.option("--seed", type=int, default=None, help="Override init seed.")
def train_cmd(dataset_dir, out_path, epochs, seed):
    """Train the learned sub-goal approximator on a dataset."""
    cfg = subgoal.ApproximatorConfig()
    overrides = {}
    if epochs is not None:
        overrides["epochs"] = epochs
    if seed is not None:
        overrides["seed"] = seed
    if overrides:
        cfg = replace(cfg, **overrides)

    def progress(epoch, train_loss, val_loss):
        click.echo(f"epoch {epoch:3d}  train {train_loss:.6f}  val {val_loss:.6f}")

    try:
        ckpt = subgoal.train_approximator(
            astar.read_dataset(dataset_dir), cfg, progress=progress
        )
    except (ValueError, subgoal.TrainingError) as exc:
        raise click.ClickException(str(exc)) from exc
    subgoal.save_checkpoint(ckpt, out_path)
    click.echo(
        f"saved {out_path} (median validation error "
        f"{ckpt.validation_error_m:.3f} m)"
    )


@main.group("subgoal")
def subgoal_group() -> None:
    """Sub-goal provider tools."""


@subgoal_group.command("eval")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--provider", type=click.Choice(["oracle", "baseline", "learned"]), default="oracle", show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True, path_type=Path), default=None)
def subgoal_eval(dataset_dir, provider, checkpoint):
    """Median prediction error and latency of a provider on a dataset."""
    try:
        prov = subgoal.make_provider(provider, checkpoint)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    errors = []
    latencies = []
    degraded = 0
    for rec in astar.read_dataset(dataset_dir):
        t0 = time.perf_counter()
        pred = prov(subgoal.SubGoalQuery(rec.costmap, rec.goal))
        latencies.append(time.perf_counter() - t0)
        errors.append(subgoal.prediction_error_m(pred.positions, rec.subgoals))
        degraded += pred.degraded
    if not errors:
        raise click.ClickException("dataset is empty")
    click.echo(
        f"{provider}: {len(errors)} records, "
        f"median error {statistics.median(errors):.4f} m, "
        f"mean error {statistics.fmean(errors):.4f} m, "
        f"median latency {statistics.median(latencies) * 1e3:.2f} ms, "
        f"{degraded} degraded"
    )


@main.group("sim")
def sim_group() -> None:
    """Closed-loop simulation."""


@sim_group.command("run")
@click.option("--scenario", "scenario_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--mode", type=click.Choice(["ddp", "ddpen"]), required=True)
@click.option("--provider", type=click.Choice(["oracle", "baseline", "learned"]), default="oracle", show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--reverse", is_flag=True, help="Run the course backward.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
def sim_run(scenario_path, mode, provider, checkpoint, seed, reverse, out_dir):
    """Execute one run of a scenario and store the result."""
    world, cfg, name = sim.load_scenario(scenario_path)
    if reverse:
        world = world.reversed()
    prov = subgoal.make_provider(provider, checkpoint) if mode == "ddpen" else None
    result = sim.execute(world, mode, cfg, seed=seed, provider=prov)
    stem = f"{bench._slug(name)}_{mode}_{'backward' if reverse else 'forward'}_s{seed}"
    sim.write_run_result(result, out_dir, stem=stem)
    status = "completed" if result.completed else f"failed ({result.failure})"
    click.echo(f"{name} {mode} seed {seed}: {status} in {result.elapsed_s:.1f} s "
               f"-> {Path(out_dir) / (stem + '.json')}")


@main.command("bench")
@click.option("--catalog", "catalog_dir", type=click.Path(exists=True, path_type=Path), default=None,
              help="Scenario directory (defaults to the packaged catalog).")
@click.option("--modes", default="ddp,ddpen", show_default=True)
@click.option("--runs", type=int, default=5, show_default=True)
@click.option("--seed-base", type=int, default=0, show_default=True)
@click.option("--provider", type=click.Choice(["oracle", "baseline", "learned"]), default="oracle", show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
def bench_cmd(catalog_dir, modes, runs, seed_base, provider, checkpoint, out_dir):
    """Run the full scenario matrix and emit results and plots."""
    catalog = bench.ScenarioCatalog.load(catalog_dir)
    mode_tuple = tuple(m.strip() for m in modes.split(",") if m.strip())
    for m in mode_tuple:
        if m not in ("ddp", "ddpen"):
            raise click.BadParameter(f"unknown mode {m!r}")

    def progress(rec):
        status = "ok" if rec.completed else rec.failure
        click.echo(
            f"{rec.scenario:14s} {rec.mode:5s} {rec.direction:8s} "
            f"run {rec.run_index}: {status} ({rec.elapsed_s:.1f} s)"
        )

    result = bench.run_and_emit(
        catalog, out_dir, modes=mode_tuple, runs_per_cell=runs,
        seed_base=seed_base, provider_name=provider, checkpoint=checkpoint,
        progress=progress,
    )
    click.echo(f"results in {out_dir}")
    for scenario, mode, direction in result.cells():
        stats = bench.cell_stats(result.cell(scenario, mode, direction))
        click.echo(f"{scenario:14s} {mode:5s} {direction:8s} {stats['display']}")


if __name__ == "__main__":
    main()
