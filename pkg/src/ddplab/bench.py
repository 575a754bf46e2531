"""Scenario catalog and benchmark matrix.

Runs every (scenario x mode x direction) cell a fixed number of times
with seeds derived deterministically from a base seed, and emits a
results table (CSV + JSON) plus one SVG trajectory plot per scenario.
All emitted files are byte-deterministic for identical inputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sim import Box, CycleConfig, Cylinder, RunResult, World, execute, load_scenario
from .subgoal import make_provider

DEFAULT_SCENARIO_DIR = Path(__file__).parent / "scenarios"
COURSE_LENGTH_M = 278.0
COURSE_TOLERANCE_M = 1.0
DIRECTIONS = ("forward", "backward")


@dataclass(frozen=True)
class Scenario:
    name: str
    world: World
    cfg: CycleConfig


@dataclass(frozen=True)
class ScenarioCatalog:
    scenarios: tuple[Scenario, ...]

    def __post_init__(self) -> None:
        if not self.scenarios:
            raise ValueError("catalog is empty")
        for sc in self.scenarios:
            length = sc.world.course_length()
            if abs(length - COURSE_LENGTH_M) > COURSE_TOLERANCE_M:
                raise ValueError(
                    f"scenario {sc.name!r}: course length {length:.1f} m is not "
                    f"{COURSE_LENGTH_M:.0f} ± {COURSE_TOLERANCE_M:.0f} m"
                )

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "ScenarioCatalog":
        directory = Path(directory) if directory is not None else DEFAULT_SCENARIO_DIR
        files = sorted(directory.glob("*.json"))
        if not files:
            raise FileNotFoundError(f"no scenario files in {directory}")
        entries = []
        for f in files:
            world, cfg, name = load_scenario(f)
            entries.append(Scenario(name, world, cfg))
        return cls(tuple(entries))

    def __iter__(self):
        return iter(self.scenarios)


@dataclass(frozen=True)
class RunRecord:
    scenario: str
    mode: str
    direction: str
    run_index: int
    seed: int
    completed: bool
    elapsed_s: float
    failure: str
    path: tuple[tuple[float, float], ...]  # executed (x, y) samples


@dataclass(frozen=True)
class BenchResult:
    records: tuple[RunRecord, ...]

    def cell(self, scenario: str, mode: str, direction: str) -> list[RunRecord]:
        return [
            r
            for r in self.records
            if r.scenario == scenario and r.mode == mode and r.direction == direction
        ]

    def cells(self):
        seen = []
        for r in self.records:
            key = (r.scenario, r.mode, r.direction)
            if key not in seen:
                seen.append(key)
        return seen


def derive_seed(seed_base: int, scenario: str, mode: str, direction: str, run: int) -> int:
    """Stable per-run seed; independent of matrix iteration order."""
    key = f"{scenario}/{mode}/{direction}/{run}".encode()
    ss = np.random.SeedSequence([seed_base, *key])
    return int(ss.generate_state(1)[0])


def run_matrix(
    catalog: ScenarioCatalog,
    modes: tuple[str, ...] = ("ddp", "ddpen"),
    runs_per_cell: int = 5,
    seed_base: int = 0,
    provider_name: str = "oracle",
    checkpoint: str | Path | None = None,
    progress=None,
) -> BenchResult:
    """Execute the full scenario x mode x direction matrix."""
    if runs_per_cell < 1:
        raise ValueError("runs_per_cell must be >= 1")
    provider = make_provider(provider_name, checkpoint) if "ddpen" in modes else None
    records = []
    for sc in catalog:
        for mode in modes:
            for direction in DIRECTIONS:
                world = sc.world if direction == "forward" else sc.world.reversed()
                for run in range(runs_per_cell):
                    seed = derive_seed(seed_base, sc.name, mode, direction, run)
                    result = execute(
                        world,
                        mode,
                        sc.cfg,
                        seed=seed,
                        provider=provider if mode == "ddpen" else None,
                    )
                    records.append(_record(sc.name, mode, direction, run, seed, result))
                    if progress is not None:
                        progress(records[-1])
    return BenchResult(tuple(records))


def _record(
    scenario: str, mode: str, direction: str, run: int, seed: int, result: RunResult
) -> RunRecord:
    return RunRecord(
        scenario=scenario,
        mode=mode,
        direction=direction,
        run_index=run,
        seed=seed,
        completed=result.completed,
        elapsed_s=result.elapsed_s,
        failure=result.failure,
        path=tuple((x, y) for _, x, y, _ in result.path),
    )


def cell_stats(records: list[RunRecord]) -> dict:
    """Mean and population sigma over completed runs; failures counted."""
    times = [r.elapsed_s for r in records if r.completed]
    failures = [r for r in records if not r.completed]
    stats = {
        "runs": len(records),
        "completions": len(times),
        "failures": sorted({r.failure for r in failures}),
    }
    if times:
        mean = float(np.mean(times))
        sigma = float(np.std(times))
        stats["mean_s"] = round(mean, 3)
        stats["sigma_s"] = round(sigma, 3)
        stats["display"] = f"{mean:.1f}±{sigma:.1f}"
    else:
        stats["mean_s"] = None
        stats["sigma_s"] = None
        stats["display"] = "fail"
    return stats


def emit_table(result: BenchResult, out_dir: str | Path) -> None:
    """Write results.csv and results.json for the matrix."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    payload = {"cells": [], "note": (
        "deterministic simulator: run-to-run spread comes from seeded "
        "initial pose perturbations, not physics noise"
    )}
    for scenario, mode, direction in result.cells():
        records = result.cell(scenario, mode, direction)
        stats = cell_stats(records)
        rows.append(
            [
                scenario,
                mode,
                direction,
                stats["runs"],
                stats["completions"],
                "" if stats["mean_s"] is None else f"{stats['mean_s']:.3f}",
                "" if stats["sigma_s"] is None else f"{stats['sigma_s']:.3f}",
                stats["display"],
            ]
        )
        payload["cells"].append(
            {
                "scenario": scenario,
                "mode": mode,
                "direction": direction,
                **stats,
                "outcomes": [
                    {
                        "run": r.run_index,
                        "seed": r.seed,
                        "completed": r.completed,
                        "elapsed_s": round(r.elapsed_s, 3),
                        "failure": r.failure,
                    }
                    for r in records
                ],
            }
        )
    with (out_dir / "results.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scenario", "mode", "direction", "runs", "completions", "mean_s", "sigma_s", "display"]
        )
        writer.writerows(rows)
    (out_dir / "results.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


MODE_STYLE = {
    "ddpen": ("#1f6feb", None),  # solid
    "ddp": ("#6e7781", "6 4"),  # dashed
}


def emit_plot(
    result: BenchResult,
    scenario: str,
    out_path: str | Path,
    world: World | None = None,
) -> None:
    """Standalone SVG: obstacle outlines plus one polyline per run."""
    records = [r for r in result.records if r.scenario == scenario]
    if not records:
        raise ValueError(f"no records for scenario {scenario!r}")
    # bounding box over paths (obstacles are always near the course)
    xs = [p[0] for r in records for p in r.path]
    ys = [p[1] for r in records for p in r.path]
    margin = 5.0
    xmin, xmax = min(xs) - margin, max(xs) + margin
    ymin, ymax = min(ys) - margin, max(ys) + margin
    width = 800.0
    scale = width / (xmax - xmin)
    height = (ymax - ymin) * scale

    def sx(x: float) -> str:
        return f"{(x - xmin) * scale:.2f}"

    def sy(y: float) -> str:
        return f"{(ymax - y) * scale:.2f}"  # y grows upward in world frame

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.2f}" viewBox="0 0 {width:.0f} {height:.2f}">',
        f'<rect width="{width:.0f}" height="{height:.2f}" fill="white"/>',
        f'<title>{scenario}</title>',
    ]
    if world is not None:
        for obs in world.obstacles:
            if isinstance(obs, Cylinder):
                parts.append(
                    f'<circle cx="{sx(obs.x)}" cy="{sy(obs.y)}" '
                    f'r="{obs.radius * scale:.2f}" fill="#d0d7de"/>'
                )
            elif isinstance(obs, Box) and obs.yaw == 0.0:
                parts.append(
                    f'<rect x="{sx(obs.x - obs.size_x / 2)}" '
                    f'y="{sy(obs.y + obs.size_y / 2)}" '
                    f'width="{obs.size_x * scale:.2f}" '
                    f'height="{obs.size_y * scale:.2f}" fill="#d0d7de"/>'
                )
        wp = " ".join(f"{sx(x)},{sy(y)}" for x, y in world.waypoints)
        parts.append(
            f'<polyline points="{wp}" fill="none" stroke="#d8b4fe" '
            f'stroke-width="1" stroke-dasharray="2 6"/>'
        )
    for r in records:
        color, dash = MODE_STYLE.get(r.mode, ("#000000", None))
        pts = " ".join(f"{sx(x)},{sy(y)}" for x, y in r.path)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="1.2" stroke-opacity="0.6"{dash_attr}/>'
        )
        x0, y0 = r.path[0]
        x1, y1 = r.path[-1]
        parts.append(
            f'<circle cx="{sx(x0)}" cy="{sy(y0)}" r="3" fill="#2da44e"/>'
        )
        if r.completed:
            parts.append(
                f'<circle cx="{sx(x1)}" cy="{sy(y1)}" r="3" fill="#0a3069"/>'
            )
        else:
            cx, cy = float(sx(x1)), float(sy(y1))
            parts.append(
                f'<path d="M{cx - 4:.2f} {cy - 4:.2f}L{cx + 4:.2f} {cy + 4:.2f}'
                f'M{cx - 4:.2f} {cy + 4:.2f}L{cx + 4:.2f} {cy - 4:.2f}" '
                f'stroke="#cf222e" stroke-width="2"/>'
            )
    parts.append("</svg>")
    Path(out_path).write_text("\n".join(parts) + "\n")


def run_and_emit(
    catalog: ScenarioCatalog,
    out_dir: str | Path,
    modes: tuple[str, ...] = ("ddp", "ddpen"),
    runs_per_cell: int = 5,
    seed_base: int = 0,
    provider_name: str = "oracle",
    checkpoint: str | Path | None = None,
    progress=None,
) -> BenchResult:
    """Full pipeline: matrix, table, one plot per scenario."""
    result = run_matrix(
        catalog,
        modes=modes,
        runs_per_cell=runs_per_cell,
        seed_base=seed_base,
        provider_name=provider_name,
        checkpoint=checkpoint,
        progress=progress,
    )
    out_dir = Path(out_dir)
    emit_table(result, out_dir)
    for sc in catalog:
        emit_plot(result, sc.name, out_dir / f"{_slug(sc.name)}.svg", world=sc.world)
    return result


def _slug(name: str) -> str:
    return "".join(c.lower() if c.isalnum() else "_" for c in name)
