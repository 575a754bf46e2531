"""Sub-goal providers: an exact grid-planner oracle, a straight-line
baseline, and a small learned approximator trained on the synthetic
dataset.

All providers share one contract: given a robot-centered costmap and a
goal, return three in-extent positions ordered by path step (30, 50,
70). The simulator consumes any of them interchangeably.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from . import astar
from .astar import DEFAULT_SUBGOAL_STEPS, DatasetRecord, SubGoalSet
from .grid import LETHAL, CostMap, cell_to_world, world_to_cell

CHECKPOINT_VERSION = 1
# metric distances of the baseline ray points; matches the free-space
# positions of path steps 30/50/70 on an axis-aligned 0.05 m grid
BASELINE_DISTANCES = (1.5, 2.5, 3.5)


class ProviderError(ValueError):
    """Raised on an unanswerable query (e.g. lethal map center)."""


@dataclass(frozen=True)
class SubGoalQuery:
    costmap: CostMap
    goal: tuple[float, float]


@dataclass(frozen=True)
class SubGoalPrediction:
    positions: tuple[tuple[float, float], ...]
    latency_s: float
    provider: str
    degraded: bool = False


def _clip_to_extent(m: CostMap, p: tuple[float, float]) -> tuple[float, float]:
    xmin, ymin, xmax, ymax = m.extent
    return (min(max(p[0], xmin), xmax), min(max(p[1], ymin), ymax))


def _center_cell(m: CostMap) -> tuple[int, int]:
    return (m.width_cells // 2, m.height_cells // 2)


def _ray_points(m: CostMap, goal: tuple[float, float]) -> NDArray[np.float64]:
    """(3, 2) points at the baseline distances along the ray to the goal."""
    center = np.asarray(cell_to_world(m, _center_cell(m)))
    ray = np.asarray(goal) - center
    norm = float(np.hypot(*ray))
    if norm < 1e-12:
        return np.tile(center, (3, 1))
    unit = ray / norm
    return np.stack([center + dist * unit for dist in BASELINE_DISTANCES])


def baseline_prediction(q: SubGoalQuery) -> SubGoalPrediction:
    """Points at fixed distances along the straight ray toward the goal."""
    t0 = time.perf_counter()
    pts = tuple(
        _clip_to_extent(q.costmap, (p[0], p[1]))
        for p in _ray_points(q.costmap, q.goal)
    )
    return SubGoalPrediction(pts, time.perf_counter() - t0, "baseline")


class BaselineProvider:
    name = "baseline"

    def __call__(self, q: SubGoalQuery) -> SubGoalPrediction:
        return baseline_prediction(q)


class OracleProvider:
    """Plans on the query map and reads sub-goals off the optimal path.

    Falls back to the baseline (flagged degraded) when the goal is
    unreachable, so the control loop never stalls on a provider.
    """

    name = "oracle"

    def __init__(
        self,
        steps: Sequence[int] = DEFAULT_SUBGOAL_STEPS,
        w_cost: float = astar.DEFAULT_W_COST,
    ) -> None:
        self.steps = tuple(steps)
        self.w_cost = w_cost

    def __call__(self, q: SubGoalQuery) -> SubGoalPrediction:
        t0 = time.perf_counter()
        m = q.costmap
        start = _center_cell(m)
        if m.is_lethal(start):
            raise ProviderError("map center is lethal")
        path = None
        for target in self._target_cells(m, q.goal, start):
            path = astar.plan(m, start, target, w_cost=self.w_cost)
            if path is not None:
                break
        if path is None:
            base = baseline_prediction(q)
            return SubGoalPrediction(
                base.positions, time.perf_counter() - t0, self.name, degraded=True
            )
        sg = astar.extract_subgoals(path, m, self.steps)
        return SubGoalPrediction(
            sg.positions, time.perf_counter() - t0, self.name
        )

    def _target_cells(
        self,
        m: CostMap,
        goal: tuple[float, float],
        start: tuple[int, int],
        tries: int = 6,
        min_separation_cells: float = 25.0,
    ):
        """Candidate target cells for a possibly-blocked goal, best first.

        A lethal goal cell on the border is resolved along the border
        ring (where dataset goals live); a lethal interior goal falls
        back to the nearest free cell anywhere. Candidates are ranked by
        distance to the goal plus distance from the start so that, when
        an obstruction straddles the goal, the detour on the robot's
        side wins over a mirror-image one behind the obstruction.
        Successive candidates keep a minimum mutual separation: if the
        best-scoring region is a free pocket unreachable from the start,
        a later candidate from a different region still gives the
        planner a target, instead of three retries into the same pocket.
        """
        gx = min(max(goal[0], m.extent[0]), m.extent[2] - m.resolution / 2)
        gy = min(max(goal[1], m.extent[1]), m.extent[3] - m.resolution / 2)
        cell = world_to_cell(m, (gx, gy))
        assert cell is not None
        chosen: list[tuple[int, int]] = []
        if not m.is_lethal(cell):
            # best case; later candidates only matter when this one is a
            # free-but-unreachable pocket (e.g. behind a sealed wall)
            chosen.append(cell)
            yield cell
        ring = 2
        on_border = (
            cell[0] < ring
            or cell[1] < ring
            or cell[0] >= m.width_cells - ring
            or cell[1] >= m.height_cells - ring
        )
        free_y, free_x = np.nonzero(m.cost < LETHAL)
        if on_border:
            border = (
                (free_x < ring)
                | (free_y < ring)
                | (free_x >= m.width_cells - ring)
                | (free_y >= m.height_cells - ring)
            )
            if border.any():
                free_x, free_y = free_x[border], free_y[border]
        if free_x.size == 0:
            raise ProviderError("map has no non-lethal cell")
        score = np.hypot(free_x - cell[0], free_y - cell[1]) + np.hypot(
            free_x - start[0], free_y - start[1]
        )
        order = np.argsort(score, kind="stable")  # ties: flat order
        for idx in order:
            cand = (int(free_x[idx]), int(free_y[idx]))
            if any(
                math.hypot(cand[0] - c[0], cand[1] - c[1]) < min_separation_cells
                for c in chosen
            ):
                continue
            chosen.append(cand)
            yield cand
            if len(chosen) >= tries:
                return


# --- learned approximator ------------------------------------------------


@dataclass(frozen=True)
class ApproximatorConfig:
    downsample: int = 8
    hidden: tuple[int, ...] = (128, 64)
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 80
    seed: int = 0
    val_fraction: float = 0.1
    split_seed: int = 1234

    def __post_init__(self) -> None:
        if self.downsample < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("sizes must be positive")


class TrainingError(RuntimeError):
    """Validation loss never improved over the run."""


def _features(m: CostMap, goal: tuple[float, float], downsample: int) -> NDArray[np.float64]:
    h, w = m.cost.shape
    dh, dw = h // downsample, w // downsample
    pooled = m.cost[: dh * downsample, : dw * downsample]
    pooled = pooled.reshape(dh, downsample, dw, downsample).mean(axis=(1, 3))
    cx, cy = cell_to_world(m, _center_cell(m))
    half = w * m.resolution / 2.0
    goal_feat = np.array([(goal[0] - cx) / half, (goal[1] - cy) / half])
    return np.concatenate([pooled.ravel(), goal_feat])


def _targets(rec: DatasetRecord) -> NDArray[np.float64]:
    """Regression target: the sub-goals' offsets from the straight-line
    ray points, normalized by the map half-extent. The residual form
    makes the zero function coincide with the baseline, so training
    starts near the baseline's error instead of having to rediscover
    the ray geometry."""
    m = rec.costmap
    half = m.width_cells * m.resolution / 2.0
    base = _ray_points(m, rec.goal)
    out = np.empty(6)
    for i, (px, py) in enumerate(rec.subgoals.positions):
        out[2 * i] = (px - base[i, 0]) / half
        out[2 * i + 1] = (py - base[i, 1]) / half
    return out


def _init_weights(sizes: Sequence[int], rng: np.random.Generator) -> list[NDArray]:
    params = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        scale = np.sqrt(2.0 / n_in)
        params.append(rng.normal(0.0, scale, size=(n_in, n_out)))
        params.append(np.zeros(n_out))
    return params


def _forward(params: list[NDArray], x: NDArray) -> NDArray:
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers):
        h = h @ params[2 * i] + params[2 * i + 1]
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
    return h


def _forward_backward(params: list[NDArray], x: NDArray, y: NDArray):
    acts = [x]
    pre = []
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers):
        z = h @ params[2 * i] + params[2 * i + 1]
        pre.append(z)
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    diff = acts[-1] - y
    loss = float(np.mean(diff * diff))
    grads: list[NDArray] = [np.empty(0)] * len(params)
    delta = 2.0 * diff / diff.size
    for i in range(n_layers - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[2 * i].T) * (pre[i - 1] > 0.0)
    return loss, grads


@dataclass
class Checkpoint:
    config: ApproximatorConfig
    sizes: list[int]
    params: list[NDArray]
    validation_error_m: float
    map_cells: int
    resolution: float


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Write the JSON-header + float32-blob checkpoint format."""
    header = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "downsample": ckpt.config.downsample,
            "hidden": list(ckpt.config.hidden),
            "learning_rate": ckpt.config.learning_rate,
            "batch_size": ckpt.config.batch_size,
            "epochs": ckpt.config.epochs,
            "seed": ckpt.config.seed,
            "val_fraction": ckpt.config.val_fraction,
            "split_seed": ckpt.config.split_seed,
        },
        "sizes": ckpt.sizes,
        "validation_error_m": ckpt.validation_error_m,
        "map_cells": ckpt.map_cells,
        "resolution": ckpt.resolution,
    }
    blob = np.concatenate([p.ravel() for p in ckpt.params]).astype("<f4").tobytes()
    raw = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(blob)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with Path(path).open("rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        blob = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    cfg_raw = dict(header["config"])
    cfg_raw["hidden"] = tuple(cfg_raw["hidden"])
    cfg = ApproximatorConfig(**cfg_raw)
    sizes = header["sizes"]
    params = []
    off = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        params.append(blob[off : off + n_in * n_out].reshape(n_in, n_out).copy())
        off += n_in * n_out
        params.append(blob[off : off + n_out].copy())
        off += n_out
    if off != blob.size:
        raise ValueError("checkpoint blob size does not match layer sizes")
    return Checkpoint(
        cfg, sizes, params, header["validation_error_m"],
        header["map_cells"], header["resolution"],
    )


def prediction_error_m(pred: Sequence[Sequence[float]], truth: SubGoalSet) -> float:
    """Mean Euclidean error (meters) over the three sub-goal positions."""
    errs = [
        np.hypot(p[0] - t[0], p[1] - t[1])
        for p, t in zip(pred, truth.positions)
    ]
    return float(np.mean(errs))


def train_approximator(
    records: Iterable[DatasetRecord],
    cfg: ApproximatorConfig,
    min_records: int = 1000,
    progress: Callable[[int, float, float], None] | None = None,
) -> Checkpoint:
    """Fit the encoder-free regression model with Adam on MSE.

    Deterministic per config seed. Raises :class:`TrainingError` when
    validation loss never improves on its initial value.
    """
    recs = list(records)
    if len(recs) < min_records:
        raise ValueError(f"need >= {min_records} records, got {len(recs)}")
    m0 = recs[0].costmap
    half = m0.width_cells * m0.resolution / 2.0
    X = np.stack([_features(r.costmap, r.goal, cfg.downsample) for r in recs])
    Y = np.stack([_targets(r) for r in recs])

    split_rng = np.random.default_rng(cfg.split_seed)
    order = split_rng.permutation(len(recs))
    n_val = max(1, int(round(len(recs) * cfg.val_fraction)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    Xt, Yt = X[train_idx], Y[train_idx]
    Xv, Yv = X[val_idx], Y[val_idx]

    sizes = [X.shape[1], *cfg.hidden, 6]
    rng = np.random.default_rng(cfg.seed)
    params = _init_weights(sizes, rng)
    m_adam = [np.zeros_like(p) for p in params]
    v_adam = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    def val_loss() -> float:
        diff = _forward(params, Xv) - Yv
        return float(np.mean(diff * diff))

    initial_val = val_loss()
    best_val = initial_val
    best_params = [p.copy() for p in params]
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(Xt))
        epoch_loss = 0.0
        n_batches = 0
        for i in range(0, len(Xt), cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            loss, grads = _forward_backward(params, Xt[idx], Yt[idx])
            epoch_loss += loss
            n_batches += 1
            step += 1
            for j, g in enumerate(grads):
                m_adam[j] = beta1 * m_adam[j] + (1 - beta1) * g
                v_adam[j] = beta2 * v_adam[j] + (1 - beta2) * g * g
                mhat = m_adam[j] / (1 - beta1**step)
                vhat = v_adam[j] / (1 - beta2**step)
                params[j] -= cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
        vl = val_loss()
        if vl < best_val:
            best_val = vl
            best_params = [p.copy() for p in params]
        if progress is not None:
            progress(epoch, epoch_loss / max(n_batches, 1), vl)
    if best_val >= initial_val:
        raise TrainingError(
            f"validation loss never improved ({initial_val:.6f} -> {best_val:.6f})"
        )

    # validation error in meters: mean position error per record, median over records
    pred = _forward(best_params, Xv)
    per_rec = np.empty(len(Xv))
    for i in range(len(Xv)):
        p = pred[i].reshape(3, 2) * half
        t = Yv[i].reshape(3, 2) * half
        per_rec[i] = float(np.mean(np.hypot(*(p - t).T)))
    return Checkpoint(
        cfg,
        sizes,
        best_params,
        float(np.median(per_rec)),
        m0.width_cells,
        m0.resolution,
    )


class LearnedProvider:
    name = "learned"

    def __init__(self, ckpt: Checkpoint) -> None:
        self.ckpt = ckpt

    @classmethod
    def from_file(cls, path: str | Path) -> "LearnedProvider":
        return cls(load_checkpoint(path))

    def __call__(self, q: SubGoalQuery) -> SubGoalPrediction:
        t0 = time.perf_counter()
        m = q.costmap
        if m.width_cells != self.ckpt.map_cells:
            raise ProviderError(
                f"checkpoint expects {self.ckpt.map_cells}-cell maps, "
                f"got {m.width_cells}"
            )
        x = _features(m, q.goal, self.ckpt.config.downsample)
        out = _forward(self.ckpt.params, x[None, :])[0].reshape(3, 2)
        half = m.width_cells * m.resolution / 2.0
        base = _ray_points(m, q.goal)
        pts = tuple(
            _clip_to_extent(
                m, (base[i, 0] + out[i, 0] * half, base[i, 1] + out[i, 1] * half)
            )
            for i in range(3)
        )
        return SubGoalPrediction(pts, time.perf_counter() - t0, self.name)


PROVIDERS = {
    "oracle": OracleProvider,
    "baseline": BaselineProvider,
}


def make_provider(name: str, checkpoint: str | Path | None = None):
    """Instantiate a provider by CLI name."""
    if name == "learned":
        if checkpoint is None:
            raise ValueError("learned provider requires a checkpoint path")
        return LearnedProvider.from_file(checkpoint)
    if name in PROVIDERS:
        return PROVIDERS[name]()
    raise ValueError(f"unknown provider {name!r}")
