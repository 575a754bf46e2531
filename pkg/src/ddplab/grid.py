"""Costmap grids, random obstacle map generation, and Euclidean distance
fields.

Cost values live in [0, 1]; 1.0 is lethal. The default grid is 200x200
cells at 0.05 m/cell (a 10 m x 10 m window). Costs are quantized to
1/255 steps so the PGM on-disk format round-trips bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import distance_transform_edt

DEFAULT_CELLS = 200
DEFAULT_RESOLUTION = 0.05
LETHAL = 1.0


class MapGenerationError(RuntimeError):
    """Raised when obstacle placement cannot satisfy the free-center
    constraint within the retry budget."""


@dataclass(frozen=True)
class CostMap:
    """Discretized local obstacle cost grid.

    ``cost`` is indexed ``[iy, ix]``; ``origin`` is the world position of
    the lower-left corner of cell (0, 0).
    """

    width_cells: int
    height_cells: int
    resolution: float
    origin: tuple[float, float]
    cost: NDArray[np.float64]

    def __post_init__(self) -> None:
        if self.cost.shape != (self.height_cells, self.width_cells):
            raise ValueError(
                f"cost shape {self.cost.shape} does not match "
                f"{self.height_cells}x{self.width_cells}"
            )
        if self.cost.size and (self.cost.min() < 0.0 or self.cost.max() > 1.0):
            raise ValueError("cost values must lie in [0, 1]")
        self.cost.setflags(write=False)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the map in world coordinates."""
        ox, oy = self.origin
        return (
            ox,
            oy,
            ox + self.width_cells * self.resolution,
            oy + self.height_cells * self.resolution,
        )

    def is_lethal(self, cell: tuple[int, int], threshold: float = LETHAL) -> bool:
        ix, iy = cell
        return bool(self.cost[iy, ix] >= threshold)


@dataclass(frozen=True)
class DistanceField:
    """Per-cell Euclidean distance (meters) to the nearest lethal cell.

    Shares grid geometry with its source map. When the source has no
    lethal cell every entry holds a finite sentinel exceeding the map
    diagonal.
    """

    width_cells: int
    height_cells: int
    resolution: float
    origin: tuple[float, float]
    dist: NDArray[np.float64]

    def __post_init__(self) -> None:
        self.dist.setflags(write=False)

    @property
    def sentinel(self) -> float:
        return (self.width_cells + self.height_cells) * self.resolution

    def sample(self, p: Sequence[float]) -> float:
        """Bilinearly interpolated distance at world point ``p``.

        Points outside the map extent read as the far sentinel.
        """
        ox, oy = self.origin
        u = (p[0] - ox) / self.resolution - 0.5
        v = (p[1] - oy) / self.resolution - 0.5
        if u < -0.5 or v < -0.5 or u > self.width_cells - 0.5 or v > self.height_cells - 0.5:
            return self.sentinel
        u = min(max(u, 0.0), self.width_cells - 1.0)
        v = min(max(v, 0.0), self.height_cells - 1.0)
        i0 = min(int(u), self.width_cells - 2) if self.width_cells > 1 else 0
        j0 = min(int(v), self.height_cells - 2) if self.height_cells > 1 else 0
        fu = u - i0
        fv = v - j0
        d = self.dist
        return float(
            d[j0, i0] * (1 - fu) * (1 - fv)
            + d[j0, i0 + 1] * fu * (1 - fv)
            + d[j0 + 1, i0] * (1 - fu) * fv
            + d[j0 + 1, i0 + 1] * fu * fv
        )

    def sample_many(self, pts: NDArray[np.float64]) -> NDArray[np.float64]:
        """Vectorized :meth:`sample` over an (n, 2) array of points."""
        ox, oy = self.origin
        u = (pts[:, 0] - ox) / self.resolution - 0.5
        v = (pts[:, 1] - oy) / self.resolution - 0.5
        outside = (
            (u < -0.5)
            | (v < -0.5)
            | (u > self.width_cells - 0.5)
            | (v > self.height_cells - 0.5)
        )
        u = np.clip(u, 0.0, self.width_cells - 1.0)
        v = np.clip(v, 0.0, self.height_cells - 1.0)
        i0 = np.minimum(u.astype(np.intp), max(self.width_cells - 2, 0))
        j0 = np.minimum(v.astype(np.intp), max(self.height_cells - 2, 0))
        fu = u - i0
        fv = v - j0
        d = self.dist
        i1 = np.minimum(i0 + 1, self.width_cells - 1)
        j1 = np.minimum(j0 + 1, self.height_cells - 1)
        out = (
            d[j0, i0] * (1 - fu) * (1 - fv)
            + d[j0, i1] * fu * (1 - fv)
            + d[j1, i0] * (1 - fu) * fv
            + d[j1, i1] * fu * fv
        )
        out[outside] = self.sentinel
        return out


@dataclass(frozen=True)
class MapGenParams:
    """Parameters for random obstacle map generation."""

    seed: int = 0
    width_cells: int = DEFAULT_CELLS
    height_cells: int = DEFAULT_CELLS
    resolution: float = DEFAULT_RESOLUTION
    obstacle_count: tuple[int, int] = (3, 8)
    shapes: tuple[str, ...] = ("rect", "circle")
    rect_size_m: tuple[float, float] = (0.4, 2.5)
    circle_radius_m: tuple[float, float] = (0.2, 1.2)
    rotation_range: tuple[float, float] = (-math.pi, math.pi)
    scale_range: tuple[float, float] = (0.7, 1.3)
    inflation_radius_m: float = 0.5
    decay: str = "linear"
    max_retries: int = 100

    def __post_init__(self) -> None:
        if self.obstacle_count[1] < self.obstacle_count[0]:
            raise ValueError("obstacle_count range is empty")
        if self.inflation_radius_m < 0:
            raise ValueError("inflation radius must be >= 0")


def world_to_cell(m: CostMap, p: Sequence[float]) -> tuple[int, int] | None:
    """Map a world point to its (ix, iy) cell, or None when out of bounds."""
    ox, oy = m.origin
    ix = math.floor((p[0] - ox) / m.resolution)
    iy = math.floor((p[1] - oy) / m.resolution)
    if ix < 0 or iy < 0 or ix >= m.width_cells or iy >= m.height_cells:
        return None
    return ix, iy


def cell_to_world(m: CostMap, cell: tuple[int, int]) -> tuple[float, float]:
    """World position of the center of ``cell``."""
    ox, oy = m.origin
    return (
        ox + (cell[0] + 0.5) * m.resolution,
        oy + (cell[1] + 0.5) * m.resolution,
    )


def _decay_profile(decay: str | Callable[[NDArray], NDArray]):
    if callable(decay):
        return decay
    if decay == "linear":
        return lambda frac: 1.0 - frac
    raise ValueError(f"unknown decay profile {decay!r}")


def dilate(
    m: CostMap,
    radius: float,
    decay: str | Callable[[NDArray], NDArray] = "linear",
    lethal_threshold: float = LETHAL,
) -> CostMap:
    """Spread lethal cost outward so it decays to zero over ``radius``.

    Never lowers a cell's cost; cells farther than ``radius`` from every
    lethal cell are unchanged.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    lethal = m.cost >= lethal_threshold
    if radius == 0.0 or not lethal.any() or lethal.all():
        return m
    dist = distance_transform_edt(~lethal) * m.resolution
    profile = _decay_profile(decay)
    frac = np.clip(dist / radius, 0.0, 1.0)
    inflated = np.where(dist < radius, np.clip(profile(frac), 0.0, 1.0), 0.0)
    cost = np.maximum(m.cost, inflated)
    return CostMap(m.width_cells, m.height_cells, m.resolution, m.origin, cost)


def distance_field(m: CostMap, lethal_threshold: float = LETHAL) -> DistanceField:
    """Exact Euclidean distance transform to the nearest lethal cell."""
    lethal = m.cost >= lethal_threshold
    if not lethal.any():
        sentinel = (m.width_cells + m.height_cells) * m.resolution
        dist = np.full_like(m.cost, sentinel)
    else:
        dist = distance_transform_edt(~lethal) * m.resolution
    return DistanceField(m.width_cells, m.height_cells, m.resolution, m.origin, dist)


def quantize(cost: NDArray[np.float64]) -> NDArray[np.float64]:
    """Snap costs to the 1/255 grid used by the PGM format."""
    return np.round(cost * 255.0) / 255.0


def _rasterize_obstacle(
    cost: NDArray[np.float64],
    params: MapGenParams,
    rng: np.random.Generator,
) -> None:
    w, h = params.width_cells, params.height_cells
    res = params.resolution
    shape = params.shapes[rng.integers(len(params.shapes))]
    cx = rng.uniform(0, w * res)
    cy = rng.uniform(0, h * res)
    scale = rng.uniform(*params.scale_range)
    xs = (np.arange(w) + 0.5) * res
    ys = (np.arange(h) + 0.5) * res
    gx, gy = np.meshgrid(xs, ys)
    if shape == "circle":
        r = rng.uniform(*params.circle_radius_m) * scale
        mask = (gx - cx) ** 2 + (gy - cy) ** 2 <= r * r
    else:
        sx = rng.uniform(*params.rect_size_m) * scale
        sy = rng.uniform(*params.rect_size_m) * scale
        theta = rng.uniform(*params.rotation_range)
        c, s = math.cos(theta), math.sin(theta)
        lx = c * (gx - cx) + s * (gy - cy)
        ly = -s * (gx - cx) + c * (gy - cy)
        mask = (np.abs(lx) <= sx / 2) & (np.abs(ly) <= sy / 2)
    cost[mask] = LETHAL


def generate_random_map(params: MapGenParams) -> CostMap:
    """Generate a random obstacle costmap with a non-lethal center.

    Deterministic per seed. Obstacles are rasterized lethal, then
    inflated with the configured decay; the center 3x3 neighborhood must
    stay below lethal or placement is retried.
    """
    rng = np.random.default_rng(params.seed)
    w, h = params.width_cells, params.height_cells
    origin = (-w * params.resolution / 2.0, -h * params.resolution / 2.0)
    cx, cy = w // 2, h // 2
    for _ in range(params.max_retries):
        cost = np.zeros((h, w))
        n = int(rng.integers(params.obstacle_count[0], params.obstacle_count[1] + 1))
        for _ in range(n):
            _rasterize_obstacle(cost, params, rng)
        m = CostMap(w, h, params.resolution, origin, cost)
        m = dilate(m, params.inflation_radius_m, params.decay)
        final = CostMap(w, h, params.resolution, origin, quantize(m.cost))
        center = final.cost[max(cy - 1, 0) : cy + 2, max(cx - 1, 0) : cx + 2]
        if (center < LETHAL).all():
            return final
    raise MapGenerationError(
        f"center still blocked after {params.max_retries} placement attempts"
    )


def save_pgm(m: CostMap, pgm_path: str | Path, lethal_threshold: float = LETHAL) -> None:
    """Write a plain (P2) PGM plus a JSON geometry sidecar.

    The sidecar shares the PGM path with a ``.json`` suffix. Cost 1.0
    maps to pixel 255.
    """
    pgm_path = Path(pgm_path)
    pixels = np.round(m.cost * 255.0).astype(int)
    lines = ["P2", f"{m.width_cells} {m.height_cells}", "255"]
    for row in pixels:
        lines.append(" ".join(str(v) for v in row))
    pgm_path.write_text("\n".join(lines) + "\n")
    sidecar = {
        "resolution_m": m.resolution,
        "origin_x_m": m.origin[0],
        "origin_y_m": m.origin[1],
        "lethal_threshold": lethal_threshold,
    }
    pgm_path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def load_pgm(pgm_path: str | Path) -> CostMap:
    """Load a costmap written by :func:`save_pgm`."""
    pgm_path = Path(pgm_path)
    tokens = []
    for line in pgm_path.read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{pgm_path} is not a plain P2 PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(t) for t in tokens[4 : 4 + w * h]], dtype=np.float64)
    if data.size != w * h:
        raise ValueError(f"{pgm_path}: expected {w * h} pixels, got {data.size}")
    sidecar = json.loads(pgm_path.with_suffix(".json").read_text())
    cost = (data / maxval).reshape(h, w)
    return CostMap(
        w,
        h,
        float(sidecar["resolution_m"]),
        (float(sidecar["origin_x_m"]), float(sidecar["origin_y_m"])),
        cost,
    )
