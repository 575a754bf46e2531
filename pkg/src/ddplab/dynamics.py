"""Unicycle kinematics: stepping, rollouts, and analytic Jacobians.

State is (x, y, heading) even though costs only look at position; the
velocity limits (1.5 m/s linear, 0.5 rad/s angular) need a heading to be
meaningful. Controls are clamped to those limits inside the step, and
Jacobians use the pre-clamp expressions so gradients never vanish at
saturation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

V_MAX = 1.5
OMEGA_MAX = 0.5
DEFAULT_DT = 0.1
DEFAULT_HORIZON = 50


@dataclass(frozen=True)
class State:
    x: float
    y: float
    heading: float

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.x, self.y, self.heading])


@dataclass(frozen=True)
class Control:
    v: float
    omega: float

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.v, self.omega])


@dataclass(frozen=True)
class Trajectory:
    """N+1 states and N controls at a fixed timestep."""

    states: NDArray[np.float64]  # (N+1, 3)
    controls: NDArray[np.float64]  # (N, 2)
    dt: float

    def __post_init__(self) -> None:
        if self.states.shape[0] != self.controls.shape[0] + 1:
            raise ValueError("need exactly one more state than controls")

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    while a > math.pi:
        a -= 2.0 * math.pi
    while a <= -math.pi:
        a += 2.0 * math.pi
    return a


def clamp_control(v: float, omega: float) -> tuple[float, float]:
    return (
        min(max(v, -V_MAX), V_MAX),
        min(max(omega, -OMEGA_MAX), OMEGA_MAX),
    )


def step_array(s: NDArray[np.float64], u: Sequence[float], dt: float) -> NDArray[np.float64]:
    """One Euler step on a raw (3,) state array; controls are clamped."""
    v, omega = clamp_control(float(u[0]), float(u[1]))
    th = s[2]
    return np.array(
        [
            s[0] + v * math.cos(th) * dt,
            s[1] + v * math.sin(th) * dt,
            normalize_angle(th + omega * dt),
        ]
    )


def step(s: State, u: Control, dt: float = DEFAULT_DT) -> State:
    """Advance the unicycle one timestep."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    vals = (s.x, s.y, s.heading, u.v, u.omega)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite state or control: {vals}")
    out = step_array(s.as_array(), (u.v, u.omega), dt)
    return State(float(out[0]), float(out[1]), float(out[2]))


def rollout(
    s0: State | NDArray[np.float64],
    controls: NDArray[np.float64],
    dt: float = DEFAULT_DT,
) -> Trajectory:
    """Roll the control sequence forward from ``s0``."""
    controls = np.asarray(controls, dtype=np.float64)
    if controls.ndim != 2 or controls.shape[0] == 0 or controls.shape[1] != 2:
        raise ValueError("controls must be a non-empty (N, 2) array")
    s = s0.as_array() if isinstance(s0, State) else np.asarray(s0, dtype=np.float64)
    states = np.empty((controls.shape[0] + 1, 3))
    states[0] = s
    for i in range(controls.shape[0]):
        states[i + 1] = step_array(states[i], controls[i], dt)
    if not np.isfinite(states).all():
        raise ValueError("rollout produced non-finite states")
    return Trajectory(states, controls.copy(), dt)


def linearize(
    s: State | NDArray[np.float64],
    u: Control | Sequence[float],
    dt: float = DEFAULT_DT,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Analytic Jacobians (A, B) of the step, using pre-clamp controls."""
    arr = s.as_array() if isinstance(s, State) else np.asarray(s, dtype=np.float64)
    uv = u.as_array() if isinstance(u, Control) else np.asarray(u, dtype=np.float64)
    th = arr[2]
    v = uv[0]
    c, si = math.cos(th), math.sin(th)
    A = np.array(
        [
            [1.0, 0.0, -v * si * dt],
            [0.0, 1.0, v * c * dt],
            [0.0, 0.0, 1.0],
        ]
    )
    B = np.array(
        [
            [c * dt, 0.0],
            [si * dt, 0.0],
            [0.0, dt],
        ]
    )
    return A, B


def linearize_many(
    states: NDArray[np.float64],
    controls: NDArray[np.float64],
    dt: float,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Batched Jacobians over a trajectory: (N, 3, 3) and (N, 3, 2)."""
    n = controls.shape[0]
    th = states[:n, 2]
    v = controls[:, 0]
    c = np.cos(th)
    si = np.sin(th)
    A = np.tile(np.eye(3), (n, 1, 1))
    A[:, 0, 2] = -v * si * dt
    A[:, 1, 2] = v * c * dt
    B = np.zeros((n, 3, 2))
    B[:, 0, 0] = c * dt
    B[:, 1, 0] = si * dt
    B[:, 2, 1] = dt
    return A, B


def export_csv(traj: Trajectory, path: str | Path) -> None:
    """Write a trajectory as CSV with columns t, x, y, heading, v, omega."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "heading", "v", "omega"])
        for i, s in enumerate(traj.states):
            if i < traj.horizon:
                u = [f"{traj.controls[i, 0]:.9g}", f"{traj.controls[i, 1]:.9g}"]
            else:
                u = ["", ""]
            writer.writerow(
                [f"{i * traj.dt:.9g}", f"{s[0]:.9g}", f"{s[1]:.9g}", f"{s[2]:.9g}"] + u
            )
