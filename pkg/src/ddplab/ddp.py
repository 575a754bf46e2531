"""Cost stack and iLQR-style trajectory optimizer, with an optional
sub-goal attraction term for escaping local minima.

Per-step cost is a weighted sum of a quadratic control penalty, the
Euclidean distance to the goal, a hinge penalty on proximity to
obstacles (via a distance field), and, when enabled, the Euclidean
distance to a sub-goal. The terminal cost drops the control and
sub-goal terms.

Distance-to-point terms use the smoothed norm sqrt(r^2 + eps^2) so the
gradient exists at the target itself. Hessians of the smoothed norm are
exact (and PSD); the obstacle term uses a PSD outer-product
approximation since the interpolated distance field has no meaningful
second derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from . import _kernels
from .dynamics import DEFAULT_DT, Trajectory, linearize_many
from .grid import DistanceField

NORM_EPS = 1e-6
GRAD_H = 1e-4  # central-difference step for distance-field gradients, meters

MU_INIT = 1e-6
MU_MAX = 1e10
LINE_SEARCH_ALPHAS = tuple(0.5**i for i in range(7))  # 1 .. 1/64
REL_IMPROVEMENT_TOL = 1e-6


class OptimizeAbort(RuntimeError):
    """Optimization could not proceed (non-finite cost or hopelessly
    ill-conditioned backward pass)."""


@dataclass(frozen=True)
class CostParams:
    w_control: float = 0.05
    w_goal: float = 1.0
    w_obstacle: float = 20.0
    w_subgoal: float = 5.0
    obstacle_influence: float = 1.0  # hinge activation distance, meters
    control_enabled: bool = True
    goal_enabled: bool = True
    obstacle_enabled: bool = True
    subgoal_enabled: bool = True

    def __post_init__(self) -> None:
        weights = (self.w_control, self.w_goal, self.w_obstacle, self.w_subgoal)
        if any(w < 0 for w in weights):
            raise ValueError("cost weights must be >= 0")
        if self.obstacle_influence <= 0:
            raise ValueError("obstacle influence distance must be > 0")

    def effective(self) -> tuple[float, float, float, float]:
        return (
            self.w_control if self.control_enabled else 0.0,
            self.w_goal if self.goal_enabled else 0.0,
            self.w_obstacle if self.obstacle_enabled else 0.0,
            self.w_subgoal if self.subgoal_enabled else 0.0,
        )


@dataclass(frozen=True)
class OptimizeContext:
    """Everything the cost stack needs: field, goal, optional sub-goal."""

    dist_field: DistanceField
    goal: tuple[float, float]
    subgoal: tuple[float, float] | None = None
    params: CostParams = field(default_factory=CostParams)
    # optional per-step sub-goal positions (N, 2); overrides ``subgoal``
    # inside the optimizer when the three predictions are spread over
    # horizon thirds
    subgoal_schedule: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        if not np.isfinite(self.goal).all():
            raise ValueError("goal must be finite")
        if self.subgoal is not None and not np.isfinite(self.subgoal).all():
            raise ValueError("sub-goal must be finite")
        if self.subgoal_schedule is not None and not np.isfinite(self.subgoal_schedule).all():
            raise ValueError("sub-goal schedule must be finite")

    @property
    def subgoal_active(self) -> bool:
        w = self.params.effective()[3]
        return w > 0.0 and (
            self.subgoal is not None or self.subgoal_schedule is not None
        )


@dataclass
class OptimizeReport:
    trajectory: Trajectory
    costs: list[float]  # total cost after each accepted iteration, incl. initial
    accepted: int = 0
    rejected: int = 0
    mu_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _smooth_norm(r: NDArray[np.float64]) -> NDArray[np.float64]:
    """sqrt(||r||^2 + eps^2) along the last axis."""
    return np.sqrt(np.sum(r * r, axis=-1) + NORM_EPS * NORM_EPS)


def cost_control(u: Sequence[float]) -> float:
    """Quadratic control effort: v^2 + omega^2 (unweighted)."""
    return float(u[0] * u[0] + u[1] * u[1])


def cost_goal(p: Sequence[float], goal: Sequence[float]) -> float:
    """Euclidean distance from position to goal (unweighted)."""
    return float(np.hypot(p[0] - goal[0], p[1] - goal[1]))


def cost_obstacle(p: Sequence[float], df: DistanceField, d: float) -> float:
    """Hinge obstacle proximity: max(0, d - distance-to-nearest-obstacle)."""
    return max(0.0, d - df.sample(p))


def cost_subgoal(p: Sequence[float], x_s: Sequence[float]) -> float:
    """Euclidean distance from position to the sub-goal (unweighted)."""
    return float(np.hypot(p[0] - x_s[0], p[1] - x_s[1]))


def _stage_costs(
    pos: NDArray[np.float64],
    ctx: OptimizeContext,
    terminal: bool,
) -> NDArray[np.float64]:
    """Per-position state cost (goal + obstacle [+ sub-goal]) over (n, 2)."""
    _, wg, wo, ws = ctx.params.effective()
    total = np.zeros(pos.shape[0])
    if wg > 0.0:
        total += wg * _smooth_norm(pos - np.asarray(ctx.goal))
    if wo > 0.0:
        dist = ctx.dist_field.sample_many(pos)
        total += wo * np.maximum(0.0, ctx.params.obstacle_influence - dist)
    if not terminal and ctx.subgoal_active:
        total += ws * _smooth_norm(pos - _subgoal_targets(ctx, pos.shape[0]))
    return total


def _subgoal_targets(ctx: OptimizeContext, n: int) -> NDArray[np.float64]:
    """Per-step sub-goal targets as an (n, 2) array."""
    if ctx.subgoal_schedule is not None:
        sched = np.asarray(ctx.subgoal_schedule, dtype=np.float64)
        if sched.shape[0] == n:
            return sched
        # resample the schedule onto n steps (clamp to the last entry)
        idx = np.minimum(
            (np.arange(n) * sched.shape[0]) // max(n, 1), sched.shape[0] - 1
        )
        return sched[idx]
    assert ctx.subgoal is not None
    return np.broadcast_to(np.asarray(ctx.subgoal, dtype=np.float64), (n, 2))


def running_cost(s: Sequence[float], u: Sequence[float], ctx: OptimizeContext) -> float:
    """Weighted per-step cost at state ``s`` under control ``u``."""
    wc = ctx.params.effective()[0]
    pos = np.asarray(s, dtype=np.float64)[:2].reshape(1, 2)
    total = float(_stage_costs(pos, ctx, terminal=False)[0])
    if wc > 0.0:
        total += wc * cost_control(u)
    return total


def terminal_cost(s: Sequence[float], ctx: OptimizeContext) -> float:
    """Weighted terminal cost (goal + obstacle only)."""
    pos = np.asarray(s, dtype=np.float64)[:2].reshape(1, 2)
    return float(_stage_costs(pos, ctx, terminal=True)[0])


def trajectory_cost(states: NDArray[np.float64], controls: NDArray[np.float64], ctx: OptimizeContext) -> float:
    """Total cost: running costs over N steps plus the terminal cost."""
    wc = ctx.params.effective()[0]
    run = _stage_costs(states[:-1, :2], ctx, terminal=False)
    total = float(np.sum(run)) + float(_stage_costs(states[-1:, :2], ctx, terminal=True)[0])
    if wc > 0.0:
        total += wc * float(np.sum(controls * controls))
    return total


def _field_gradients(df: DistanceField, pos: NDArray[np.float64]) -> NDArray[np.float64]:
    """Central-difference gradient of the interpolated distance field."""
    n = pos.shape[0]
    probes = np.empty((4 * n, 2))
    probes[0::4] = pos + (GRAD_H, 0.0)
    probes[1::4] = pos - (GRAD_H, 0.0)
    probes[2::4] = pos + (0.0, GRAD_H)
    probes[3::4] = pos - (0.0, GRAD_H)
    vals = df.sample_many(probes)
    grad = np.empty((n, 2))
    grad[:, 0] = (vals[0::4] - vals[1::4]) / (2.0 * GRAD_H)
    grad[:, 1] = (vals[2::4] - vals[3::4]) / (2.0 * GRAD_H)
    return grad


def _point_term_derivs(
    pos: NDArray[np.float64], target: Sequence[float], weight: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Gradient and exact Hessian of weight * smooth_norm(pos - target)."""
    r = pos - np.asarray(target)
    f = _smooth_norm(r)
    grad = weight * r / f[:, None]
    eye = np.eye(2)
    hess = weight * (
        eye[None, :, :] / f[:, None, None]
        - r[:, :, None] * r[:, None, :] / (f**3)[:, None, None]
    )
    return grad, hess


def _batch_cost_derivs(
    states: NDArray[np.float64],
    controls: NDArray[np.float64],
    ctx: OptimizeContext,
) -> tuple[NDArray, NDArray, NDArray, NDArray, NDArray, NDArray, NDArray]:
    """Derivatives of the running costs over all N steps plus terminal.

    Returns (l_x, l_u, l_xx, l_uu, l_ux, lf_x, lf_xx) where the running
    arrays are batched over N and the terminal ones are single matrices.
    """
    wc, wg, wo, ws = ctx.params.effective()
    n = controls.shape[0]
    pos_all = states[:, :2]

    gpos = np.zeros((n + 1, 2))
    hpos = np.zeros((n + 1, 2, 2))
    if wg > 0.0:
        g, hss = _point_term_derivs(pos_all, ctx.goal, wg)
        gpos += g
        hpos += hss
    if wo > 0.0:
        d_infl = ctx.params.obstacle_influence
        dist = ctx.dist_field.sample_many(pos_all)
        active = dist < d_infl
        if active.any():
            gd = _field_gradients(ctx.dist_field, pos_all[active])
            gpos[active] += -wo * gd
            # PSD outer-product stand-in for the hinge curvature
            hpos[active] += (wo / d_infl) * gd[:, :, None] * gd[:, None, :]
    l_x = np.zeros((n, 3))
    l_xx = np.zeros((n, 3, 3))
    l_x[:, :2] = gpos[:n]
    l_xx[:, :2, :2] = hpos[:n]
    if ctx.subgoal_active:
        g, hss = _point_term_derivs(pos_all[:n], _subgoal_targets(ctx, n), ws)
        l_x[:, :2] += g
        l_xx[:, :2, :2] += hss

    l_u = 2.0 * wc * controls
    l_uu = np.tile(2.0 * wc * np.eye(2), (n, 1, 1))
    l_ux = np.zeros((n, 2, 3))

    lf_x = np.zeros(3)
    lf_xx = np.zeros((3, 3))
    lf_x[:2] = gpos[n]
    lf_xx[:2, :2] = hpos[n]
    return l_x, l_u, l_xx, l_uu, l_ux, lf_x, lf_xx


def cost_derivatives(
    s: Sequence[float],
    u: Sequence[float],
    ctx: OptimizeContext,
) -> tuple[NDArray, NDArray, NDArray, NDArray, NDArray]:
    """First/second derivatives of the running cost at a single (s, u)."""
    states = np.vstack([np.asarray(s, dtype=np.float64)] * 2)
    controls = np.asarray(u, dtype=np.float64).reshape(1, 2)
    l_x, l_u, l_xx, l_uu, l_ux, _, _ = _batch_cost_derivs(states, controls, ctx)
    return l_x[0], l_u[0], l_xx[0], l_uu[0], l_ux[0]


def _kernel_args(ctx: OptimizeContext, n: int) -> tuple:
    df = ctx.dist_field
    wc, wg, wo, ws = ctx.params.effective()
    if ctx.subgoal_active:
        targets = np.ascontiguousarray(_subgoal_targets(ctx, n))
    else:
        targets = np.zeros((n, 2))
    return (
        df.dist,
        df.resolution,
        df.origin[0],
        df.origin[1],
        df.width_cells,
        df.height_cells,
        df.sentinel,
        float(ctx.goal[0]),
        float(ctx.goal[1]),
        np.ascontiguousarray(targets[:, 0]),
        np.ascontiguousarray(targets[:, 1]),
        wc,
        wg,
        wo,
        ws,
        ctx.params.obstacle_influence,
        ctx.subgoal_active,
    )


def optimize(
    s0: Sequence[float],
    u_init: NDArray[np.float64],
    ctx: OptimizeContext,
    max_iters: int = 50,
    dt: float = DEFAULT_DT,
) -> OptimizeReport:
    """iLQR iterations with Levenberg regularization and backtracking
    line search. Accepted iterations strictly decrease the total cost.
    """
    u_init = np.asarray(u_init, dtype=np.float64)
    if u_init.ndim != 2 or u_init.shape[0] == 0:
        raise ValueError("u_init must be a non-empty (N, 2) array")
    s0 = np.asarray(
        s0.as_array() if hasattr(s0, "as_array") else s0, dtype=np.float64
    )
    n = u_init.shape[0]
    kargs = _kernel_args(ctx, n)
    zero_k = np.zeros((n, 2))
    zero_K = np.zeros((n, 2, 3))
    init_states = np.zeros((n + 1, 3))
    init_states[0] = s0
    states, controls, cost = _kernels.forward_pass(
        init_states, u_init, zero_k, zero_K, 0.0, dt, *kargs
    )
    if not np.isfinite(cost):
        raise OptimizeAbort("initial rollout cost is non-finite")

    mu = MU_INIT
    report = OptimizeReport(
        trajectory=Trajectory(states, controls, dt), costs=[float(cost)]
    )
    for _ in range(max_iters):
        report.iterations += 1
        l_x, l_u, l_xx, l_uu, l_ux, lf_x, lf_xx = _batch_cost_derivs(states, controls, ctx)
        A, B = linearize_many(states, controls, dt)

        # backward pass, retrying with heavier regularization on failure
        while True:
            ok, k_ff, K_fb = _kernels.backward_pass(
                A, B, l_x, l_u, l_xx, l_uu, l_ux, lf_x, lf_xx, mu
            )
            if ok:
                break
            mu *= 10.0
            if mu > MU_MAX:
                raise OptimizeAbort("backward pass not positive definite at mu cap")

        report.mu_trace.append(mu)
        improved = False
        for alpha in LINE_SEARCH_ALPHAS:
            cand_states, cand_controls, cand_cost = _kernels.forward_pass(
                states, controls, k_ff, K_fb, alpha, dt, *kargs
            )
            if np.isfinite(cand_cost) and cand_cost < cost:
                states, controls = cand_states, cand_controls
                prev_cost, cost = cost, cand_cost
                improved = True
                break
        if improved:
            report.accepted += 1
            report.costs.append(cost)
            mu = max(mu / 2.0, MU_INIT)
            if (prev_cost - cost) < REL_IMPROVEMENT_TOL * max(abs(prev_cost), 1.0):
                report.converged = True
                break
        else:
            report.rejected += 1
            mu *= 10.0
            if mu > MU_MAX:
                # no direction improves even at maximum damping: converged
                report.converged = True
                break

    report.trajectory = Trajectory(states, controls, dt)
    return report
