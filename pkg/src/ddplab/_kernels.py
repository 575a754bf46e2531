"""Numba-compiled inner loops for the optimizer.

These mirror the pure-Python definitions in :mod:`ddplab.dynamics` and
:mod:`ddplab.ddp` operation for operation so results are bit-identical;
they exist only because the closed-loop benchmark runs hundreds of
optimizer iterations per simulated second on a single core.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

V_MAX = 1.5
OMEGA_MAX = 0.5
NORM_EPS = 1e-6


@njit(cache=True)
def _clamp(v, lo, hi):
    return min(max(v, lo), hi)


@njit(cache=True)
def _norm_angle(a):
    while a > math.pi:
        a -= 2.0 * math.pi
    while a <= -math.pi:
        a += 2.0 * math.pi
    return a


@njit(cache=True)
def bilinear(dist, res, ox, oy, w, h, sentinel, px, py):
    u = (px - ox) / res - 0.5
    v = (py - oy) / res - 0.5
    if u < -0.5 or v < -0.5 or u > w - 0.5 or v > h - 0.5:
        return sentinel
    u = _clamp(u, 0.0, w - 1.0)
    v = _clamp(v, 0.0, h - 1.0)
    i0 = min(int(u), w - 2) if w > 1 else 0
    j0 = min(int(v), h - 2) if h > 1 else 0
    fu = u - i0
    fv = v - j0
    i1 = min(i0 + 1, w - 1)
    j1 = min(j0 + 1, h - 1)
    return (
        dist[j0, i0] * (1 - fu) * (1 - fv)
        + dist[j0, i1] * fu * (1 - fv)
        + dist[j1, i0] * (1 - fu) * fv
        + dist[j1, i1] * fu * fv
    )


@njit(cache=True)
def stage_cost(
    px, py, dist, res, ox, oy, w, h, sentinel,
    gx, gy, sx, sy, wg, wo, ws, d_infl, use_subgoal, terminal,
):  # noqa: D103 - scalar core shared by forward_pass
    total = 0.0
    if wg > 0.0:
        rx = px - gx
        ry = py - gy
        total += wg * math.sqrt(rx * rx + ry * ry + NORM_EPS * NORM_EPS)
    if wo > 0.0:
        dd = bilinear(dist, res, ox, oy, w, h, sentinel, px, py)
        if dd < d_infl:
            total += wo * (d_infl - dd)
    if use_subgoal and not terminal:
        rx = px - sx
        ry = py - sy
        total += ws * math.sqrt(rx * rx + ry * ry + NORM_EPS * NORM_EPS)
    return total


@njit(cache=True)
def forward_pass(
    states, controls, k_ff, K_fb, alpha, dt,
    dist, res, ox, oy, w, h, sentinel,
    gx, gy, sxs, sys, wc, wg, wo, ws, d_infl, use_subgoal,
):
    """Controlled rollout plus total cost in one pass.

    Returns (new_states, new_controls, cost); cost is NaN when the
    rollout leaves the finite range.
    """
    n = controls.shape[0]
    ns = np.empty_like(states)
    nu = np.empty_like(controls)
    ns[0] = states[0]
    cost = 0.0
    for i in range(n):
        dx0 = ns[i, 0] - states[i, 0]
        dx1 = ns[i, 1] - states[i, 1]
        dx2 = ns[i, 2] - states[i, 2]
        for j in range(2):
            nu[i, j] = (
                controls[i, j]
                + alpha * k_ff[i, j]
                + K_fb[i, j, 0] * dx0
                + K_fb[i, j, 1] * dx1
                + K_fb[i, j, 2] * dx2
            )
        v = _clamp(nu[i, 0], -V_MAX, V_MAX)
        om = _clamp(nu[i, 1], -OMEGA_MAX, OMEGA_MAX)
        th = ns[i, 2]
        ns[i + 1, 0] = ns[i, 0] + v * math.cos(th) * dt
        ns[i + 1, 1] = ns[i, 1] + v * math.sin(th) * dt
        ns[i + 1, 2] = _norm_angle(th + om * dt)
        if not (math.isfinite(ns[i + 1, 0]) and math.isfinite(ns[i + 1, 1])):
            return ns, nu, np.nan
        cost += stage_cost(
            ns[i, 0], ns[i, 1], dist, res, ox, oy, w, h, sentinel,
            gx, gy, sxs[i], sys[i], wg, wo, ws, d_infl, use_subgoal, False,
        )
        cost += wc * (nu[i, 0] * nu[i, 0] + nu[i, 1] * nu[i, 1])
    cost += stage_cost(
        ns[n, 0], ns[n, 1], dist, res, ox, oy, w, h, sentinel,
        gx, gy, 0.0, 0.0, wg, wo, ws, d_infl, use_subgoal, True,
    )
    return ns, nu, cost


@njit(cache=True)
def backward_pass(A, B, l_x, l_u, l_xx, l_uu, l_ux, lf_x, lf_xx, mu):
    """Gain computation; returns (ok, k_ff, K_fb)."""
    n = A.shape[0]
    k_ff = np.zeros((n, 2))
    K_fb = np.zeros((n, 2, 3))
    V_x = lf_x.copy()
    V_xx = lf_xx.copy()
    for i in range(n - 1, -1, -1):
        Ai = A[i]
        Bi = B[i]
        Q_x = l_x[i] + Ai.T @ V_x
        Q_u = l_u[i] + Bi.T @ V_x
        Q_xx = l_xx[i] + Ai.T @ V_xx @ Ai
        Q_uu = l_uu[i] + Bi.T @ V_xx @ Bi
        Q_ux = l_ux[i] + Bi.T @ V_xx @ Ai
        a = Q_uu[0, 0] + mu
        b = Q_uu[0, 1]
        c = Q_uu[1, 1] + mu
        det = a * c - b * b
        if a <= 0.0 or det <= 0.0:
            return False, k_ff, K_fb
        inv00 = c / det
        inv01 = -b / det
        inv11 = a / det
        k_ff[i, 0] = -(inv00 * Q_u[0] + inv01 * Q_u[1])
        k_ff[i, 1] = -(inv01 * Q_u[0] + inv11 * Q_u[1])
        for j in range(3):
            K_fb[i, 0, j] = -(inv00 * Q_ux[0, j] + inv01 * Q_ux[1, j])
            K_fb[i, 1, j] = -(inv01 * Q_ux[0, j] + inv11 * Q_ux[1, j])
        Ki = K_fb[i]
        ki = k_ff[i]
        V_x = Q_x + Ki.T @ (Q_uu @ ki) + Ki.T @ Q_u + Q_ux.T @ ki
        V_xx = Q_xx + Ki.T @ Q_uu @ Ki + Ki.T @ Q_ux + Q_ux.T @ Ki
        V_xx = 0.5 * (V_xx + V_xx.T)
    return True, k_ff, K_fb
