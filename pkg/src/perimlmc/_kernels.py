"""Compiled inner loops of the explicit peridynamic solver."""

import math

import numpy as np
from numba import njit

STOP_MAX_STEPS = 0
STOP_DROP = 1
STOP_DIVERGED = 2


@njit(cache=True)
def damage_value(sm, s0, sc, k, alpha, em1k):
    if sm <= s0:
        return 0.0
    if sm >= sc:
        return 1.0
    t = (sm - s0) / (sc - s0)
    shape = 1.0 - math.expm1(-k * t) / em1k + alpha * (1.0 - t)
    return 1.0 - (s0 / sm) * shape / (1.0 + alpha)


@njit(cache=True)
def bond_forces(X, u, bi, bj, xi, stiff, s0, sc, k, alpha, smax, F, update_history):
    """Accumulate force densities into ``F``; ``stiff = c * lambda * V_j``."""
    em1k = math.expm1(-k)
    F[:, :] = 0.0
    for b in range(bi.shape[0]):
        i = bi[b]
        j = bj[b]
        ex = X[j, 0] - X[i, 0] + u[j, 0] - u[i, 0]
        ey = X[j, 1] - X[i, 1] + u[j, 1] - u[i, 1]
        length = math.sqrt(ex * ex + ey * ey)
        s = (length - xi[b]) / xi[b]
        sm = smax[b]
        if s > sm:
            sm = s
            if update_history:
                smax[b] = s
        if s <= 0.0:
            f = stiff[b] * s
        else:
            d = damage_value(sm, s0[b], sc[b], k, alpha, em1k)
            f = stiff[b] * (1.0 - d) * s
        f /= length
        F[i, 0] += f * ex
        F[i, 1] += f * ey
        F[j, 0] -= f * ex
        F[j, 1] -= f * ey


@njit(cache=True)
def integrate(
    X, u, v, bi, bj, xi, stiff, s0, sc, k, alpha, smax,
    rho, eta, dt, punch, sup_a, sup_b, sup_wa, sup_wb,
    u_start, v_load, t_ramp, max_steps, drop_ratio, min_drop_step, volume, probe,
    record_every, rec_t, rec_u, rec_r, rec_ke, rec_w, rec_p,
):
    """Damped central-difference loop under a prescribed punch velocity.

    Returns ``(steps, n_records, peak, stop_code)``.
    """
    n = X.shape[0]
    F = np.zeros((n, 2))
    c1 = 1.0 - 0.5 * eta * dt
    c2 = 1.0 / (1.0 + 0.5 * eta * dt)
    prev_r = 0.0
    prev_disp = u_start
    # the starting state is taken to be in equilibrium: seed the reaction
    # so the stored elastic work is counted
    n_rec = 0
    stop = STOP_MAX_STEPS
    step = 0
    n_sup = sup_a.shape[0]
    n_pun = punch.shape[0]
    bond_forces(X, u, bi, bj, xi, stiff, s0, sc, k, alpha, smax, F, True)
    for p in range(n_pun):
        prev_r += F[punch[p], 1]
    prev_r *= volume
    work = 0.5 * prev_r * u_start
    peak = max(prev_r, 0.0)
    while step < max_steps:
        step += 1
        t = step * dt
        if t < t_ramp:
            vel = v_load * t / t_ramp
            disp = u_start + 0.5 * v_load * t * t / t_ramp
        else:
            vel = v_load
            disp = u_start + v_load * (t - 0.5 * t_ramp)
        for i in range(n):
            v[i, 0] = (c1 * v[i, 0] + dt * F[i, 0] / rho) * c2
            v[i, 1] = (c1 * v[i, 1] + dt * F[i, 1] / rho) * c2
        for p in range(n_pun):
            v[punch[p], 1] = -vel
        for q in range(n_sup):
            a = sup_a[q]
            b = sup_b[q]
            wa = sup_wa[q]
            if b < 0:
                v[a, 1] = 0.0
            else:
                wb = sup_wb[q]
                g = (wa * v[a, 1] + wb * v[b, 1]) / (wa * wa + wb * wb)
                v[a, 1] -= wa * g
                v[b, 1] -= wb * g
        for i in range(n):
            u[i, 0] += dt * v[i, 0]
            u[i, 1] += dt * v[i, 1]
        for p in range(n_pun):
            u[punch[p], 1] = -disp
        for q in range(n_sup):
            a = sup_a[q]
            b = sup_b[q]
            wa = sup_wa[q]
            if b < 0:
                u[a, 1] = 0.0
            else:
                wb = sup_wb[q]
                g = (wa * u[a, 1] + wb * u[b, 1]) / (wa * wa + wb * wb)
                u[a, 1] -= wa * g
                u[b, 1] -= wb * g
        bond_forces(X, u, bi, bj, xi, stiff, s0, sc, k, alpha, smax, F, True)
        r = 0.0
        for p in range(n_pun):
            r += F[punch[p], 1]
        r *= volume
        work += 0.5 * (r + prev_r) * (disp - prev_disp)
        prev_r = r
        prev_disp = disp
        if r > peak:
            peak = r
        if step % record_every == 0 or step == max_steps:
            ke = 0.0
            umax = 0.0
            for i in range(n):
                ke += v[i, 0] * v[i, 0] + v[i, 1] * v[i, 1]
                au = abs(u[i, 0]) + abs(u[i, 1])
                if au > umax or au != au:
                    umax = au
            ke *= 0.5 * rho * volume
            if n_rec < rec_t.shape[0]:
                rec_t[n_rec] = t
                rec_u[n_rec] = disp
                rec_r[n_rec] = r
                rec_ke[n_rec] = ke
                rec_w[n_rec] = work
                pv = 0.0
                for p in range(probe.shape[0]):
                    pv -= u[probe[p], 1]
                rec_p[n_rec] = pv / probe.shape[0]
                n_rec += 1
            # with damping the kinetic energy can never exceed the external work
            if not (umax < 1e3 * (disp + 1e-6)) or ke > work:
                stop = STOP_DIVERGED
                break
        if step >= min_drop_step and peak > 0.0 and r < drop_ratio * peak:
            ke = 0.0
            for i in range(n):
                ke += v[i, 0] * v[i, 0] + v[i, 1] * v[i, 1]
            ke *= 0.5 * rho * volume
            stop = STOP_DIVERGED if (ke > work or not (ke == ke)) else STOP_DROP
            break
    return step, n_rec, peak, stop
